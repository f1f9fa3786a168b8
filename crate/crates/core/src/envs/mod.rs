//! Environment abstraction: individual kernels, mean-field rewards, horizons,
//! initial-distribution samplers and fixed test suites.

mod catalog;
mod grid;
mod toy;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{DecisionRule, Distribution, MeanFieldState, SIMPLEX_TOL};

pub use catalog::{
    build_env, build_four_room, build_grid1d, build_planning2d, build_predator_prey4, planning_target, EnvConfig,
    ENV_NAMES, FOUR_ROOM_DOORS, GRID1D_C1, GRID1D_C2,
};
pub use grid::{GridGeometry, MOVES_2D};
pub use toy::{convex_target, decoupled_toy, DECOUPLED_TARGETS};

/// Individual transition kernel `(i, x, a, s̄) ↦ p(·|x, a, s̄)` as sparse `(state, prob)` pairs.
pub type KernelFn = dyn Fn(usize, usize, usize, &MeanFieldState) -> Vec<(usize, f64)> + Send + Sync;
/// Population-level reward `(i, s̄, āⁱ) ↦ r̄ⁱ`.
pub type MeanFieldRewardFn = dyn Fn(usize, &MeanFieldState, &DecisionRule) -> f64 + Send + Sync;
/// Individual reward `(i, x, a, s̄) ↦ rⁱ(x, a, s̄)`, aggregated by the population average.
pub type IndividualRewardFn = dyn Fn(usize, usize, usize, &MeanFieldState) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum RewardModel {
    MeanField(Arc<MeanFieldRewardFn>),
    Individual(Arc<IndividualRewardFn>),
}

/// How initial mean-field states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Uniform(0,1) weight per navigable state, normalized.
    Training,
    /// All mass on one uniformly chosen navigable state.
    OneHot,
}

impl FromStr for SamplingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(Self::Training),
            "one_hot" => Ok(Self::OneHot),
            other => Err(Error::InvalidArgument(format!("unknown sampling mode `{other}`"))),
        }
    }
}

/// Fixed initial conditions used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub entries: Vec<MeanFieldState>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

type KernelTable = Vec<Vec<Vec<(usize, f64)>>>;

/// A mean-field type game environment. Immutable and cheap to clone.
#[derive(Clone)]
pub struct EnvSpec {
    name: String,
    state_sizes: Vec<usize>,
    action_sizes: Vec<usize>,
    horizon: usize,
    gamma: f64,
    forbidden: Vec<Vec<bool>>,
    geometry: Option<GridGeometry>,
    kernel: Arc<KernelFn>,
    kernel_table: Option<Arc<KernelTable>>,
    reward: RewardModel,
    training_mode: SamplingMode,
    tests: Vec<MeanFieldState>,
    stay_actions: Vec<usize>,
}

impl fmt::Debug for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvSpec")
            .field("name", &self.name)
            .field("state_sizes", &self.state_sizes)
            .field("action_sizes", &self.action_sizes)
            .field("horizon", &self.horizon)
            .field("gamma", &self.gamma)
            .finish_non_exhaustive()
    }
}

impl EnvSpec {
    pub fn builder(name: impl Into<String>, state_sizes: Vec<usize>, action_sizes: Vec<usize>) -> EnvBuilder {
        let m = state_sizes.len();
        EnvBuilder {
            name: name.into(),
            forbidden: state_sizes.iter().map(|&n| vec![false; n]).collect(),
            state_sizes,
            action_sizes,
            horizon: 1,
            gamma: 0.9,
            geometry: None,
            kernel: None,
            mu_independent: false,
            reward: None,
            training_mode: SamplingMode::Training,
            tests: Vec::new(),
            stay_actions: vec![0; m],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_coalitions(&self) -> usize {
        self.state_sizes.len()
    }

    pub fn state_sizes(&self) -> &[usize] {
        &self.state_sizes
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    pub fn num_states(&self, i: usize) -> usize {
        self.state_sizes[i]
    }

    pub fn num_actions(&self, i: usize) -> usize {
        self.action_sizes[i]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn forbidden(&self, i: usize) -> &[bool] {
        &self.forbidden[i]
    }

    pub fn geometry(&self) -> Option<&GridGeometry> {
        self.geometry.as_ref()
    }

    pub fn reward_model(&self) -> &RewardModel {
        &self.reward
    }

    pub fn training_mode(&self) -> SamplingMode {
        self.training_mode
    }

    /// True when the kernel ignores the mean field (and is therefore tabulated).
    pub fn is_mu_independent(&self) -> bool {
        self.kernel_table.is_some()
    }

    pub fn kernel(&self, i: usize, x: usize, a: usize, state: &MeanFieldState) -> Cow<'_, [(usize, f64)]> {
        match &self.kernel_table {
            Some(t) => Cow::Borrowed(&t[i][x * self.action_sizes[i] + a]),
            None => Cow::Owned((self.kernel)(i, x, a, state)),
        }
    }

    /// Index of the "stay" action of coalition `i` (0 when the environment has none).
    pub fn stay_action(&self, i: usize) -> usize {
        self.stay_actions[i]
    }

    /// The pure "everybody stays" rule for every coalition.
    pub fn stay_rules(&self) -> Vec<DecisionRule> {
        (0..self.num_coalitions())
            .map(|i| DecisionRule::pure(&vec![self.stay_actions[i]; self.state_sizes[i]], self.action_sizes[i]))
            .collect()
    }

    pub fn test_set(&self) -> TestSet {
        TestSet { entries: self.tests.clone() }
    }

    /// Navigable (non-forbidden) states of coalition `i`.
    pub fn navigable(&self, i: usize) -> Vec<usize> {
        (0..self.state_sizes[i]).filter(|&x| !self.forbidden[i][x]).collect()
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, mode: SamplingMode, rng: &mut R) -> Result<MeanFieldState> {
        let mut out = Vec::with_capacity(self.num_coalitions());
        for i in 0..self.num_coalitions() {
            let open = self.navigable(i);
            let mut v = vec![0.0; self.state_sizes[i]];
            match mode {
                SamplingMode::Training => loop {
                    for &x in &open {
                        v[x] = rng.random::<f64>();
                    }
                    if v.iter().sum::<f64>() > 0.0 {
                        break;
                    }
                },
                SamplingMode::OneHot => {
                    let x = open[rng.random_range(0..open.len())];
                    v[x] = 1.0;
                }
            }
            out.push(Distribution::from_weights(v)?);
        }
        Ok(MeanFieldState::new(out))
    }

    /// Draws from the environment's own training sampler.
    pub fn sample_training<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MeanFieldState> {
        self.sample_initial(self.training_mode, rng)
    }

    /// Checks shape, simplex membership and the forbidden mask.
    pub fn validate_state(&self, s: &MeanFieldState) -> Result<()> {
        s.check_shape(&self.state_sizes)?;
        for (i, d) in s.coalitions().iter().enumerate() {
            Distribution::new(d.probs().to_vec())?;
            for (x, &p) in d.probs().iter().enumerate() {
                if self.forbidden[i][x] && p > SIMPLEX_TOL {
                    return Err(Error::InvalidDistribution(format!(
                        "coalition {i} places mass {p} on forbidden state {x}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same game with coalition `i`'s actions relabeled: new action `b` is old action `perm[b]`.
    pub fn relabel_actions(&self, i: usize, perm: &[usize]) -> Result<EnvSpec> {
        let na = self.action_sizes[i];
        let mut seen = vec![false; na];
        if perm.len() != na || perm.iter().any(|&a| a >= na || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidArgument("relabeling must be a permutation of the actions".into()));
        }
        let perm: Arc<Vec<usize>> = Arc::new(perm.to_vec());
        let mut inverse = vec![0; na];
        for (b, &a) in perm.iter().enumerate() {
            inverse[a] = b;
        }
        let kernel = {
            let inner = self.kernel.clone();
            let perm = perm.clone();
            Arc::new(move |j: usize, x: usize, a: usize, s: &MeanFieldState| {
                inner(j, x, if j == i { perm[a] } else { a }, s)
            }) as Arc<KernelFn>
        };
        let kernel_table = self.kernel_table.as_ref().map(|t| {
            let mut t = (**t).clone();
            let ns = self.state_sizes[i];
            let old = t[i].clone();
            for x in 0..ns {
                for b in 0..na {
                    t[i][x * na + b] = old[x * na + perm[b]].clone();
                }
            }
            Arc::new(t)
        });
        let reward = match &self.reward {
            RewardModel::MeanField(f) => {
                let f = f.clone();
                // new rule column b is old column perm[b]; undo with the inverse
                let inverse = inverse.clone();
                RewardModel::MeanField(Arc::new(move |j: usize, s: &MeanFieldState, rule: &DecisionRule| {
                    if j == i {
                        f(j, s, &rule.permute_actions(&inverse))
                    } else {
                        f(j, s, rule)
                    }
                }))
            }
            RewardModel::Individual(r) => {
                let r = r.clone();
                let perm = perm.clone();
                RewardModel::Individual(Arc::new(move |j: usize, x: usize, a: usize, s: &MeanFieldState| {
                    r(j, x, if j == i { perm[a] } else { a }, s)
                }))
            }
        };
        let mut stay_actions = self.stay_actions.clone();
        stay_actions[i] = inverse[self.stay_actions[i]];
        Ok(EnvSpec {
            name: format!("{}[relabeled {i}]", self.name),
            kernel,
            kernel_table,
            reward,
            stay_actions,
            ..self.clone()
        })
    }
}

/// Incremental construction of an [`EnvSpec`].
pub struct EnvBuilder {
    name: String,
    state_sizes: Vec<usize>,
    action_sizes: Vec<usize>,
    horizon: usize,
    gamma: f64,
    forbidden: Vec<Vec<bool>>,
    geometry: Option<GridGeometry>,
    kernel: Option<Arc<KernelFn>>,
    mu_independent: bool,
    reward: Option<RewardModel>,
    training_mode: SamplingMode,
    tests: Vec<MeanFieldState>,
    stay_actions: Vec<usize>,
}

impl EnvBuilder {
    pub fn horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn forbidden(mut self, i: usize, mask: Vec<bool>) -> Self {
        self.forbidden[i] = mask;
        self
    }

    pub fn geometry(mut self, geometry: GridGeometry) -> Self {
        self.geometry = Some(geometry);
        self
    }

    /// Kernel; `mu_independent` kernels are tabulated and validated once at build time.
    pub fn kernel<F>(mut self, mu_independent: bool, f: F) -> Self
    where
        F: Fn(usize, usize, usize, &MeanFieldState) -> Vec<(usize, f64)> + Send + Sync + 'static,
    {
        self.kernel = Some(Arc::new(f));
        self.mu_independent = mu_independent;
        self
    }

    pub fn mean_field_reward<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, &MeanFieldState, &DecisionRule) -> f64 + Send + Sync + 'static,
    {
        self.reward = Some(RewardModel::MeanField(Arc::new(f)));
        self
    }

    pub fn individual_reward<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, usize, usize, &MeanFieldState) -> f64 + Send + Sync + 'static,
    {
        self.reward = Some(RewardModel::Individual(Arc::new(f)));
        self
    }

    pub fn training_mode(mut self, mode: SamplingMode) -> Self {
        self.training_mode = mode;
        self
    }

    pub fn test_set(mut self, tests: Vec<MeanFieldState>) -> Self {
        self.tests = tests;
        self
    }

    pub fn stay_action(mut self, i: usize, a: usize) -> Self {
        self.stay_actions[i] = a;
        self
    }

    /// Same stay action for all coalitions.
    pub fn stay_action_all(mut self, a: usize) -> Self {
        self.stay_actions.iter_mut().for_each(|s| *s = a);
        self
    }

    pub fn build(self) -> Result<EnvSpec> {
        let m = self.state_sizes.len();
        if m == 0 || self.action_sizes.len() != m {
            return Err(Error::InvalidArgument("need one action space per coalition".into()));
        }
        if self.state_sizes.contains(&0) || self.action_sizes.contains(&0) {
            return Err(Error::InvalidArgument("state and action spaces must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("discount {} outside [0, 1)", self.gamma)));
        }
        for (i, mask) in self.forbidden.iter().enumerate() {
            if mask.len() != self.state_sizes[i] || mask.iter().all(|&f| f) {
                return Err(Error::InvalidArgument(format!("bad forbidden mask for coalition {i}")));
            }
        }
        for (i, &a) in self.stay_actions.iter().enumerate() {
            if a >= self.action_sizes[i] {
                return Err(Error::InvalidArgument(format!("stay action {a} out of range")));
            }
        }
        let kernel = self.kernel.ok_or_else(|| Error::InvalidArgument("environment has no kernel".into()))?;
        let reward = self.reward.ok_or_else(|| Error::InvalidArgument("environment has no reward".into()))?;
        let kernel_table = if self.mu_independent {
            let probe = MeanFieldState::new(self.state_sizes.iter().map(|&n| Distribution::uniform(n)).collect());
            let mut table = Vec::with_capacity(m);
            for i in 0..m {
                let mut rows = Vec::with_capacity(self.state_sizes[i] * self.action_sizes[i]);
                for x in 0..self.state_sizes[i] {
                    for a in 0..self.action_sizes[i] {
                        let row = merge_entries(kernel(i, x, a, &probe));
                        check_kernel_row(&row, &self.forbidden[i], self.forbidden[i][x], self.state_sizes[i])?;
                        rows.push(row);
                    }
                }
                table.push(rows);
            }
            Some(Arc::new(table))
        } else {
            None
        };
        let env = EnvSpec {
            name: self.name,
            state_sizes: self.state_sizes,
            action_sizes: self.action_sizes,
            horizon: self.horizon,
            gamma: self.gamma,
            forbidden: self.forbidden,
            geometry: self.geometry,
            kernel,
            kernel_table,
            reward,
            training_mode: self.training_mode,
            tests: self.tests,
            stay_actions: self.stay_actions,
        };
        for t in &env.tests {
            env.validate_state(t)?;
        }
        Ok(env)
    }
}

fn merge_entries(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (y, p) in row {
        if p == 0.0 {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.0 == y => last.1 += p,
            _ => out.push((y, p)),
        }
    }
    out
}

fn check_kernel_row(row: &[(usize, f64)], forbidden: &[bool], from_forbidden: bool, n: usize) -> Result<()> {
    let mut sum = 0.0;
    for &(y, p) in row {
        if y >= n || !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!("kernel entry ({y}, {p}) invalid")));
        }
        if forbidden[y] && !from_forbidden {
            return Err(Error::InvalidDistribution(format!("kernel moves mass onto forbidden state {y}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution(format!("kernel row sums to {sum}")));
    }
    Ok(())
}
