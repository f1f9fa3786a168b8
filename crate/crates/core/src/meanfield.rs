//! Distributions over finite spaces, mean-field states and decision rules,
//! together with the exact population-level reward and transition maps.
//!
//! Coalitions, states and actions are 0-indexed. A [`DecisionRule`] is stored
//! row-major: entry `(x, a)` lives at `x * n_actions + a`.

use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, RewardModel};
use crate::error::{Error, Result};

/// Absolute tolerance for every simplex membership check.
pub const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what}: empty support")));
    }
    let mut sum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::InvalidDistribution(format!("{what}: entry {k} is {p}")));
        }
        if p < 0.0 {
            return Err(Error::InvalidDistribution(format!("{what}: entry {k} is negative ({p})")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution(format!("{what}: entries sum to {sum}")));
    }
    Ok(())
}

/// Clamps round-off negatives to zero and rescales to unit mass.
fn renormalize_in_place(v: &mut [f64]) {
    let mut sum = 0.0;
    for p in v.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
        sum += *p;
    }
    if sum > 0.0 {
        for p in v.iter_mut() {
            *p /= sum;
        }
    }
}

/// A probability vector over a finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs, "distribution")?;
        Ok(Self(probs))
    }

    /// Normalizes non-negative weights with a positive sum.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || sum <= 0.0 {
            return Err(Error::InvalidDistribution("weights must be finite, non-negative and not all zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self(weights))
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        assert!(at < n, "point mass index {at} outside space of size {n}");
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        Self(v)
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        Self(vec![1.0 / n as f64; n])
    }

    /// Renormalizes a vector that is a distribution up to floating-point drift.
    pub(crate) fn from_drifted(mut v: Vec<f64>) -> Self {
        renormalize_in_place(&mut v);
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Distribution) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Distribution::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Vec<f64> {
        d.0
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Σ_x |a(x) − b(x)|.
pub fn l1_distance(a: &Distribution, b: &Distribution) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { what: "l1_distance", expected: a.len(), got: b.len() });
    }
    Ok(a.0.iter().zip(&b.0).map(|(p, q)| (p - q).abs()).sum())
}

/// The joint population state: one distribution per coalition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState(Vec<Distribution>);

impl MeanFieldState {
    pub fn new(per_coalition: Vec<Distribution>) -> Self {
        Self(per_coalition)
    }

    pub fn from_vecs(per_coalition: Vec<Vec<f64>>) -> Result<Self> {
        per_coalition.into_iter().map(Distribution::new).collect::<Result<Vec<_>>>().map(Self)
    }

    pub fn num_coalitions(&self) -> usize {
        self.0.len()
    }

    pub fn coalition(&self, i: usize) -> &Distribution {
        &self.0[i]
    }

    pub fn coalitions(&self) -> &[Distribution] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Distribution> {
        self.0
    }

    /// Concatenation of all coalition distributions.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|d| d.0.iter().copied()).collect()
    }

    pub(crate) fn check_shape(&self, sizes: &[usize]) -> Result<()> {
        if self.0.len() != sizes.len() {
            return Err(Error::DimensionMismatch {
                what: "mean-field state coalitions",
                expected: sizes.len(),
                got: self.0.len(),
            });
        }
        for (d, &n) in self.0.iter().zip(sizes) {
            if d.len() != n {
                return Err(Error::DimensionMismatch { what: "coalition distribution", expected: n, got: d.len() });
            }
        }
        Ok(())
    }
}

pub fn state_distance(a: &MeanFieldState, b: &MeanFieldState) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::DimensionMismatch { what: "state_distance", expected: a.0.len(), got: b.0.len() });
    }
    a.0.iter().zip(&b.0).map(|(p, q)| l1_distance(p, q)).sum()
}

/// A per-state action distribution: the mean-field action of one central player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl DecisionRule {
    pub fn new(n_states: usize, n_actions: usize, data: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("decision rule needs at least one state and action".into()));
        }
        if data.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                what: "decision rule entries",
                expected: n_states * n_actions,
                got: data.len(),
            });
        }
        for x in 0..n_states {
            check_simplex(&data[x * n_actions..(x + 1) * n_actions], "decision rule row")?;
        }
        Ok(Self { n_states, n_actions, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidArgument("ragged decision rule rows".into()));
        }
        Self::new(n_states, n_actions, rows.concat())
    }

    /// Every state plays `actions[x]` with probability one.
    pub fn pure(actions: &[usize], n_actions: usize) -> Self {
        let mut data = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            assert!(a < n_actions);
            data[x * n_actions + a] = 1.0;
        }
        Self { n_states: actions.len(), n_actions, data }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, data: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    /// Builds a rule from rows that are distributions up to round-off.
    pub(crate) fn from_drifted(n_states: usize, n_actions: usize, mut data: Vec<f64>) -> Self {
        for row in data.chunks_mut(n_actions) {
            renormalize_in_place(row);
        }
        Self { n_states, n_actions, data }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.data[x * self.n_actions + a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Same rule with action columns relabeled: new column `b` is old column `perm[b]`.
    pub fn permute_actions(&self, perm: &[usize]) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for x in 0..self.n_states {
            for (b, &a) in perm.iter().enumerate() {
                data[x * self.n_actions + b] = self.prob(x, a);
            }
        }
        Self { n_states: self.n_states, n_actions: self.n_actions, data }
    }

    pub(crate) fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::DimensionMismatch {
                what: "decision rule shape",
                expected: n_states * n_actions,
                got: self.n_states * self.n_actions,
            });
        }
        Ok(())
    }
}

/// Entrywise L1 distance Σ_{x,a} |π(a|x) − π'(a|x)|.
pub fn action_distance(a: &DecisionRule, b: &DecisionRule) -> Result<f64> {
    if a.n_states != b.n_states || a.n_actions != b.n_actions {
        return Err(Error::DimensionMismatch { what: "action_distance", expected: a.data.len(), got: b.data.len() });
    }
    Ok(a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).sum())
}

/// Population-average one-step reward of coalition `i`.
pub fn mean_field_reward(env: &EnvSpec, i: usize, state: &MeanFieldState, rule: &DecisionRule) -> Result<f64> {
    if i >= env.num_coalitions() {
        return Err(Error::IndexOutOfRange(format!("coalition {i}")));
    }
    state.check_shape(env.state_sizes())?;
    rule.check_shape(env.num_states(i), env.num_actions(i))?;
    Ok(match env.reward_model() {
        RewardModel::MeanField(f) => f(i, state, rule),
        RewardModel::Individual(r) => {
            let mu = state.coalition(i);
            let mut total = 0.0;
            for x in 0..rule.n_states() {
                if mu[x] == 0.0 {
                    continue;
                }
                let inner: f64 = (0..rule.n_actions()).map(|a| rule.prob(x, a) * r(i, x, a, state)).sum();
                total += mu[x] * inner;
            }
            total
        }
    })
}

/// Pushforward of coalition `i` under its kernel and decision rule, without shape checks.
pub(crate) fn push_coalition(env: &EnvSpec, i: usize, state: &MeanFieldState, rule: &DecisionRule) -> Distribution {
    let n = env.num_states(i);
    let mu = state.coalition(i);
    let mut next = vec![0.0; n];
    for x in 0..n {
        let mass = mu[x];
        if mass == 0.0 {
            continue;
        }
        for a in 0..rule.n_actions() {
            let w = mass * rule.prob(x, a);
            if w == 0.0 {
                continue;
            }
            for &(y, p) in env.kernel(i, x, a, state).iter() {
                next[y] += w * p;
            }
        }
    }
    Distribution::from_drifted(next)
}

/// The deterministic mean-field transition F̄.
pub fn mean_field_transition(env: &EnvSpec, state: &MeanFieldState, rules: &[DecisionRule]) -> Result<MeanFieldState> {
    state.check_shape(env.state_sizes())?;
    if rules.len() != env.num_coalitions() {
        return Err(Error::DimensionMismatch {
            what: "decision rules per coalition",
            expected: env.num_coalitions(),
            got: rules.len(),
        });
    }
    for (i, rule) in rules.iter().enumerate() {
        rule.check_shape(env.num_states(i), env.num_actions(i))?;
    }
    Ok(MeanFieldState(rules.iter().enumerate().map(|(i, rule)| push_coalition(env, i, state, rule)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_distance(&d(&[0.5, 0.5, 0.0]), &d(&[0.5, 0.5, 0.0])).unwrap(), 0.0);
        let a = Distribution::point_mass(3, 0);
        let b = Distribution::point_mass(3, 2);
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
        let x = l1_distance(&d(&[0.5, 0.5, 0.0]), &d(&[0.25, 0.25, 0.5])).unwrap();
        assert!((x - 1.0).abs() < 1e-15);
        assert!(matches!(l1_distance(&a, &Distribution::uniform(2)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn state_distance_examples() {
        let s = MeanFieldState::new(vec![Distribution::point_mass(3, 0), Distribution::point_mass(3, 1)]);
        assert_eq!(state_distance(&s, &s).unwrap(), 0.0);
        let t = MeanFieldState::new(vec![Distribution::point_mass(3, 1), Distribution::point_mass(3, 2)]);
        assert_eq!(state_distance(&s, &t).unwrap(), 4.0);
        let u = MeanFieldState::new(vec![d(&[0.5, 0.5, 0.0]), Distribution::point_mass(3, 1)]);
        let v = MeanFieldState::new(vec![d(&[0.25, 0.25, 0.5]), Distribution::point_mass(3, 1)]);
        assert!((state_distance(&u, &v).unwrap() - 1.0).abs() < 1e-15);
        let short = MeanFieldState::new(vec![Distribution::point_mass(3, 0)]);
        assert!(state_distance(&s, &short).is_err());
    }

    #[test]
    fn action_distance_examples() {
        let a = DecisionRule::pure(&[0, 0, 0], 3);
        assert_eq!(action_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(action_distance(&a, &DecisionRule::pure(&[0, 1, 0], 3)).unwrap(), 2.0);
        assert_eq!(action_distance(&a, &DecisionRule::pure(&[1, 2, 1], 3)).unwrap(), 6.0);
        assert!(action_distance(&a, &DecisionRule::pure(&[0, 0], 3)).is_err());
    }

    #[test]
    fn rejects_invalid_rows() {
        assert!(Distribution::new(vec![0.5, 0.6]).is_err());
        assert!(Distribution::new(vec![-0.1, 1.1]).is_err());
        assert!(DecisionRule::from_rows(vec![vec![0.5, 0.5], vec![1.0, 0.1]]).is_err());
        assert!(Distribution::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn grid1d_reward_examples() {
        let env = envs::build_grid1d();
        let s = MeanFieldState::new(vec![Distribution::point_mass(3, 0), Distribution::point_mass(3, 2)]);
        let stay = DecisionRule::pure(&[0, 0, 0], 3);
        assert_eq!(mean_field_reward(&env, 0, &s, &stay).unwrap(), 0.0);
        let same = MeanFieldState::new(vec![d(&[0.2, 0.3, 0.5]), d(&[0.2, 0.3, 0.5])]);
        assert_eq!(mean_field_reward(&env, 1, &same, &DecisionRule::pure(&[1, 2, 0], 3)).unwrap(), 0.0);
    }

    #[test]
    fn grid1d_move_right_transition() {
        let env = envs::build_grid1d();
        let s = MeanFieldState::new(vec![Distribution::point_mass(3, 1), Distribution::point_mass(3, 0)]);
        let right = DecisionRule::pure(&[2, 2, 2], 3);
        let stay = DecisionRule::pure(&[0, 0, 0], 3);
        let next = mean_field_transition(&env, &s, &[right, stay]).unwrap();
        let mu = next.coalition(0).probs();
        assert!((mu[0] - 0.005).abs() < 1e-12);
        assert!((mu[1] - 0.005).abs() < 1e-12);
        assert!((mu[2] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn noiseless_stay_is_identity() {
        let env = envs::build_planning2d();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let s = env.sample_initial(envs::SamplingMode::Training, &mut rng).unwrap();
        let stay = env.stay_rules();
        let next = mean_field_transition(&env, &s, &stay).unwrap();
        assert!(state_distance(&s, &next).unwrap() < 1e-12);
    }

    #[test]
    fn transition_rejects_bad_shapes() {
        let env = envs::build_grid1d();
        let s = MeanFieldState::new(vec![Distribution::uniform(3), Distribution::uniform(3)]);
        let stay = DecisionRule::pure(&[0, 0, 0], 3);
        assert!(mean_field_transition(&env, &s, std::slice::from_ref(&stay)).is_err());
        assert!(mean_field_transition(&env, &s, &[stay, DecisionRule::pure(&[0, 0], 3)]).is_err());
    }
}
