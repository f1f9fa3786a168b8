//! Policy evaluation, best responses against frozen opponents, and exploitability.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddpg::{train_best_response, DdpgHyper};
use crate::envs::{EnvSpec, TestSet};
use crate::error::{Error, Result};
use crate::meanfield::{mean_field_reward, mean_field_transition, DecisionRule, MeanFieldState};
use crate::nashq::{epsilon_schedule, learning_rate};
use crate::policy::{profile_rules, MeanFieldPolicy, PolicyProfile};
use crate::quantize::{DiscreteActionSet, StateGrid};

/// Whether states are snapped to a grid after every transition.
#[derive(Debug, Clone, Copy)]
pub enum Dynamics<'a> {
    Continuous,
    /// Project the initial state and every successor onto the grid.
    Projected(&'a StateGrid),
}

impl Dynamics<'_> {
    fn settle(&self, s: MeanFieldState) -> Result<MeanFieldState> {
        match self {
            Dynamics::Continuous => Ok(s),
            Dynamics::Projected(g) => g.project(&s),
        }
    }
}

/// Mean-field trajectory of a profile. `states` has `horizon + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<MeanFieldState>,
    pub rules: Vec<Vec<DecisionRule>>,
    /// `rewards[t][i]`.
    pub rewards: Vec<Vec<f64>>,
    /// Discounted return per player.
    pub returns: Vec<f64>,
}

pub fn rollout(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    s0: &MeanFieldState,
    horizon: usize,
    dynamics: Dynamics<'_>,
) -> Result<Rollout> {
    if profile.len() != env.num_coalitions() {
        return Err(Error::DimensionMismatch {
            what: "policies per coalition",
            expected: env.num_coalitions(),
            got: profile.len(),
        });
    }
    env.validate_state(s0)?;
    let m = env.num_coalitions();
    let mut s = dynamics.settle(s0.clone())?;
    let mut out = Rollout {
        states: Vec::with_capacity(horizon + 1),
        rules: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        returns: vec![0.0; m],
    };
    let mut discount = 1.0;
    for t in 0..horizon {
        let rules = profile_rules(profile, t, &s)?;
        let r = (0..m).map(|i| mean_field_reward(env, i, &s, &rules[i])).collect::<Result<Vec<_>>>()?;
        for i in 0..m {
            out.returns[i] += discount * r[i];
        }
        discount *= env.gamma();
        let next = dynamics.settle(mean_field_transition(env, &s, &rules)?)?;
        out.states.push(std::mem::replace(&mut s, next));
        out.rules.push(rules);
        out.rewards.push(r);
    }
    out.states.push(s);
    Ok(out)
}

/// Per test distribution, the discounted return of every player: `[test][player]`.
pub fn evaluate_per_test(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    tests: &TestSet,
    horizon: usize,
    dynamics: Dynamics<'_>,
) -> Result<Vec<Vec<f64>>> {
    tests.entries.iter().map(|s0| rollout(env, profile, s0, horizon, dynamics).map(|r| r.returns)).collect()
}

/// Average discounted return over the test set, per player.
pub fn evaluate(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    tests: &TestSet,
    horizon: usize,
    dynamics: Dynamics<'_>,
) -> Result<Vec<f64>> {
    if tests.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let per = evaluate_per_test(env, profile, tests, horizon, dynamics)?;
    let m = env.num_coalitions();
    let mut mean = vec![0.0; m];
    for row in &per {
        for i in 0..m {
            mean[i] += row[i];
        }
    }
    Ok(mean.into_iter().map(|v| v / per.len() as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrMethod {
    Tabular,
    Deep,
    Exhaustive,
}

impl FromStr for BrMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(Self::Tabular),
            "deep" => Ok(Self::Deep),
            "exhaustive" => Ok(Self::Exhaustive),
            other => Err(Error::InvalidArgument(format!("unknown best-response method `{other}`"))),
        }
    }
}

impl fmt::Display for BrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tabular => "tabular",
            Self::Deep => "deep",
            Self::Exhaustive => "exhaustive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrScope {
    /// One best response trained on the whole test set.
    Pooled,
    /// One best response per test distribution.
    PerTest,
}

impl FromStr for BrScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Self::Pooled),
            "per_test" => Ok(Self::PerTest),
            other => Err(Error::InvalidArgument(format!("unknown best-response scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BrConfig {
    pub method: BrMethod,
    /// Training episodes for the learned methods; unused by the exhaustive one.
    pub budget: usize,
    pub scope: BrScope,
    /// Best responses averaged per test distribution (learned methods).
    pub retrain: usize,
    pub horizon: usize,
    /// Grid of the projected game; required by the tabular and exhaustive methods.
    pub grid: Option<StateGrid>,
    /// Candidate discrete rules per player for the tabular and exhaustive methods.
    pub action_sets: Vec<DiscreteActionSet>,
    pub ddpg: Option<DdpgHyper>,
}

impl BrConfig {
    pub fn exhaustive(env: &EnvSpec, grid: StateGrid, action_sets: Vec<DiscreteActionSet>) -> Self {
        Self {
            method: BrMethod::Exhaustive,
            budget: 0,
            scope: BrScope::PerTest,
            retrain: 1,
            horizon: env.horizon(),
            grid: Some(grid),
            action_sets,
            ddpg: None,
        }
    }

    pub fn tabular(env: &EnvSpec, grid: StateGrid, action_sets: Vec<DiscreteActionSet>, budget: usize) -> Self {
        Self { method: BrMethod::Tabular, budget, ..Self::exhaustive(env, grid, action_sets) }
    }

    pub fn deep(env: &EnvSpec, hyper: DdpgHyper) -> Self {
        Self {
            method: BrMethod::Deep,
            budget: hyper.episodes,
            scope: BrScope::PerTest,
            retrain: 1,
            horizon: env.horizon(),
            grid: None,
            action_sets: Vec::new(),
            ddpg: Some(hyper),
        }
    }

    pub fn dynamics(&self) -> Dynamics<'_> {
        match &self.grid {
            Some(g) => Dynamics::Projected(g),
            None => Dynamics::Continuous,
        }
    }

    fn discrete_parts(&self, i: usize) -> Result<(&StateGrid, &DiscreteActionSet)> {
        let grid = self
            .grid
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} best response needs a state grid", self.method)))?;
        let set = self
            .action_sets
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("no discrete action set for player {i}")))?;
        Ok((grid, set))
    }
}

#[derive(Debug, Clone)]
pub struct BrOutcome {
    pub policy: Arc<dyn MeanFieldPolicy>,
    /// Set when training never beat the player's own policy.
    pub warning: bool,
    pub episodes: usize,
}

/// Time-indexed lookup over grid states. Candidate `set.len()` means "play the
/// player's own policy"; so do states missing from the table.
struct LookupPolicy {
    grid: StateGrid,
    set: DiscreteActionSet,
    own: Arc<dyn MeanFieldPolicy>,
    choices: HashMap<(usize, usize), usize>,
    label: &'static str,
}

impl MeanFieldPolicy for LookupPolicy {
    fn decide(&self, t: usize, state: &MeanFieldState) -> Result<DecisionRule> {
        let s = self.grid.project_index(state)?;
        match self.choices.get(&(t, s)) {
            Some(&c) if c < self.set.len() => Ok(self.set.rule(c)),
            _ => self.own.decide(t, state),
        }
    }

    fn describe(&self) -> String {
        self.label.into()
    }
}

fn with_rule(rules: &[DecisionRule], i: usize, rule: DecisionRule) -> Vec<DecisionRule> {
    let mut out = rules.to_vec();
    out[i] = rule;
    out
}

type Edges = HashMap<usize, Vec<(f64, usize)>>;

/// Backward induction over every grid state reachable from the test set, with the
/// player's own rule as an extra candidate so the result never loses to it.
fn exhaustive_br(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    i: usize,
    tests: &TestSet,
    cfg: &BrConfig,
) -> Result<BrOutcome> {
    let (grid, set) = cfg.discrete_parts(i)?;
    let n_cand = set.len() + 1;
    let mut layer: BTreeSet<usize> = BTreeSet::new();
    for s0 in &tests.entries {
        env.validate_state(s0)?;
        layer.insert(grid.project_index(s0)?);
    }
    let mut edges: Vec<Edges> = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        let mut next_layer = BTreeSet::new();
        let mut level = Edges::with_capacity(layer.len());
        for &s_idx in &layer {
            let state = grid.state(s_idx);
            let rules = profile_rules(profile, t, &state)?;
            let mut out = Vec::with_capacity(n_cand);
            for c in 0..n_cand {
                let rule = if c < set.len() { set.rule(c) } else { rules[i].clone() };
                let r = mean_field_reward(env, i, &state, &rule)?;
                let next = grid.project_index(&mean_field_transition(env, &state, &with_rule(&rules, i, rule))?)?;
                next_layer.insert(next);
                out.push((r, next));
            }
            level.insert(s_idx, out);
        }
        edges.push(level);
        layer = next_layer;
    }
    let gamma = env.gamma();
    let mut value_next: HashMap<usize, f64> = HashMap::new();
    let mut choices = HashMap::new();
    for t in (0..cfg.horizon).rev() {
        let mut value = HashMap::with_capacity(edges[t].len());
        for (&s_idx, out) in &edges[t] {
            let q = |c: usize| {
                let (r, n) = out[c];
                r + gamma * value_next.get(&n).copied().unwrap_or(0.0)
            };
            let own = n_cand - 1;
            let mut best = (own, q(own));
            for c in 0..set.len() {
                let v = q(c);
                if v > best.1 {
                    best = (c, v);
                }
            }
            choices.insert((t, s_idx), best.0);
            value.insert(s_idx, best.1);
        }
        value_next = value;
    }
    Ok(BrOutcome {
        policy: Arc::new(LookupPolicy {
            grid: grid.clone(),
            set: set.clone(),
            own: profile[i].clone(),
            choices,
            label: "exhaustive-br",
        }),
        warning: false,
        episodes: 0,
    })
}

fn greedy_candidate(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Candidate values and visit counts keyed by (time, grid state).
type BrTable = HashMap<(usize, usize), (Vec<f64>, Vec<u32>)>;

/// Q-learning over (time, grid state, candidate) with the tabular schedules,
/// keeping the best greedy snapshot seen at periodic evaluations.
fn tabular_br<R: Rng + ?Sized>(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    i: usize,
    tests: &TestSet,
    cfg: &BrConfig,
    rng: &mut R,
) -> Result<BrOutcome> {
    let (grid, set) = cfg.discrete_parts(i)?;
    if tests.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let n_cand = set.len() + 1;
    let starts = tests.entries.iter().map(|s| grid.project_index(s)).collect::<Result<Vec<_>>>()?;
    let dynamics = Dynamics::Projected(grid);
    let own = profile[i].clone();
    let snapshot = |q: &BrTable| -> Arc<dyn MeanFieldPolicy> {
        let choices = q.iter().map(|(&k, (row, _))| (k, greedy_candidate(row))).collect();
        Arc::new(LookupPolicy { grid: grid.clone(), set: set.clone(), own: own.clone(), choices, label: "tabular-br" })
    };
    let score = |p: &Arc<dyn MeanFieldPolicy>| -> Result<f64> {
        let mut prof = profile.to_vec();
        prof[i] = p.clone();
        Ok(evaluate(env, &prof, tests, cfg.horizon, dynamics)?[i])
    };
    let mut best_policy = own.clone();
    let mut best_value = score(&own)?;
    let mut improved = false;
    let mut q: BrTable = HashMap::new();
    let every = (cfg.budget / 20).max(1);
    let gamma = env.gamma();
    for episode in 0..cfg.budget {
        let eps = epsilon_schedule(episode, cfg.budget, 0.99, 0.01);
        let mut s_idx = starts[episode % starts.len()];
        for t in 0..cfg.horizon {
            let at = |e: Error| e.at(episode, t);
            let state = grid.state(s_idx);
            let rules = profile_rules(profile, t, &state).map_err(at)?;
            let c = if rng.random::<f64>() < eps {
                rng.random_range(0..n_cand)
            } else {
                q.get(&(t, s_idx)).map_or(n_cand - 1, |e| greedy_candidate(&e.0))
            };
            let rule = if c < set.len() { set.rule(c) } else { rules[i].clone() };
            let r = mean_field_reward(env, i, &state, &rule).map_err(at)?;
            let next = grid
                .project_index(&mean_field_transition(env, &state, &with_rule(&rules, i, rule)).map_err(at)?)
                .map_err(at)?;
            let future = if t + 1 < cfg.horizon {
                q.get(&(t + 1, next)).map_or(0.0, |e| e.0.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            } else {
                0.0
            };
            let entry = q.entry((t, s_idx)).or_insert_with(|| (vec![0.0; n_cand], vec![0; n_cand]));
            entry.1[c] += 1;
            let alpha = learning_rate(entry.1[c]).map_err(at)?;
            entry.0[c] = (1.0 - alpha) * entry.0[c] + alpha * (r + gamma * future);
            s_idx = next;
        }
        if (episode + 1) % every == 0 || episode + 1 == cfg.budget {
            let candidate = snapshot(&q);
            let v = score(&candidate)?;
            if v > best_value {
                best_value = v;
                best_policy = candidate;
                improved = true;
            }
        }
    }
    Ok(BrOutcome { policy: best_policy, warning: !improved, episodes: cfg.budget })
}

/// Best response of player `i` against the frozen rest of `profile`, trained from `tests`.
pub fn best_response<R: Rng + ?Sized>(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    i: usize,
    tests: &TestSet,
    cfg: &BrConfig,
    rng: &mut R,
) -> Result<BrOutcome> {
    if i >= env.num_coalitions() || profile.len() != env.num_coalitions() {
        return Err(Error::IndexOutOfRange(format!("player {i} of a {}-policy profile", profile.len())));
    }
    match cfg.method {
        BrMethod::Exhaustive => exhaustive_br(env, profile, i, tests, cfg),
        BrMethod::Tabular => tabular_br(env, profile, i, tests, cfg, rng),
        BrMethod::Deep => {
            let hyper = cfg
                .ddpg
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("deep best response needs DDPG settings".into()))?;
            let mut hyper = hyper.clone();
            hyper.episodes = cfg.budget;
            hyper.horizon = cfg.horizon;
            let br = train_best_response(env, profile, i, tests, &hyper, rng)?;
            let mut with_br = profile.to_vec();
            with_br[i] = br.policy.clone();
            let m = evaluate(env, &with_br, tests, cfg.horizon, cfg.dynamics())?[i];
            let v = evaluate(env, profile, tests, cfg.horizon, cfg.dynamics())?[i];
            Ok(BrOutcome { policy: br.policy, warning: m <= v, episodes: cfg.budget })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub player: usize,
    pub test_index: usize,
    /// Best-response value, averaged over retrainings.
    pub m: f64,
    /// Value of the player's own policy.
    pub v: f64,
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrDiagnostics {
    pub player: usize,
    /// `None` for a pooled best response.
    pub test_index: Option<usize>,
    pub replicate: usize,
    pub warning: bool,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: BrMethod,
    pub budget: usize,
    pub scope: BrScope,
    pub retrain: usize,
    /// Jⁱ of the evaluated profile over the test set.
    pub values: Vec<f64>,
    /// Mⁱ, the best-response values.
    pub best_values: Vec<f64>,
    pub exploitabilities: Vec<f64>,
    pub total: f64,
    pub rows: Vec<EvalRow>,
    pub diagnostics: Vec<BrDiagnostics>,
}

pub const EVAL_CSV_SCHEMA: &str = "# schema=eval_report/1";

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_CSV_SCHEMA}\nplayer,test_index,M,V,E,method,budget\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.player, r.test_index, r.m, r.v, r.e, self.method, self.budget
            ));
        }
        out
    }

    pub fn any_warning(&self) -> bool {
        self.diagnostics.iter().any(|d| d.warning)
    }
}

/// Eⁱ = Mⁱ − Vⁱ for every player, with best responses computed per `cfg`.
/// Independent best responses run concurrently; each gets its own seed drawn from `rng`.
pub fn exploitability<R: Rng + ?Sized>(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    tests: &TestSet,
    cfg: &BrConfig,
    rng: &mut R,
) -> Result<EvalReport> {
    if tests.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let m = env.num_coalitions();
    let reps = match cfg.method {
        BrMethod::Exhaustive => 1,
        _ => cfg.retrain.max(1),
    };
    let dynamics = cfg.dynamics();
    let base = evaluate_per_test(env, profile, tests, cfg.horizon, dynamics)?;

    // (player, test scope, replicate, seed)
    let mut jobs = Vec::new();
    for i in 0..m {
        let scopes: Vec<Option<usize>> = match cfg.scope {
            BrScope::Pooled => vec![None],
            BrScope::PerTest => (0..tests.len()).map(Some).collect(),
        };
        for scope in scopes {
            for rep in 0..reps {
                jobs.push((i, scope, rep, rng.random::<u64>()));
            }
        }
    }
    let results: Vec<(BrDiagnostics, Vec<(usize, f64)>)> = jobs
        .par_iter()
        .map(|&(i, scope, rep, seed)| {
            let train_tests = match scope {
                Some(d) => TestSet { entries: vec![tests.entries[d].clone()] },
                None => tests.clone(),
            };
            let mut job_rng = ChaCha8Rng::seed_from_u64(seed);
            let br = best_response(env, profile, i, &train_tests, cfg, &mut job_rng)?;
            let mut with_br: PolicyProfile = profile.to_vec();
            with_br[i] = br.policy;
            let vals = evaluate_per_test(env, &with_br, &train_tests, cfg.horizon, dynamics)?;
            let indexed = match scope {
                Some(d) => vec![(d, vals[0][i])],
                None => vals.iter().enumerate().map(|(d, v)| (d, v[i])).collect(),
            };
            let diag = BrDiagnostics {
                player: i,
                test_index: scope,
                replicate: rep,
                warning: br.warning,
                episodes: br.episodes,
            };
            Ok((diag, indexed))
        })
        .collect::<Result<_>>()?;

    let mut m_sum = vec![vec![0.0; tests.len()]; m];
    let mut diagnostics = Vec::with_capacity(results.len());
    for (diag, vals) in results {
        for (d, v) in vals {
            m_sum[diag.player][d] += v;
        }
        diagnostics.push(diag);
    }
    let mut rows = Vec::with_capacity(m * tests.len());
    let mut values = vec![0.0; m];
    let mut best_values = vec![0.0; m];
    let mut exploitabilities = vec![0.0; m];
    let n_tests = tests.len() as f64;
    for i in 0..m {
        for d in 0..tests.len() {
            let mv = m_sum[i][d] / reps as f64;
            let v = base[d][i];
            rows.push(EvalRow { player: i, test_index: d, m: mv, v, e: mv - v });
            values[i] += v;
            best_values[i] += mv;
            exploitabilities[i] += mv - v;
        }
        values[i] /= n_tests;
        best_values[i] /= n_tests;
        exploitabilities[i] /= n_tests;
    }
    let total = exploitabilities.iter().sum();
    Ok(EvalReport {
        method: cfg.method,
        budget: cfg.budget,
        scope: cfg.scope,
        retrain: reps,
        values,
        best_values,
        exploitabilities,
        total,
        rows,
        diagnostics,
    })
}
