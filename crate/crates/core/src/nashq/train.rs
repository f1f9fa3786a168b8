use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{epsilon_schedule, learning_rate, NashQHyper, QTables};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Dynamics};
use crate::meanfield::{mean_field_reward, mean_field_transition, DecisionRule, Distribution, MeanFieldState};
use crate::policy::{MeanFieldPolicy, PolicyProfile};
use crate::quantize::{DiscreteActionSet, StateGrid};
use crate::stagegame::{nash_value, solve_stage_nash_detailed, SolveMethod, StageSolution};

/// One row of the training metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub episode: usize,
    pub epsilon: f64,
    /// Discounted return of the training episode, per player.
    pub returns: Vec<f64>,
    /// Greedy-profile value on the test set, when evaluated this episode.
    pub test_returns: Option<Vec<f64>>,
    /// Stage games that needed an approximate solution during the episode.
    pub approx_stage_solves: usize,
}

pub struct NashQRun {
    pub tables: QTables,
    pub metrics: Vec<TrainMetrics>,
}

/// Q ← (1−α)·Q + α·(r + γ·next_value) on one entry; returns the new value.
#[allow(clippy::too_many_arguments)]
pub fn nashq_update(
    q: &mut QTables,
    i: usize,
    state: usize,
    joint: usize,
    reward: f64,
    next_value: f64,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("learning rate {alpha} outside [0, 1]")));
    }
    let old = q.get(i, state, joint)?;
    let new = (1.0 - alpha) * old + alpha * (reward + gamma * next_value);
    q.set(i, state, joint, new)?;
    Ok(new)
}

fn check_setup(env: &EnvSpec, grid: &StateGrid, actions: &[DiscreteActionSet]) -> Result<()> {
    if grid.sizes() != env.state_sizes() {
        return Err(Error::InvalidArgument("state grid does not match the environment".into()));
    }
    if actions.len() != env.num_coalitions() {
        return Err(Error::DimensionMismatch {
            what: "action sets per coalition",
            expected: env.num_coalitions(),
            got: actions.len(),
        });
    }
    for (i, a) in actions.iter().enumerate() {
        if a.n_states() != env.num_states(i) || a.n_actions() != env.num_actions(i) {
            return Err(Error::InvalidArgument(format!("action set {i} does not match the environment")));
        }
    }
    Ok(())
}

fn sample_index<R: Rng + ?Sized>(d: &Distribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in d.probs().iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = a;
        if u < acc {
            return a;
        }
    }
    last
}

fn solve_at(q: &QTables, state: usize) -> Result<StageSolution> {
    solve_stage_nash_detailed(&q.stage_payoffs(state)?)
}

fn is_approx(s: &StageSolution) -> bool {
    matches!(s.method, SolveMethod::ApproximateGrid | SolveMethod::ApproximatePure)
}

/// Runs the discretized Nash Q-learning loop from fresh zero tables.
pub fn train_dnashq<R: Rng + ?Sized>(
    env: &EnvSpec,
    grid: &StateGrid,
    actions: &[DiscreteActionSet],
    hyper: &NashQHyper,
    rng: &mut R,
) -> Result<NashQRun> {
    check_setup(env, grid, actions)?;
    let sizes = actions.iter().map(DiscreteActionSet::len).collect();
    let tables = QTables::new(grid.len(), sizes)?;
    train_dnashq_resume(env, grid, actions, hyper, tables, 0, rng)
}

/// Continues training `tables` for episodes `start_episode..hyper.episodes`.
pub fn train_dnashq_resume<R: Rng + ?Sized>(
    env: &EnvSpec,
    grid: &StateGrid,
    actions: &[DiscreteActionSet],
    hyper: &NashQHyper,
    tables: QTables,
    start_episode: usize,
    rng: &mut R,
) -> Result<NashQRun> {
    train_dnashq_observed(env, grid, actions, hyper, tables, start_episode, rng, &mut |_, _| Ok(()))
}

/// [`train_dnashq_resume`] with `observe` called after every episode.
#[allow(clippy::too_many_arguments)]
pub fn train_dnashq_observed<R: Rng + ?Sized>(
    env: &EnvSpec,
    grid: &StateGrid,
    actions: &[DiscreteActionSet],
    hyper: &NashQHyper,
    mut tables: QTables,
    start_episode: usize,
    rng: &mut R,
    observe: &mut dyn FnMut(&TrainMetrics, &QTables) -> Result<()>,
) -> Result<NashQRun> {
    hyper.validate()?;
    check_setup(env, grid, actions)?;
    if tables.n_states() != grid.len() || tables.num_players() != env.num_coalitions() {
        return Err(Error::InvalidArgument("tables do not match the grids".into()));
    }
    let m = env.num_coalitions();
    let tests = env.test_set();
    let mut metrics = Vec::with_capacity(hyper.episodes.saturating_sub(start_episode));
    for episode in start_episode..hyper.episodes {
        let eps = epsilon_schedule(episode, hyper.episodes, hyper.eps_start, hyper.eps_end);
        let s0 = env.sample_training(rng).map_err(|e| e.at(episode, 0))?;
        let mut s_idx = grid.project_index(&s0).map_err(|e| e.at(episode, 0))?;
        let mut state = grid.state(s_idx);
        let mut returns = vec![0.0; m];
        let mut discount = 1.0;
        let mut approx = 0;
        // stage solution at the current state, valid while its table rows are untouched
        let mut current: Option<StageSolution> = None;
        for step in 0..hyper.horizon {
            let at = |e: Error| e.at(episode, step);
            let zeta: f64 = rng.random();
            let joint_actions: Vec<usize> = if zeta >= eps {
                let sol = match current.take() {
                    Some(s) => s,
                    None => solve_at(&tables, s_idx).map_err(at)?,
                };
                approx += usize::from(is_approx(&sol));
                sol.profile.strategies.iter().map(|d| sample_index(d, rng)).collect()
            } else {
                actions.iter().map(|a| rng.random_range(0..a.len())).collect()
            };
            let rules: Vec<DecisionRule> = joint_actions.iter().zip(actions).map(|(&a, set)| set.rule(a)).collect();
            let rewards: Vec<f64> =
                (0..m).map(|i| mean_field_reward(env, i, &state, &rules[i])).collect::<Result<_>>().map_err(at)?;
            let next = mean_field_transition(env, &state, &rules).map_err(at)?;
            let next_idx = grid.project_index(&next).map_err(at)?;

            let next_sol = solve_at(&tables, next_idx).map_err(at)?;
            approx += usize::from(is_approx(&next_sol));
            let next_values =
                nash_value(&tables.stage_payoffs(next_idx).map_err(at)?, &next_sol.profile).map_err(at)?;

            let joint = tables.joint_index(&joint_actions);
            let n = tables.visit(s_idx, joint).map_err(at)?;
            let alpha = learning_rate(n).map_err(at)?;
            for i in 0..m {
                nashq_update(&mut tables, i, s_idx, joint, rewards[i], next_values[i], alpha, hyper.gamma)
                    .map_err(at)?;
                returns[i] += discount * rewards[i];
            }
            discount *= hyper.gamma;
            if next_idx != s_idx {
                current = Some(next_sol);
            }
            s_idx = next_idx;
            state = grid.state(s_idx);
        }
        let test_returns = if hyper.eval_every > 0 && !tests.is_empty() && (episode + 1) % hyper.eval_every == 0 {
            let profile = NashQPolicy::profile(tables.clone(), grid.clone(), actions.to_vec());
            Some(
                evaluate(env, &profile, &tests, hyper.horizon, Dynamics::Projected(grid))
                    .map_err(|e| e.at(episode, hyper.horizon))?,
            )
        } else {
            None
        };
        let row = TrainMetrics { episode, epsilon: eps, returns, test_returns, approx_stage_solves: approx };
        observe(&row, &tables)?;
        metrics.push(row);
    }
    Ok(NashQRun { tables, metrics })
}

struct NashQShared {
    tables: QTables,
    grid: StateGrid,
    actions: Vec<DiscreteActionSet>,
    cache: Mutex<HashMap<usize, Vec<usize>>>,
}

impl NashQShared {
    fn joint_at(&self, s_idx: usize) -> Result<Vec<usize>> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(&s_idx) {
            return Ok(v.clone());
        }
        let modes = solve_at(&self.tables, s_idx)?.profile.modes();
        self.cache.lock().expect("cache lock").insert(s_idx, modes.clone());
        Ok(modes)
    }
}

/// Greedy inference policy of one coalition: project, solve the stage game, play its most likely rule.
#[derive(Clone)]
pub struct NashQPolicy {
    shared: Arc<NashQShared>,
    coalition: usize,
}

impl NashQPolicy {
    pub fn profile(tables: QTables, grid: StateGrid, actions: Vec<DiscreteActionSet>) -> PolicyProfile {
        let m = actions.len();
        let shared = Arc::new(NashQShared { tables, grid, actions, cache: Mutex::new(HashMap::new()) });
        (0..m)
            .map(|coalition| Arc::new(NashQPolicy { shared: shared.clone(), coalition }) as Arc<dyn MeanFieldPolicy>)
            .collect()
    }

    /// Joint discrete actions the profile plays at a grid state index.
    pub fn joint_actions(&self, s_idx: usize) -> Result<Vec<usize>> {
        self.shared.joint_at(s_idx)
    }
}

impl MeanFieldPolicy for NashQPolicy {
    fn decide(&self, _t: usize, state: &MeanFieldState) -> Result<DecisionRule> {
        let s_idx = self.shared.grid.project_index(state)?;
        let joint = self.shared.joint_at(s_idx)?;
        Ok(self.shared.actions[self.coalition].rule(joint[self.coalition]))
    }

    fn describe(&self) -> String {
        format!("dnashq[{}]", self.coalition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferStep {
    pub state: MeanFieldState,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Deterministic greedy rollout of trained tables from a grid state.
pub fn infer_dnashq(
    env: &EnvSpec,
    tables: &QTables,
    grid: &StateGrid,
    actions: &[DiscreteActionSet],
    s0: &MeanFieldState,
    horizon: usize,
) -> Result<Vec<InferStep>> {
    check_setup(env, grid, actions)?;
    let mut s_idx = grid.index_of(s0)?;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let state = grid.state(s_idx);
        let joint = solve_at(tables, s_idx)?.profile.modes();
        let rules: Vec<DecisionRule> = joint.iter().zip(actions).map(|(&a, set)| set.rule(a)).collect();
        let rewards =
            (0..rules.len()).map(|i| mean_field_reward(env, i, &state, &rules[i])).collect::<Result<Vec<_>>>()?;
        let next = mean_field_transition(env, &state, &rules)?;
        out.push(InferStep { state, actions: joint, rewards });
        s_idx = grid.project_index(&next)?;
    }
    Ok(out)
}

/// Per-coalition Q over (own projected distribution, own discrete rule).
#[derive(Debug, Clone, PartialEq)]
pub struct IlTables {
    pub(crate) own_states: Vec<usize>,
    pub(crate) action_sizes: Vec<usize>,
    pub(crate) values: Vec<Vec<f64>>,
    pub(crate) counts: Vec<Vec<u32>>,
}

impl IlTables {
    pub fn new(own_states: Vec<usize>, action_sizes: Vec<usize>) -> Self {
        let values = own_states.iter().zip(&action_sizes).map(|(&s, &a)| vec![0.0; s * a]).collect();
        let counts = own_states.iter().zip(&action_sizes).map(|(&s, &a)| vec![0; s * a]).collect();
        Self { own_states, action_sizes, values, counts }
    }

    pub fn num_players(&self) -> usize {
        self.values.len()
    }

    /// `(|Šⁱ|, |Ǎⁱ|)`.
    pub fn shape(&self, i: usize) -> (usize, usize) {
        (self.own_states[i], self.action_sizes[i])
    }

    pub fn get(&self, i: usize, s: usize, a: usize) -> f64 {
        self.values[i][s * self.action_sizes[i] + a]
    }

    pub fn count(&self, i: usize, s: usize, a: usize) -> u32 {
        self.counts[i][s * self.action_sizes[i] + a]
    }

    /// Greedy action and its value; lowest index on ties.
    pub fn greedy(&self, i: usize, s: usize) -> (usize, f64) {
        let na = self.action_sizes[i];
        let row = &self.values[i][s * na..(s + 1) * na];
        let mut best = (0, row[0]);
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (a, v);
            }
        }
        best
    }
}

pub struct IlRun {
    pub tables: IlTables,
    pub metrics: Vec<TrainMetrics>,
}

/// Independent learners: each coalition runs max-based Q-learning on its own projected distribution.
pub fn train_il_mftg<R: Rng + ?Sized>(
    env: &EnvSpec,
    grid: &StateGrid,
    actions: &[DiscreteActionSet],
    hyper: &NashQHyper,
    rng: &mut R,
) -> Result<IlRun> {
    train_il_mftg_observed(env, grid, actions, hyper, rng, &mut |_, _| Ok(()))
}

/// [`train_il_mftg`] with `observe` called after every episode.
pub fn train_il_mftg_observed<R: Rng + ?Sized>(
    env: &EnvSpec,
    grid: &StateGrid,
    actions: &[DiscreteActionSet],
    hyper: &NashQHyper,
    rng: &mut R,
    observe: &mut dyn FnMut(&TrainMetrics, &IlTables) -> Result<()>,
) -> Result<IlRun> {
    hyper.validate()?;
    check_setup(env, grid, actions)?;
    let m = env.num_coalitions();
    let mut tables = IlTables::new(
        (0..m).map(|i| grid.coalition_grid(i).len()).collect(),
        actions.iter().map(DiscreteActionSet::len).collect(),
    );
    let tests = env.test_set();
    let mut metrics = Vec::with_capacity(hyper.episodes);
    for episode in 0..hyper.episodes {
        let eps = epsilon_schedule(episode, hyper.episodes, hyper.eps_start, hyper.eps_end);
        let s0 = env.sample_training(rng).map_err(|e| e.at(episode, 0))?;
        let mut s_idx = grid.project_index(&s0).map_err(|e| e.at(episode, 0))?;
        let mut returns = vec![0.0; m];
        let mut discount = 1.0;
        for step in 0..hyper.horizon {
            let at = |e: Error| e.at(episode, step);
            let state = grid.state(s_idx);
            let own = grid.split(s_idx);
            let zeta: f64 = rng.random();
            let chosen: Vec<usize> = if zeta >= eps {
                (0..m).map(|i| tables.greedy(i, own[i]).0).collect()
            } else {
                actions.iter().map(|a| rng.random_range(0..a.len())).collect()
            };
            let rules: Vec<DecisionRule> = chosen.iter().zip(actions).map(|(&a, set)| set.rule(a)).collect();
            let rewards: Vec<f64> =
                (0..m).map(|i| mean_field_reward(env, i, &state, &rules[i])).collect::<Result<_>>().map_err(at)?;
            let next = mean_field_transition(env, &state, &rules).map_err(at)?;
            let next_idx = grid.project_index(&next).map_err(at)?;
            let next_own = grid.split(next_idx);
            for i in 0..m {
                let k = own[i] * tables.action_sizes[i] + chosen[i];
                tables.counts[i][k] += 1;
                let alpha = learning_rate(tables.counts[i][k]).map_err(at)?;
                let target = rewards[i] + hyper.gamma * tables.greedy(i, next_own[i]).1;
                let v = &mut tables.values[i][k];
                *v = (1.0 - alpha) * *v + alpha * target;
                if !v.is_finite() {
                    return Err(at(Error::NonFinite(format!("IL Q-value of player {i}"))));
                }
                returns[i] += discount * rewards[i];
            }
            discount *= hyper.gamma;
            s_idx = next_idx;
        }
        let test_returns = if hyper.eval_every > 0 && !tests.is_empty() && (episode + 1) % hyper.eval_every == 0 {
            let profile = IlGreedyPolicy::profile(tables.clone(), grid.clone(), actions.to_vec());
            Some(
                evaluate(env, &profile, &tests, hyper.horizon, Dynamics::Projected(grid))
                    .map_err(|e| e.at(episode, hyper.horizon))?,
            )
        } else {
            None
        };
        let row = TrainMetrics { episode, epsilon: eps, returns, test_returns, approx_stage_solves: 0 };
        observe(&row, &tables)?;
        metrics.push(row);
    }
    Ok(IlRun { tables, metrics })
}

struct IlShared {
    tables: IlTables,
    grid: StateGrid,
    actions: Vec<DiscreteActionSet>,
}

/// Greedy policy of one independent learner; looks only at its own coalition's distribution.
#[derive(Clone)]
pub struct IlGreedyPolicy {
    shared: Arc<IlShared>,
    coalition: usize,
}

impl IlGreedyPolicy {
    pub fn profile(tables: IlTables, grid: StateGrid, actions: Vec<DiscreteActionSet>) -> PolicyProfile {
        let m = actions.len();
        let shared = Arc::new(IlShared { tables, grid, actions });
        (0..m)
            .map(|coalition| Arc::new(IlGreedyPolicy { shared: shared.clone(), coalition }) as Arc<dyn MeanFieldPolicy>)
            .collect()
    }
}

impl MeanFieldPolicy for IlGreedyPolicy {
    fn decide(&self, _t: usize, state: &MeanFieldState) -> Result<DecisionRule> {
        let i = self.coalition;
        state.check_shape(self.shared.grid.sizes())?;
        let own = self.shared.grid.project_coalition(i, state.coalition(i));
        let (a, _) = self.shared.tables.greedy(i, own);
        Ok(self.shared.actions[i].rule(a))
    }

    fn describe(&self) -> String {
        format!("il[{}]", self.coalition)
    }
}
