//! Finite populations of agents driven by a mean-field profile, and the
//! empirical convergence rate of their distributions to the mean field.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::eval::{rollout, Dynamics};
use crate::meanfield::{mean_field_reward, state_distance, DecisionRule, Distribution, MeanFieldState};
use crate::policy::{profile_rules, MeanFieldPolicy};

fn sample_from<R: Rng + ?Sized>(probs: impl IntoIterator<Item = (usize, f64)>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Individual states of every agent, per coalition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPopulation {
    pub states: Vec<Vec<usize>>,
    sizes: Vec<usize>,
}

impl AgentPopulation {
    /// Draws `counts[i]` agents i.i.d. from each coalition's distribution in `s0`.
    pub fn sample<R: Rng + ?Sized>(s0: &MeanFieldState, counts: &[usize], rng: &mut R) -> Result<Self> {
        if counts.len() != s0.num_coalitions() {
            return Err(Error::DimensionMismatch {
                what: "agent counts",
                expected: s0.num_coalitions(),
                got: counts.len(),
            });
        }
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("every coalition needs at least one agent".into()));
        }
        let states = counts
            .iter()
            .zip(s0.coalitions())
            .map(|(&n, d)| (0..n).map(|_| sample_from(d.probs().iter().copied().enumerate(), rng)).collect())
            .collect();
        Ok(Self { states, sizes: s0.coalitions().iter().map(Distribution::len).collect() })
    }

    pub fn counts(&self) -> Vec<usize> {
        self.states.iter().map(Vec::len).collect()
    }

    /// μ^{i,N}: occupation frequencies.
    pub fn empirical(&self) -> MeanFieldState {
        MeanFieldState::new(
            self.states
                .iter()
                .zip(&self.sizes)
                .map(|(xs, &n)| {
                    let mut c = vec![0usize; n];
                    for &x in xs {
                        c[x] += 1;
                    }
                    Distribution::from_drifted(c.into_iter().map(|k| k as f64 / xs.len() as f64).collect())
                })
                .collect(),
        )
    }
}

/// Per-state action frequencies of one coalition; unoccupied states keep `fallback`'s row.
fn empirical_rule(states: &[usize], actions: &[usize], fallback: &DecisionRule) -> DecisionRule {
    let (ns, na) = (fallback.n_states(), fallback.n_actions());
    let mut counts = vec![0usize; ns * na];
    let mut occ = vec![0usize; ns];
    for (&x, &a) in states.iter().zip(actions) {
        counts[x * na + a] += 1;
        occ[x] += 1;
    }
    let mut data = Vec::with_capacity(ns * na);
    for x in 0..ns {
        if occ[x] == 0 {
            data.extend_from_slice(fallback.row(x));
        } else {
            data.extend(counts[x * na..(x + 1) * na].iter().map(|&k| k as f64 / occ[x] as f64));
        }
    }
    DecisionRule::from_drifted(ns, na, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteRun {
    /// Empirical joint distributions at times `0..=T`.
    pub path: Vec<MeanFieldState>,
    /// `rewards[t][i]`: realized coalition-average reward.
    pub rewards: Vec<Vec<f64>>,
    /// J^{i,N}: discounted sum of `rewards`.
    pub returns: Vec<f64>,
}

/// Simulates `counts[i]` agents per coalition for `horizon` steps. Every agent
/// samples its action from the profile evaluated at the empirical joint distribution.
pub fn simulate_finite<R: Rng + ?Sized>(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    counts: &[usize],
    s0: &MeanFieldState,
    horizon: usize,
    rng: &mut R,
) -> Result<FiniteRun> {
    env.validate_state(s0)?;
    if profile.len() != env.num_coalitions() {
        return Err(Error::DimensionMismatch {
            what: "policies per coalition",
            expected: env.num_coalitions(),
            got: profile.len(),
        });
    }
    let m = env.num_coalitions();
    let mut pop = AgentPopulation::sample(s0, counts, rng)?;
    let mut run = FiniteRun {
        path: Vec::with_capacity(horizon + 1),
        rewards: Vec::with_capacity(horizon),
        returns: vec![0.0; m],
    };
    let mut discount = 1.0;
    for t in 0..horizon {
        let mu = pop.empirical();
        let rules = profile_rules(profile, t, &mu)?;
        let mut step_rewards = Vec::with_capacity(m);
        let mut next_states = Vec::with_capacity(m);
        for i in 0..m {
            let xs = &pop.states[i];
            let actions: Vec<usize> =
                xs.iter().map(|&x| sample_from(rules[i].row(x).iter().copied().enumerate(), rng)).collect();
            let nu = empirical_rule(xs, &actions, &rules[i]);
            let r = mean_field_reward(env, i, &mu, &nu)?;
            run.returns[i] += discount * r;
            step_rewards.push(r);
            next_states.push(
                xs.iter()
                    .zip(&actions)
                    .map(|(&x, &a)| sample_from(env.kernel(i, x, a, &mu).iter().copied(), rng))
                    .collect::<Vec<_>>(),
            );
        }
        discount *= env.gamma();
        run.path.push(mu);
        run.rewards.push(step_rewards);
        pop.states = next_states;
    }
    run.path.push(pop.empirical());
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n: usize,
    pub t: usize,
    /// Mean over replications of Σᵢ ‖μⁱ_t − μ^{i,N}_t‖₁.
    pub gap_mean: f64,
    pub gap_std: f64,
    /// Mean over replications of maxᵢ |Jⁱ − J^{i,N}| for returns truncated at `t`.
    pub reward_gap_mean: f64,
    pub reward_gap_std: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    /// γᵀ·R_max/(1−γ) with R_max the largest observed |reward|.
    pub tail_bound: f64,
}

pub const GAP_CSV_SCHEMA: &str = "# schema=gap_report/1";

impl GapReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{GAP_CSV_SCHEMA}\nN,t,gap_mean,gap_std,reward_gap_mean,reward_gap_std,reps\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.n, r.t, r.gap_mean, r.gap_std, r.reward_gap_mean, r.reward_gap_std, r.reps
            ));
        }
        out
    }

    pub fn rows_at(&self, t: usize) -> impl Iterator<Item = &GapRow> {
        self.rows.iter().filter(move |r| r.t == t)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs `replications` finite simulations per population size (the same N in every
/// coalition) from `s0`, against the matched mean-field rollout.
pub fn estimate_gap<R: Rng + ?Sized>(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    n_list: &[usize],
    replications: usize,
    horizon: usize,
    s0: &MeanFieldState,
    rng: &mut R,
) -> Result<GapReport> {
    if replications < 2 {
        return Err(Error::InvalidArgument("need at least two replications".into()));
    }
    let m = env.num_coalitions();
    let reference = rollout(env, profile, s0, horizon, Dynamics::Continuous)?;
    let mut r_max = reference.rewards.iter().flatten().fold(0.0f64, |a, r| a.max(r.abs()));
    let mut rows = Vec::with_capacity(n_list.len() * (horizon + 1));
    for &n in n_list {
        let seeds: Vec<u64> = (0..replications).map(|_| rng.random()).collect();
        let runs: Vec<FiniteRun> = seeds
            .par_iter()
            .map(|&seed| simulate_finite(env, profile, &vec![n; m], s0, horizon, &mut ChaCha8Rng::seed_from_u64(seed)))
            .collect::<Result<_>>()?;
        for run in &runs {
            r_max = run.rewards.iter().flatten().fold(r_max, |a, r| a.max(r.abs()));
        }
        for t in 0..=horizon {
            let gaps =
                runs.iter().map(|r| state_distance(&reference.states[t], &r.path[t])).collect::<Result<Vec<_>>>()?;
            let reward_gaps: Vec<f64> = runs
                .iter()
                .map(|run| {
                    (0..m)
                        .map(|i| {
                            let mut d = 0.0;
                            let mut disc = 1.0;
                            for s in 0..t {
                                d += disc * (reference.rewards[s][i] - run.rewards[s][i]);
                                disc *= env.gamma();
                            }
                            d.abs()
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            let (gap_mean, gap_std) = mean_std(&gaps);
            let (reward_gap_mean, reward_gap_std) = mean_std(&reward_gaps);
            rows.push(GapRow { n, t, gap_mean, gap_std, reward_gap_mean, reward_gap_std, reps: replications });
        }
    }
    let tail_bound = env.gamma().powi(horizon as i32) * r_max / (1.0 - env.gamma());
    Ok(GapReport { rows, tail_bound })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for an exact fit or two points).
    pub slope_se: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<OlsFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite data".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * n * (1.0 + mx * mx) {
        return Err(Error::DegenerateFit("no spread in the regressor".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if xs.len() > 2 {
        let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(OlsFit { slope, intercept, slope_se })
}

/// Slope of log(mean gap) against log(N) at time `t`.
pub fn rate_fit(report: &GapReport, t: usize) -> Result<f64> {
    let rows: Vec<&GapRow> = report.rows_at(t).collect();
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} distinct population sizes at t = {t}, need 3", ns.len())));
    }
    if rows.iter().any(|r| r.gap_mean <= 0.0) {
        return Err(Error::DegenerateFit("zero gap has no logarithm".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.gap_mean.ln()).collect();
    Ok(ols(&xs, &ys)?.slope)
}
