//! Mean-field policies: maps from (time, mean-field state) to a decision rule.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::meanfield::{DecisionRule, MeanFieldState};

/// A central player's policy. Must be deterministic: equal inputs give equal rules.
///
/// The time index lets finite-horizon best responses be non-stationary; stationary
/// policies ignore it.
pub trait MeanFieldPolicy: Send + Sync {
    fn decide(&self, t: usize, state: &MeanFieldState) -> Result<DecisionRule>;

    fn describe(&self) -> String {
        "policy".into()
    }
}

/// One policy per coalition.
pub type PolicyProfile = Vec<Arc<dyn MeanFieldPolicy>>;

impl fmt::Debug for dyn MeanFieldPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Decision rules of every coalition at `(t, state)`.
pub fn profile_rules(
    profile: &[Arc<dyn MeanFieldPolicy>],
    t: usize,
    state: &MeanFieldState,
) -> Result<Vec<DecisionRule>> {
    profile.iter().map(|p| p.decide(t, state)).collect()
}

/// Checks that the profile has one policy per coalition producing correctly shaped rules.
pub fn check_profile(env: &EnvSpec, profile: &[Arc<dyn MeanFieldPolicy>], probe: &MeanFieldState) -> Result<()> {
    if profile.len() != env.num_coalitions() {
        return Err(Error::DimensionMismatch {
            what: "policies per coalition",
            expected: env.num_coalitions(),
            got: profile.len(),
        });
    }
    for (i, p) in profile.iter().enumerate() {
        p.decide(0, probe)?.check_shape(env.num_states(i), env.num_actions(i))?;
    }
    Ok(())
}

/// Plays the same rule in every state of the world.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub DecisionRule);

impl MeanFieldPolicy for ConstantPolicy {
    fn decide(&self, _t: usize, _state: &MeanFieldState) -> Result<DecisionRule> {
        Ok(self.0.clone())
    }

    fn describe(&self) -> String {
        "constant".into()
    }
}

/// Wraps a closure as a policy.
pub struct FnPolicy<F>(pub F);

impl<F> MeanFieldPolicy for FnPolicy<F>
where
    F: Fn(usize, &MeanFieldState) -> Result<DecisionRule> + Send + Sync,
{
    fn decide(&self, t: usize, state: &MeanFieldState) -> Result<DecisionRule> {
        (self.0)(t, state)
    }

    fn describe(&self) -> String {
        "closure".into()
    }
}

/// Row-wise softmax of an affine function of the flattened joint state; Lipschitz in the state.
#[derive(Debug, Clone)]
pub struct LinearSoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    input: usize,
    /// `(x, a)`-major weights, `input` entries each.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearSoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, input: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let rows = n_states * n_actions;
        if weights.len() != rows * input || bias.len() != rows {
            return Err(Error::DimensionMismatch {
                what: "linear softmax parameters",
                expected: rows * (input + 1),
                got: weights.len() + bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear softmax parameter".into()));
        }
        Ok(Self { n_states, n_actions, input, weights, bias })
    }

    /// Random parameters in `[-scale, scale]` for coalition `i` of `env`.
    pub fn random<R: Rng + ?Sized>(env: &EnvSpec, i: usize, scale: f64, rng: &mut R) -> Self {
        let (ns, na) = (env.num_states(i), env.num_actions(i));
        let input: usize = env.state_sizes().iter().sum();
        let weights = (0..ns * na * input).map(|_| rng.random_range(-scale..=scale)).collect();
        let bias = (0..ns * na).map(|_| rng.random_range(-scale..=scale)).collect();
        Self { n_states: ns, n_actions: na, input, weights, bias }
    }
}

impl MeanFieldPolicy for LinearSoftmaxPolicy {
    fn decide(&self, _t: usize, state: &MeanFieldState) -> Result<DecisionRule> {
        let s = state.flatten();
        if s.len() != self.input {
            return Err(Error::DimensionMismatch { what: "linear softmax input", expected: self.input, got: s.len() });
        }
        let mut data = Vec::with_capacity(self.n_states * self.n_actions);
        for x in 0..self.n_states {
            let logits: Vec<f64> = (0..self.n_actions)
                .map(|a| {
                    let r = x * self.n_actions + a;
                    let w = &self.weights[r * self.input..(r + 1) * self.input];
                    self.bias[r] + w.iter().zip(&s).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            data.extend(e.iter().map(|v| v / z));
        }
        Ok(DecisionRule::from_drifted(self.n_states, self.n_actions, data))
    }

    fn describe(&self) -> String {
        "linear-softmax".into()
    }
}

/// Uniform action distribution for every coalition.
pub fn uniform_profile(env: &EnvSpec) -> PolicyProfile {
    (0..env.num_coalitions())
        .map(|i| {
            Arc::new(ConstantPolicy(DecisionRule::uniform(env.num_states(i), env.num_actions(i))))
                as Arc<dyn MeanFieldPolicy>
        })
        .collect()
}
