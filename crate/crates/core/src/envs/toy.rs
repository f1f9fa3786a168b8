//! Small diagnostic games with known solutions.

use super::EnvSpec;
use crate::error::Result;
use crate::meanfield::{DecisionRule, MeanFieldState};

/// Mass each coalition of the decoupled toy wants on its state 0.
pub const DECOUPLED_TARGETS: [f64; 2] = [0.25, 0.75];

const TOY_FLIP: f64 = 0.9;
const TOY_SWITCH_COST: f64 = 0.2;

/// Two coalitions on two states each, with two actions: keep (0) or switch (1),
/// each succeeding with probability 0.9. Coalition i is paid for holding mass
/// `DECOUPLED_TARGETS[i]` on state 0 and charged for switching; nothing it
/// sees or earns depends on the other coalition. Rewards lie in `[0.3, 1.5]`.
pub fn decoupled_toy(gamma: f64) -> EnvSpec {
    EnvSpec::builder("decoupled_toy", vec![2, 2], vec![2, 2])
        .horizon(10)
        .gamma(gamma)
        .kernel(true, |_, x, a, _| {
            let other = 1 - x;
            if a == 0 {
                vec![(x, TOY_FLIP), (other, 1.0 - TOY_FLIP)]
            } else {
                vec![(other, TOY_FLIP), (x, 1.0 - TOY_FLIP)]
            }
        })
        .mean_field_reward(|i, s, rule| {
            let mu = s.coalition(i);
            let switching: f64 = (0..2).map(|x| mu[x] * rule.prob(x, 1)).sum();
            1.5 - (mu[0] - DECOUPLED_TARGETS[i]).abs() - TOY_SWITCH_COST * switching
        })
        .stay_action_all(0)
        .test_set(vec![
            MeanFieldState::from_vecs(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).expect("valid"),
            MeanFieldState::from_vecs(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).expect("valid"),
        ])
        .build()
        .expect("decoupled toy is well formed")
}

/// One coalition whose reward is `−‖ā − target‖²` (squared Frobenius norm);
/// agents are scattered uniformly regardless of their actions.
pub fn convex_target(target: &DecisionRule, gamma: f64) -> Result<EnvSpec> {
    let (ns, na) = (target.n_states(), target.n_actions());
    let goal = target.clone();
    EnvSpec::builder("convex_target", vec![ns], vec![na])
        .horizon(10)
        .gamma(gamma)
        .kernel(true, move |_, _, _, _| (0..ns).map(|y| (y, 1.0 / ns as f64)).collect())
        .mean_field_reward(move |_, _, rule| {
            -rule.as_slice().iter().zip(goal.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .test_set(vec![MeanFieldState::from_vecs(vec![vec![1.0 / ns as f64; ns]])?])
        .build()
}
