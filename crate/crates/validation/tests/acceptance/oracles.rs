//! Reference computations that share no code path with the solvers they check.

use mftg::envs::{EnvSpec, DECOUPLED_TARGETS};
use mftg::quantize::{DiscreteActionSet, StateGrid};
use mftg::{mean_field_reward, mean_field_transition, Distribution, MeanFieldState};
use nalgebra::{DMatrix, DVector};

/// Every mixed equilibrium of a nondegenerate bimatrix game, by enumerating
/// equal-size support pairs and solving the indifference conditions.
pub fn support_enumeration(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (rows, cols) = (a.len(), a[0].len());
    let mut out = Vec::new();
    for size in 1..=rows.min(cols) {
        for sr in subsets(rows, size) {
            for sc in subsets(cols, size) {
                // column mix makes the row player indifferent over sr
                let Some(y) = indifferent_mix(size, |r, c| a[sr[r]][sc[c]]) else { continue };
                // row mix makes the column player indifferent over sc
                let Some(x) = indifferent_mix(size, |c, r| b[sr[r]][sc[c]]) else { continue };
                if x.iter().chain(&y).any(|&p| p < -1e-12) {
                    continue;
                }
                let mut px = vec![0.0; rows];
                let mut py = vec![0.0; cols];
                for (k, &r) in sr.iter().enumerate() {
                    px[r] = x[k].max(0.0);
                }
                for (k, &c) in sc.iter().enumerate() {
                    py[c] = y[k].max(0.0);
                }
                let row_pay: Vec<f64> = (0..rows).map(|r| (0..cols).map(|c| a[r][c] * py[c]).sum()).collect();
                let col_pay: Vec<f64> = (0..cols).map(|c| (0..rows).map(|r| b[r][c] * px[r]).sum()).collect();
                let v: f64 = (0..rows).map(|r| px[r] * row_pay[r]).sum();
                let w: f64 = (0..cols).map(|c| py[c] * col_pay[c]).sum();
                if row_pay.iter().all(|&p| p <= v + 1e-9) && col_pay.iter().all(|&p| p <= w + 1e-9) {
                    out.push((px, py));
                }
            }
        }
    }
    out
}

/// Solves `Σ_c m(r, c) y_c = v` for all r and `Σ y = 1`.
fn indifferent_mix(size: usize, m: impl Fn(usize, usize) -> f64) -> Option<Vec<f64>> {
    let n = size + 1;
    let mut lhs = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for r in 0..size {
        for c in 0..size {
            lhs[(r, c)] = m(r, c);
        }
        lhs[(r, size)] = -1.0;
    }
    for c in 0..size {
        lhs[(size, c)] = 1.0;
    }
    rhs[size] = 1.0;
    let sol = lhs.lu().solve(&rhs)?;
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().take(size).copied().collect())
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| (0..n).filter(|&i| m >> i & 1 == 1).collect())
        .collect()
}

/// Binomial coefficients from Pascal's triangle.
pub fn pascal(n: usize, r: usize) -> u128 {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    row.get(r).copied().unwrap_or(0)
}

/// All compositions of `k` into `n` non-negative parts, as distributions.
pub fn compositions(n: usize, k: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(left - c, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, n, &mut Vec::new(), &mut out);
    out.into_iter().map(|c| c.iter().map(|&v| v as f64 / k as f64).collect()).collect()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Discounted Q of one coalition of a decoupled game on its own projected grid:
/// `q[x][a]` for own grid point x and rule index a.
pub struct OwnModel {
    pub reward: Vec<Vec<f64>>,
    pub next: Vec<Vec<usize>>,
}

/// Reads off coalition `i`'s one-step model from the environment, holding the
/// other coalitions at their first grid point with their first rule.
pub fn own_model(env: &EnvSpec, grid: &StateGrid, sets: &[DiscreteActionSet], i: usize) -> OwnModel {
    let own = grid.coalition_grid(i);
    let mut reward = vec![vec![0.0; sets[i].len()]; own.len()];
    let mut next = vec![vec![0; sets[i].len()]; own.len()];
    for x in 0..own.len() {
        let state = MeanFieldState::new(
            (0..env.num_coalitions())
                .map(|j| if j == i { grid.coalition_point(i, x) } else { grid.coalition_point(j, 0) })
                .collect(),
        );
        for a in 0..sets[i].len() {
            let rules: Vec<_> = (0..env.num_coalitions()).map(|j| sets[j].rule(if j == i { a } else { 0 })).collect();
            reward[x][a] = mean_field_reward(env, i, &state, &rules[i]).unwrap();
            let s1 = mean_field_transition(env, &state, &rules).unwrap();
            next[x][a] = grid.project_components(&s1).unwrap()[i];
        }
    }
    OwnModel { reward, next }
}

/// Infinite-horizon value iteration to a 1e-12 sup-norm change.
pub fn value_iteration(model: &OwnModel, gamma: f64) -> Vec<Vec<f64>> {
    let n = model.reward.len();
    let mut v = vec![0.0; n];
    loop {
        let q: Vec<Vec<f64>> = (0..n)
            .map(|x| model.reward[x].iter().zip(&model.next[x]).map(|(r, &y)| r + gamma * v[y]).collect())
            .collect();
        let nv: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let change = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = nv;
        if change < 1e-12 {
            return q;
        }
    }
}

/// Time-indexed greedy rules of the finite-horizon problem: `policy[t][x]`.
pub fn backward_induction(model: &OwnModel, gamma: f64, horizon: usize) -> Vec<Vec<usize>> {
    let n = model.reward.len();
    let mut v = vec![0.0; n];
    let mut policy = vec![vec![0; n]; horizon];
    for t in (0..horizon).rev() {
        let mut nv = vec![0.0; n];
        for x in 0..n {
            let (best, val) = argmax(model.reward[x].iter().zip(&model.next[x]).map(|(r, &y)| r + gamma * v[y]));
            policy[t][x] = best;
            nv[x] = val;
        }
        v = nv;
    }
    policy
}

pub fn argmax(xs: impl Iterator<Item = f64>) -> (usize, f64) {
    xs.enumerate().fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc })
}

/// Continuous-state optimal Q of decoupled-toy coalition `i` at mass `mu0` on
/// state 0, from value iteration on a fine interpolated grid of `[0, 1]`.
pub struct ToyOracle {
    values: Vec<f64>,
    target: f64,
    gamma: f64,
}

const TOY_FLIP: f64 = 0.9;
const TOY_SWITCH: f64 = 0.2;

impl ToyOracle {
    pub fn new(i: usize, gamma: f64, resolution: usize) -> Self {
        let mut o = Self { values: vec![0.0; resolution + 1], target: DECOUPLED_TARGETS[i], gamma };
        loop {
            let nv: Vec<f64> = (0..=resolution)
                .map(|j| {
                    let mu0 = j as f64 / resolution as f64;
                    (0..4).map(|r| o.q(mu0, [r & 1, r >> 1])).fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let change = nv.iter().zip(&o.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            o.values = nv;
            if change < 1e-12 {
                return o;
            }
        }
    }

    fn value(&self, mu0: f64) -> f64 {
        let k = self.values.len() - 1;
        let pos = mu0.clamp(0.0, 1.0) * k as f64;
        let lo = (pos.floor() as usize).min(k - 1);
        let w = pos - lo as f64;
        self.values[lo] * (1.0 - w) + self.values[lo + 1] * w
    }

    /// Pure rule `actions[x]` ∈ {keep, switch} for states 0 and 1.
    pub fn q(&self, mu0: f64, actions: [usize; 2]) -> f64 {
        let mass = [mu0, 1.0 - mu0];
        let switching: f64 = (0..2).map(|x| mass[x] * actions[x] as f64).sum();
        let reward = 1.5 - (mu0 - self.target).abs() - TOY_SWITCH * switching;
        let to_zero = |x: usize| match (x, actions[x]) {
            (0, 0) | (1, 1) => TOY_FLIP,
            _ => 1.0 - TOY_FLIP,
        };
        let next = mass[0] * to_zero(0) + mass[1] * to_zero(1);
        reward + self.gamma * self.value(next)
    }
}

/// Pure actions of a pure rule, row by row.
pub fn pure_actions(d: &mftg::DecisionRule) -> Vec<usize> {
    (0..d.n_states()).map(|x| argmax(d.row(x).iter().copied()).0).collect()
}

pub fn sums_to_one(d: &Distribution) -> bool {
    let s: f64 = d.probs().iter().sum();
    (s - 1.0).abs() <= 1e-9 && d.probs().iter().all(|&p| p >= -1e-12)
}
