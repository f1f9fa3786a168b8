//! One-shot stage games over discrete action sets: global optima, saddle points,
//! pure equilibria, two-player mixed equilibria and payoff evaluation.
//!
//! Joint actions are flattened row-major with player 0 most significant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::Distribution;
use crate::quantize::{binomial, SimplexGrid};

/// Tolerance of the best-response conditions used while searching for equilibria.
const BR_TOL: f64 = 1e-10;
/// Probabilities above this negative value are treated as zero.
const FEAS_TOL: f64 = -1e-10;
/// Ties in total payoff within this tolerance keep the earlier candidate.
const SELECT_TOL: f64 = 1e-9;
/// Upper bound on support pairs visited by the mixed enumeration.
const SUPPORT_BUDGET: u128 = 20_000;
/// Games up to this many actions per player get the mixed ε-grid fallback.
const GRID_FALLBACK_MAX: usize = 4;
const GRID_FALLBACK_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePayoffs {
    shape: Vec<usize>,
    tensors: Vec<Vec<f64>>,
}

impl StagePayoffs {
    pub fn new(shape: Vec<usize>, tensors: Vec<Vec<f64>>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidArgument("stage game needs at least one action per player".into()));
        }
        if tensors.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                what: "stage payoff tensors",
                expected: shape.len(),
                got: tensors.len(),
            });
        }
        let len: usize = shape.iter().product();
        for t in &tensors {
            if t.len() != len {
                return Err(Error::DimensionMismatch {
                    what: "stage payoff tensor entries",
                    expected: len,
                    got: t.len(),
                });
            }
            if let Some(v) = t.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("stage payoff {v}")));
            }
        }
        Ok(Self { shape, tensors })
    }

    /// Two-player game from row-major matrices `a` (row player) and `b` (column player).
    pub fn bimatrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        let m = a.first().map_or(0, Vec::len);
        if b.len() != n || a.iter().chain(b).any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("bimatrix payoffs must share one rectangular shape".into()));
        }
        Self::new(vec![n, m], vec![a.concat(), b.concat()])
    }

    pub fn num_players(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.tensors[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        &self.tensors[i]
    }

    pub fn payoff(&self, i: usize, joint: usize) -> f64 {
        self.tensors[i][joint]
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().zip(&self.shape).fold(0, |acc, (&a, &n)| acc * n + a)
    }

    pub fn joint_actions(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.shape.len()];
        for i in (0..self.shape.len()).rev() {
            out[i] = idx % self.shape[i];
            idx /= self.shape[i];
        }
        out
    }

    /// Stride of player `i`'s coordinate in the flat joint index.
    fn stride(&self, i: usize) -> usize {
        self.shape[i + 1..].iter().product()
    }

    /// For each joint index, player `i`'s best payoff over its own action with the others fixed.
    fn best_reply_values(&self, i: usize) -> Vec<f64> {
        let stride = self.stride(i);
        let n = self.shape[i];
        let t = &self.tensors[i];
        let mut out = vec![f64::NEG_INFINITY; t.len()];
        let block = stride * n;
        for base in (0..t.len()).step_by(block) {
            for off in 0..stride {
                let mut best = f64::NEG_INFINITY;
                for a in 0..n {
                    best = best.max(t[base + a * stride + off]);
                }
                for a in 0..n {
                    out[base + a * stride + off] = best;
                }
            }
        }
        out
    }

    /// Payoff vectors facing each player: `(i, a) ↦ E[payoff_i | a_i = a, others ~ profile]`.
    fn deviation_payoffs(&self, p: &MixedProfile) -> Vec<Vec<f64>> {
        let m = self.num_players();
        let mut out: Vec<Vec<f64>> = self.shape.iter().map(|&n| vec![0.0; n]).collect();
        let mut actions = vec![0usize; m];
        for idx in 0..self.len() {
            // decode incrementally
            if idx > 0 {
                let mut k = m;
                loop {
                    k -= 1;
                    actions[k] += 1;
                    if actions[k] < self.shape[k] {
                        break;
                    }
                    actions[k] = 0;
                }
            }
            for i in 0..m {
                let mut w = 1.0;
                for (j, &a) in actions.iter().enumerate() {
                    if j != i {
                        w *= p.strategies[j][a];
                        if w == 0.0 {
                            break;
                        }
                    }
                }
                if w != 0.0 {
                    out[i][actions[i]] += w * self.tensors[i][idx];
                }
            }
        }
        out
    }

    fn check_profile(&self, p: &MixedProfile) -> Result<()> {
        if p.strategies.len() != self.num_players() {
            return Err(Error::DimensionMismatch {
                what: "mixed profile players",
                expected: self.num_players(),
                got: p.strategies.len(),
            });
        }
        for (s, &n) in p.strategies.iter().zip(&self.shape) {
            if s.len() != n {
                return Err(Error::DimensionMismatch { what: "mixed strategy actions", expected: n, got: s.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedProfile {
    pub strategies: Vec<Distribution>,
}

impl MixedProfile {
    pub fn pure(shape: &[usize], actions: &[usize]) -> Self {
        Self { strategies: shape.iter().zip(actions).map(|(&n, &a)| Distribution::point_mass(n, a)).collect() }
    }

    /// Highest-probability action per player, lowest index on ties.
    pub fn modes(&self) -> Vec<usize> {
        self.strategies
            .iter()
            .map(|s| {
                let mut best = 0;
                for (a, &p) in s.probs().iter().enumerate() {
                    if p > s[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    pub fn is_pure(&self) -> bool {
        self.strategies.iter().all(|s| s.probs().contains(&1.0))
    }
}

/// How [`solve_stage_nash_detailed`] found its profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    GlobalOptimum,
    Saddle,
    PureNash,
    SupportEnumeration,
    LemkeHowson,
    ApproximateGrid,
    ApproximatePure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSolution {
    pub profile: MixedProfile,
    pub method: SolveMethod,
    /// Largest unilateral deviation gain of the profile.
    pub epsilon: f64,
}

/// Joint action maximizing every player's payoff at once, lexicographically smallest among several.
pub fn find_global_optimum(g: &StagePayoffs) -> Option<Vec<usize>> {
    let maxima: Vec<f64> = g.tensors.iter().map(|t| t.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    (0..g.len()).find(|&idx| g.tensors.iter().zip(&maxima).all(|(t, &mx)| t[idx] >= mx)).map(|idx| g.joint_actions(idx))
}

fn is_zero_sum(g: &StagePayoffs) -> bool {
    g.num_players() == 2 && g.tensors[0].iter().zip(&g.tensors[1]).all(|(a, b)| (a + b).abs() <= 1e-9)
}

/// Pure saddle `(row, col)` of a two-player zero-sum game where the row player maximizes.
pub fn find_saddle_point(g: &StagePayoffs) -> Result<Option<(usize, usize)>> {
    if !is_zero_sum(g) {
        return Err(Error::NotZeroSum);
    }
    let (n, m) = (g.shape[0], g.shape[1]);
    let a = &g.tensors[0];
    let row_min: Vec<f64> = (0..n).map(|r| (0..m).map(|c| a[r * m + c]).fold(f64::INFINITY, f64::min)).collect();
    let col_max: Vec<f64> = (0..m).map(|c| (0..n).map(|r| a[r * m + c]).fold(f64::NEG_INFINITY, f64::max)).collect();
    for r in 0..n {
        for c in 0..m {
            let v = a[r * m + c];
            if v <= row_min[r] && v >= col_max[c] {
                return Ok(Some((r, c)));
            }
        }
    }
    Ok(None)
}

/// All pure equilibria as flat joint indices, ascending.
pub fn pure_nash_equilibria(g: &StagePayoffs) -> Vec<usize> {
    let best: Vec<Vec<f64>> = (0..g.num_players()).map(|i| g.best_reply_values(i)).collect();
    (0..g.len()).filter(|&idx| (0..g.num_players()).all(|i| g.tensors[i][idx] >= best[i][idx] - BR_TOL)).collect()
}

/// Expected payoff of every player under the product of the mixed strategies.
pub fn nash_value(g: &StagePayoffs, p: &MixedProfile) -> Result<Vec<f64>> {
    g.check_profile(p)?;
    let dev = g.deviation_payoffs(p);
    Ok(dev.iter().zip(&p.strategies).map(|(d, s)| d.iter().zip(s.probs()).map(|(v, q)| v * q).sum()).collect())
}

/// Largest gain any player obtains from a unilateral pure deviation.
pub fn verify_nash(g: &StagePayoffs, p: &MixedProfile) -> Result<f64> {
    g.check_profile(p)?;
    let dev = g.deviation_payoffs(p);
    let mut gain = f64::NEG_INFINITY;
    for (d, s) in dev.iter().zip(&p.strategies) {
        let value: f64 = d.iter().zip(s.probs()).map(|(v, q)| v * q).sum();
        let best = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        gain = gain.max(best - value);
    }
    Ok(gain.max(0.0))
}

pub fn is_nash(g: &StagePayoffs, p: &MixedProfile, tol: f64) -> Result<bool> {
    Ok(verify_nash(g, p)? <= tol)
}

/// Equilibrium after the selection pipeline; see [`solve_stage_nash_detailed`].
pub fn solve_stage_nash(g: &StagePayoffs) -> Result<MixedProfile> {
    solve_stage_nash_detailed(g).map(|s| s.profile)
}

/// Global optimum, then zero-sum saddle, then the best pure equilibrium by total payoff,
/// then (two players) mixed equilibria by support enumeration and Lemke–Howson,
/// and finally the smallest-ε profile on a strategy grid.
pub fn solve_stage_nash_detailed(g: &StagePayoffs) -> Result<StageSolution> {
    let m = g.num_players();
    if m < 2 {
        // one player: the best action is an equilibrium
        let joint = find_global_optimum(g).expect("single-player game has a maximizer");
        return finish(g, MixedProfile::pure(&g.shape, &joint), SolveMethod::GlobalOptimum);
    }
    if let Some(joint) = find_global_optimum(g) {
        return finish(g, MixedProfile::pure(&g.shape, &joint), SolveMethod::GlobalOptimum);
    }
    if is_zero_sum(g) {
        if let Some((r, c)) = find_saddle_point(g)? {
            return finish(g, MixedProfile::pure(&g.shape, &[r, c]), SolveMethod::Saddle);
        }
    }
    let pure = pure_nash_equilibria(g);
    if !pure.is_empty() {
        let total = |idx: usize| -> f64 { g.tensors.iter().map(|t| t[idx]).sum() };
        let mut best = pure[0];
        for &idx in &pure[1..] {
            if total(idx) > total(best) + SELECT_TOL {
                best = idx;
            }
        }
        return finish(g, MixedProfile::pure(&g.shape, &g.joint_actions(best)), SolveMethod::PureNash);
    }
    if m > 2 {
        return Err(Error::NoPureEquilibrium { players: m });
    }
    let (a, b) = (&g.tensors[0], &g.tensors[1]);
    let (n, k) = (g.shape[0], g.shape[1]);
    if let Some(p) = select(g, support_enumeration(a, b, n, k)) {
        return finish(g, p, SolveMethod::SupportEnumeration);
    }
    if let Some(p) = select(g, lemke_howson_all(a, b, n, k)) {
        return finish(g, p, SolveMethod::LemkeHowson);
    }
    if n <= GRID_FALLBACK_MAX && k <= GRID_FALLBACK_MAX {
        return finish(g, grid_fallback(g)?, SolveMethod::ApproximateGrid);
    }
    let mut best = (f64::INFINITY, 0);
    for idx in 0..g.len() {
        let p = MixedProfile::pure(&g.shape, &g.joint_actions(idx));
        let e = verify_nash(g, &p)?;
        if e < best.0 {
            best = (e, idx);
        }
    }
    finish(g, MixedProfile::pure(&g.shape, &g.joint_actions(best.1)), SolveMethod::ApproximatePure)
}

fn finish(g: &StagePayoffs, profile: MixedProfile, method: SolveMethod) -> Result<StageSolution> {
    let epsilon = verify_nash(g, &profile)?;
    Ok(StageSolution { profile, method, epsilon })
}

/// Highest total payoff among verified candidates; earlier candidates win ties.
fn select(g: &StagePayoffs, candidates: Vec<MixedProfile>) -> Option<MixedProfile> {
    let mut best: Option<(f64, MixedProfile)> = None;
    for p in candidates {
        match verify_nash(g, &p) {
            Ok(e) if e <= 1e-9 => {}
            _ => continue,
        }
        let total: f64 = nash_value(g, &p).ok()?.iter().sum();
        if best.as_ref().is_none_or(|(t, _)| total > *t + SELECT_TOL) {
            best = Some((total, p));
        }
    }
    best.map(|(_, p)| p)
}

/// Gaussian elimination with partial pivoting; `None` when (numerically) singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / a[r][r];
    }
    Some(x)
}

/// Lexicographic enumeration of all `s`-subsets of `0..n`.
fn subsets(n: usize, s: usize) -> Vec<Vec<usize>> {
    if s > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..s).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..s).rev().find(|&i| cur[i] < n - s + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..s {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Mixed strategy on `support` making the opponent indifferent over `opp_support`:
/// solves Σ_{j∈support} M[o][j]·w_j = v for all o ∈ opp_support and Σ w = 1.
fn indifference(
    m: impl Fn(usize, usize) -> f64,
    support: &[usize],
    opp_support: &[usize],
    dim: usize,
) -> Option<Vec<f64>> {
    let s = support.len();
    let mut rows = Vec::with_capacity(s + 1);
    let mut rhs = Vec::with_capacity(s + 1);
    for &o in opp_support {
        let mut row: Vec<f64> = support.iter().map(|&j| m(o, j)).collect();
        row.push(-1.0);
        rows.push(row);
        rhs.push(0.0);
    }
    let mut norm = vec![1.0; s];
    norm.push(0.0);
    rows.push(norm);
    rhs.push(1.0);
    let sol = solve_linear(rows, rhs)?;
    let mut w = vec![0.0; dim];
    for (k, &j) in support.iter().enumerate() {
        if sol[k] < FEAS_TOL {
            return None;
        }
        w[j] = sol[k].max(0.0);
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return None;
    }
    w.iter_mut().for_each(|p| *p /= total);
    Some(w)
}

fn support_enumeration(a: &[f64], b: &[f64], n: usize, m: usize) -> Vec<MixedProfile> {
    let mut out = Vec::new();
    let mut visited: u128 = 0;
    for s in 1..=n.min(m) {
        let pairs = binomial(n as u64, s as u64).saturating_mul(binomial(m as u64, s as u64));
        visited = visited.saturating_add(pairs);
        if visited > SUPPORT_BUDGET {
            break;
        }
        for rows in subsets(n, s) {
            for cols in subsets(m, s) {
                // column mix makes rows indifferent under A, row mix makes columns indifferent under B
                let Some(y) = indifference(|r, c| a[r * m + c], &cols, &rows, m) else { continue };
                let Some(x) = indifference(|c, r| b[r * m + c], &rows, &cols, n) else { continue };
                let ay: Vec<f64> = (0..n).map(|r| (0..m).map(|c| a[r * m + c] * y[c]).sum()).collect();
                let xb: Vec<f64> = (0..m).map(|c| (0..n).map(|r| b[r * m + c] * x[r]).sum()).collect();
                let vr = ay.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let vc = xb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if rows.iter().all(|&r| ay[r] >= vr - BR_TOL) && cols.iter().all(|&c| xb[c] >= vc - BR_TOL) {
                    out.push(MixedProfile {
                        strategies: vec![Distribution::from_drifted(x), Distribution::from_drifted(y)],
                    });
                }
            }
        }
    }
    out
}

/// Complementary-pivoting tableau over `n + m` labels; one column per label plus the right-hand side.
struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Labels of the initial basis, used by the lexicographic ratio test.
    slack: Vec<usize>,
}

impl Tableau {
    fn rhs(&self) -> usize {
        self.rows[0].len() - 1
    }

    /// Pivots `entering` into the basis; returns the leaving label.
    fn pivot(&mut self, entering: usize) -> Option<usize> {
        let rhs = self.rhs();
        let mut best: Option<usize> = None;
        for r in 0..self.rows.len() {
            let piv = self.rows[r][entering];
            if piv <= 1e-12 {
                continue;
            }
            best = Some(match best {
                None => r,
                Some(b) => {
                    let pb = self.rows[b][entering];
                    let key = |row: &Vec<f64>, p: f64, col: usize| row[col] / p;
                    let mut pick = b;
                    let cols = std::iter::once(rhs).chain(self.slack.iter().copied());
                    for col in cols {
                        let (kr, kb) = (key(&self.rows[r], piv, col), key(&self.rows[b], pb, col));
                        if kr < kb - 1e-12 {
                            pick = r;
                            break;
                        }
                        if kr > kb + 1e-12 {
                            break;
                        }
                    }
                    pick
                }
            });
        }
        let r = best?;
        let p = self.rows[r][entering];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (k, row) in self.rows.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            let f = row[entering];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        Some(std::mem::replace(&mut self.basis[r], entering))
    }

    fn values(&self, labels: std::ops::Range<usize>) -> Vec<f64> {
        let rhs = self.rhs();
        let mut out = vec![0.0; labels.len()];
        for (r, &l) in self.basis.iter().enumerate() {
            if labels.contains(&l) {
                out[l - labels.start] = self.rows[r][rhs].max(0.0);
            }
        }
        out
    }
}

/// Lemke–Howson path from dropping label `k`; `None` if pivoting breaks down.
fn lemke_howson(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Option<MixedProfile> {
    let shift = |t: &[f64]| 1.0 - t.iter().copied().fold(f64::INFINITY, f64::min);
    let (sa, sb) = (shift(a), shift(b));
    // Q-system rows: Σ_j A'_ij y_j + r_i = 1, label i for r_i and n + j for y_j
    let mut q_rows = vec![vec![0.0; n + m + 1]; n];
    for (i, row) in q_rows.iter_mut().enumerate() {
        for j in 0..m {
            row[n + j] = a[i * m + j] + sa;
        }
        row[i] = 1.0;
        row[n + m] = 1.0;
    }
    // P-system rows: Σ_i B'_ij x_i + s_j = 1, label i for x_i and n + j for s_j
    let mut p_rows = vec![vec![0.0; n + m + 1]; m];
    for (j, row) in p_rows.iter_mut().enumerate() {
        for i in 0..n {
            row[i] = b[i * m + j] + sb;
        }
        row[n + j] = 1.0;
        row[n + m] = 1.0;
    }
    let mut q = Tableau { rows: q_rows, basis: (0..n).collect(), slack: (0..n).collect() };
    let mut p = Tableau { rows: p_rows, basis: (n..n + m).collect(), slack: (n..n + m).collect() };
    // a row label enters through x (P-system), a column label through y (Q-system)
    let mut entering = k;
    let mut in_p = k < n;
    for _ in 0..10_000 {
        let leaving = if in_p { p.pivot(entering)? } else { q.pivot(entering)? };
        if leaving == k {
            let x = p.values(0..n);
            let y = q.values(n..n + m);
            let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
            if sx <= 0.0 || sy <= 0.0 {
                return None;
            }
            return Some(MixedProfile {
                strategies: vec![
                    Distribution::from_drifted(x.iter().map(|v| v / sx).collect()),
                    Distribution::from_drifted(y.iter().map(|v| v / sy).collect()),
                ],
            });
        }
        entering = leaving;
        in_p = !in_p;
    }
    None
}

fn lemke_howson_all(a: &[f64], b: &[f64], n: usize, m: usize) -> Vec<MixedProfile> {
    (0..n + m).filter_map(|k| lemke_howson(a, b, n, m, k)).collect()
}

/// Smallest-ε pair of mixed strategies on a resolution-20 grid.
fn grid_fallback(g: &StagePayoffs) -> Result<MixedProfile> {
    let gr = SimplexGrid::new(g.shape[0], GRID_FALLBACK_K)?;
    let gc = SimplexGrid::new(g.shape[1], GRID_FALLBACK_K)?;
    let cols: Vec<Distribution> = gc.points().collect();
    let mut best: Option<(f64, MixedProfile)> = None;
    for x in gr.points() {
        for y in &cols {
            let p = MixedProfile { strategies: vec![x.clone(), y.clone()] };
            let e = verify_nash(g, &p)?;
            if best.as_ref().is_none_or(|(b, _)| e < *b) {
                best = Some((e, p));
            }
        }
    }
    Ok(best.expect("grids are non-empty").1)
}
