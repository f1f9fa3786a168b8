//! Composition grids on probability simplexes, the L1 projection onto them,
//! product grids of mean-field states, discretized decision rules and mesh sizes.

use rand::Rng;
use rand_distr::{Distribution as _, Exp1};
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::meanfield::{l1_distance, DecisionRule, Distribution, MeanFieldState};

/// Largest action set [`DiscreteActionSet::new`] accepts.
pub const MAX_ACTION_RULES: usize = 1_000_000;

const TIE_TOL: f64 = 1e-12;

/// C(n, r) saturating at `u128::MAX`.
pub fn binomial(n: u64, r: u64) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for j in 0..r {
        acc = match acc.checked_mul((n - j) as u128) {
            Some(v) => v / (j as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of compositions of `k` into `parts` non-negative parts.
fn compositions(k: usize, parts: usize) -> u128 {
    if parts == 0 {
        return u128::from(k == 0);
    }
    binomial((k + parts - 1) as u64, (parts - 1) as u64)
}

/// All distributions on `n` points whose entries are multiples of `1/k`,
/// indexed in lexicographic ascending order of their coordinate vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplexGrid {
    dim: usize,
    resolution: usize,
    len: usize,
    /// `table[r][p]` = compositions of `r` into `p` parts.
    #[serde(skip)]
    table: Vec<Vec<u128>>,
}

impl SimplexGrid {
    pub fn new(dim: usize, resolution: usize) -> Result<Self> {
        if dim == 0 || resolution == 0 {
            return Err(Error::InvalidArgument(format!(
                "simplex grid needs n >= 1 and k >= 1 (got n={dim}, k={resolution})"
            )));
        }
        let total = compositions(resolution, dim);
        let len = usize::try_from(total).ok().filter(|&l| l < usize::MAX / 2).ok_or_else(|| {
            Error::InvalidArgument(format!("simplex grid C({}, {}) is too large", resolution + dim - 1, dim - 1))
        })?;
        let table = (0..=resolution).map(|r| (0..=dim).map(|p| compositions(r, p)).collect()).collect();
        Ok(Self { dim, resolution, len, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Integer composition of the `j`-th point.
    pub fn counts(&self, mut j: usize) -> Vec<usize> {
        assert!(j < self.len, "grid index {j} out of range");
        let mut out = Vec::with_capacity(self.dim);
        let mut rem = self.resolution;
        for pos in 0..self.dim {
            let parts_after = self.dim - pos - 1;
            if parts_after == 0 {
                out.push(rem);
                break;
            }
            let mut v = 0;
            loop {
                let block = self.table[rem - v][parts_after] as usize;
                if j < block {
                    break;
                }
                j -= block;
                v += 1;
            }
            out.push(v);
            rem -= v;
        }
        out
    }

    pub fn point(&self, j: usize) -> Distribution {
        let k = self.resolution as f64;
        Distribution::from_drifted(self.counts(j).into_iter().map(|c| c as f64 / k).collect())
    }

    /// Index of an integer composition of `k`.
    pub fn rank(&self, counts: &[usize]) -> Option<usize> {
        if counts.len() != self.dim || counts.iter().sum::<usize>() != self.resolution {
            return None;
        }
        let mut rem = self.resolution;
        let mut j: u128 = 0;
        for (pos, &c) in counts.iter().enumerate().take(self.dim - 1) {
            let parts_after = self.dim - pos - 1;
            for v in 0..c {
                j += self.table[rem - v][parts_after];
            }
            rem -= c;
        }
        Some(j as usize)
    }

    /// Index of `d` if it is exactly a grid point (up to 1e-9 per entry).
    pub fn index_of(&self, d: &[f64]) -> Option<usize> {
        if d.len() != self.dim {
            return None;
        }
        let k = self.resolution as f64;
        let mut counts = Vec::with_capacity(self.dim);
        for &p in d {
            let c = (p * k).round();
            if (c - p * k).abs() > 1e-9 * k.max(1.0) || c < 0.0 {
                return None;
            }
            counts.push(c as usize);
        }
        self.rank(&counts)
    }

    pub fn points(&self) -> impl Iterator<Item = Distribution> + '_ {
        (0..self.len).map(|j| self.point(j))
    }

    /// Nearest grid point in L1 as an integer composition; ties go to the lexicographically first.
    pub fn project_counts(&self, d: &[f64]) -> Vec<usize> {
        assert_eq!(d.len(), self.dim, "projection input has the wrong dimension");
        let k = self.resolution;
        let y: Vec<f64> = d.iter().map(|&p| p * k as f64).collect();
        let best = min_cost(&y, k);
        let mut out = Vec::with_capacity(self.dim);
        let mut rem = k;
        let mut spent = 0.0;
        for pos in 0..self.dim {
            if pos + 1 == self.dim {
                out.push(rem);
                break;
            }
            let mut chosen = None;
            for v in 0..=rem {
                let here = spent + (y[pos] - v as f64).abs();
                let tail = min_cost(&y[pos + 1..], rem - v);
                if here + tail <= best + TIE_TOL * (1.0 + best) {
                    chosen = Some((v, here));
                    break;
                }
            }
            let (v, here) = chosen.expect("some completion attains the optimum");
            out.push(v);
            spent = here;
            rem -= v;
        }
        out
    }

    pub fn project_index(&self, d: &[f64]) -> usize {
        self.rank(&self.project_counts(d)).expect("projection is a grid point")
    }

    pub fn project(&self, d: &[f64]) -> Distribution {
        let k = self.resolution as f64;
        Distribution::from_drifted(self.project_counts(d).into_iter().map(|c| c as f64 / k).collect())
    }
}

/// min Σ_j |y_j − c_j| over non-negative integers with Σ c_j = total.
fn min_cost(y: &[f64], total: usize) -> f64 {
    if y.is_empty() {
        return if total == 0 { 0.0 } else { f64::INFINITY };
    }
    // separable convex allocation: start at floors (clipped to the budget) and move greedily
    let floors: Vec<usize> = y.iter().map(|&v| v.max(0.0).floor() as usize).collect();
    let base: usize = floors.iter().sum();
    let mut c = floors;
    let cost_of = |c: &[usize]| -> f64 { y.iter().zip(c).map(|(&v, &n)| (v - n as f64).abs()).sum() };
    if base <= total {
        let mut gains: Vec<f64> =
            y.iter().zip(&c).map(|(&v, &n)| (v - n as f64 - 1.0).abs() - (v - n as f64).abs()).collect();
        for _ in 0..(total - base) {
            let (j, _) = gains.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
            c[j] += 1;
            let n = c[j] as f64;
            gains[j] = (y[j] - n - 1.0).abs() - (y[j] - n).abs();
        }
    } else {
        let mut gains: Vec<f64> = y
            .iter()
            .zip(&c)
            .map(|(&v, &n)| if n == 0 { f64::INFINITY } else { (v - n as f64 + 1.0).abs() - (v - n as f64).abs() })
            .collect();
        for _ in 0..(base - total) {
            let (j, _) = gains.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
            c[j] -= 1;
            let n = c[j] as f64;
            gains[j] = if c[j] == 0 { f64::INFINITY } else { (y[j] - n + 1.0).abs() - (y[j] - n).abs() };
        }
    }
    cost_of(&c)
}

/// Product of per-coalition simplex grids over each coalition's navigable states.
/// Joint indices are mixed-radix with coalition 0 most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    sizes: Vec<usize>,
    /// Per coalition, the navigable states the grid coordinates map to.
    support: Vec<Vec<usize>>,
    grids: Vec<SimplexGrid>,
    len: usize,
}

impl StateGrid {
    pub fn new(env: &EnvSpec, resolution: usize) -> Result<Self> {
        let support = (0..env.num_coalitions()).map(|i| env.navigable(i)).collect();
        Self::with_support(env.state_sizes().to_vec(), support, resolution)
    }

    /// Grid over the full state spaces of the given sizes.
    pub fn from_sizes(sizes: &[usize], resolution: usize) -> Result<Self> {
        let support = sizes.iter().map(|&n| (0..n).collect()).collect();
        Self::with_support(sizes.to_vec(), support, resolution)
    }

    fn with_support(sizes: Vec<usize>, support: Vec<Vec<usize>>, resolution: usize) -> Result<Self> {
        let grids =
            support.iter().map(|s: &Vec<usize>| SimplexGrid::new(s.len(), resolution)).collect::<Result<Vec<_>>>()?;
        let mut len: usize = 1;
        for g in &grids {
            len = len.checked_mul(g.len()).filter(|&l| l <= isize::MAX as usize / 16).ok_or_else(|| {
                Error::InvalidArgument("joint state grid is too large; lower the state resolution".into())
            })?;
        }
        Ok(Self { sizes, support, grids, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_coalitions(&self) -> usize {
        self.grids.len()
    }

    pub fn resolution(&self) -> usize {
        self.grids[0].resolution()
    }

    pub fn coalition_grid(&self, i: usize) -> &SimplexGrid {
        &self.grids[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn restrict(&self, i: usize, d: &Distribution) -> Vec<f64> {
        self.support[i].iter().map(|&x| d[x]).collect()
    }

    fn embed(&self, i: usize, counts: &[usize]) -> Distribution {
        let k = self.grids[i].resolution() as f64;
        let mut v = vec![0.0; self.sizes[i]];
        for (&x, &c) in self.support[i].iter().zip(counts) {
            v[x] = c as f64 / k;
        }
        Distribution::from_drifted(v)
    }

    fn check(&self, s: &MeanFieldState) -> Result<()> {
        s.check_shape(&self.sizes)
    }

    /// Index in coalition `i`'s grid of the projection of one distribution.
    pub fn project_coalition(&self, i: usize, d: &Distribution) -> usize {
        self.grids[i].project_index(&self.restrict(i, d))
    }

    /// The `j`-th grid point of coalition `i`, embedded in the full state space.
    pub fn coalition_point(&self, i: usize, j: usize) -> Distribution {
        self.embed(i, &self.grids[i].counts(j))
    }

    /// Per-coalition grid indices of the projection of `s`.
    pub fn project_components(&self, s: &MeanFieldState) -> Result<Vec<usize>> {
        self.check(s)?;
        Ok((0..self.grids.len()).map(|i| self.grids[i].project_index(&self.restrict(i, s.coalition(i)))).collect())
    }

    pub fn project_index(&self, s: &MeanFieldState) -> Result<usize> {
        Ok(self.join(&self.project_components(s)?))
    }

    pub fn project(&self, s: &MeanFieldState) -> Result<MeanFieldState> {
        Ok(self.state(self.project_index(s)?))
    }

    /// Index of `s` if it is exactly a grid point.
    pub fn index_of(&self, s: &MeanFieldState) -> Result<usize> {
        self.check(s)?;
        let mut parts = Vec::with_capacity(self.grids.len());
        for i in 0..self.grids.len() {
            let d = s.coalition(i);
            let off_support = (0..self.sizes[i]).filter(|x| !self.support[i].contains(x)).any(|x| d[x] > 1e-9);
            if off_support {
                return Err(Error::OffGrid);
            }
            parts.push(self.grids[i].index_of(&self.restrict(i, d)).ok_or(Error::OffGrid)?);
        }
        Ok(self.join(&parts))
    }

    pub fn join(&self, parts: &[usize]) -> usize {
        parts.iter().zip(&self.grids).fold(0, |acc, (&p, g)| acc * g.len() + p)
    }

    pub fn split(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.grids.len()];
        for i in (0..self.grids.len()).rev() {
            out[i] = idx % self.grids[i].len();
            idx /= self.grids[i].len();
        }
        out
    }

    pub fn state(&self, idx: usize) -> MeanFieldState {
        assert!(idx < self.len, "state index {idx} out of range");
        let parts = self.split(idx);
        MeanFieldState::new(parts.iter().enumerate().map(|(i, &p)| self.embed(i, &self.grids[i].counts(p))).collect())
    }
}

/// Decision rules whose rows all lie on a fixed action-simplex grid, indexed
/// lexicographically with state 0's row most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteActionSet {
    coalition: usize,
    n_states: usize,
    row_grid: SimplexGrid,
    len: usize,
}

impl DiscreteActionSet {
    pub fn new(coalition: usize, n_states: usize, n_actions: usize, resolution: usize) -> Result<Self> {
        Self::with_cap(coalition, n_states, n_actions, resolution, MAX_ACTION_RULES)
    }

    pub fn with_cap(
        coalition: usize,
        n_states: usize,
        n_actions: usize,
        resolution: usize,
        cap: usize,
    ) -> Result<Self> {
        let row_grid = SimplexGrid::new(n_actions, resolution)?;
        let mut size: u128 = 1;
        for _ in 0..n_states {
            size = size.saturating_mul(row_grid.len() as u128);
        }
        if size > cap as u128 {
            return Err(Error::ActionSetTooLarge { size, cap });
        }
        Ok(Self { coalition, n_states, row_grid, len: size as usize })
    }

    pub fn coalition(&self) -> usize {
        self.coalition
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.row_grid.dim()
    }

    pub fn row_grid(&self) -> &SimplexGrid {
        &self.row_grid
    }

    pub fn rule(&self, mut idx: usize) -> DecisionRule {
        assert!(idx < self.len, "rule index {idx} out of range");
        let r = self.row_grid.len();
        let mut rows = vec![0; self.n_states];
        for x in (0..self.n_states).rev() {
            rows[x] = idx % r;
            idx /= r;
        }
        let data: Vec<f64> = rows.iter().flat_map(|&j| self.row_grid.point(j).into_inner()).collect();
        DecisionRule::from_drifted(self.n_states, self.n_actions(), data)
    }

    pub fn rules(&self) -> impl Iterator<Item = DecisionRule> + '_ {
        (0..self.len).map(|j| self.rule(j))
    }

    pub fn index_of(&self, rule: &DecisionRule) -> Option<usize> {
        if rule.n_states() != self.n_states || rule.n_actions() != self.n_actions() {
            return None;
        }
        let mut idx = 0;
        for x in 0..self.n_states {
            idx = idx * self.row_grid.len() + self.row_grid.index_of(rule.row(x))?;
        }
        Some(idx)
    }

    /// Nearest rule in the entrywise L1 metric (row-wise projection).
    pub fn project(&self, rule: &DecisionRule) -> usize {
        (0..self.n_states).fold(0, |acc, x| acc * self.row_grid.len() + self.row_grid.project_index(rule.row(x)))
    }
}

/// Builds the discrete action set `Ǎⁱ` of coalition `i`.
pub fn discretize_actions(env: &EnvSpec, i: usize, resolution: usize) -> Result<DiscreteActionSet> {
    if i >= env.num_coalitions() {
        return Err(Error::IndexOutOfRange(format!("coalition {i}")));
    }
    DiscreteActionSet::new(i, env.num_states(i), env.num_actions(i), resolution)
}

/// Monte Carlo estimates of the state and action mesh sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSizes {
    pub eps_s: f64,
    pub eps_a: f64,
    pub samples: usize,
}

fn flat_dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}

/// Sample maxima of the distance to the nearest grid state and the nearest discrete rule
/// under uniform (flat Dirichlet) draws.
pub fn mesh_sizes<R: Rng + ?Sized>(
    grid: &StateGrid,
    action_sets: &[DiscreteActionSet],
    n_samples: usize,
    rng: &mut R,
) -> Result<MeshSizes> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("mesh estimate needs at least one sample".into()));
    }
    let mut eps_s: f64 = 0.0;
    let mut eps_a: f64 = 0.0;
    for _ in 0..n_samples {
        let mut dist = 0.0;
        for i in 0..grid.num_coalitions() {
            let local = flat_dirichlet(grid.support[i].len(), rng);
            let proj = grid.grids[i].project(&local);
            dist += l1_distance(&Distribution::from_drifted(local), &proj)?;
        }
        eps_s = eps_s.max(dist);
        for set in action_sets {
            let mut d = 0.0;
            for _ in 0..set.n_states() {
                let row = flat_dirichlet(set.n_actions(), rng);
                let proj = set.row_grid.project(&row);
                d += l1_distance(&Distribution::from_drifted(row), &proj)?;
            }
            eps_a = eps_a.max(d);
        }
    }
    Ok(MeshSizes { eps_s, eps_a, samples: n_samples })
}
