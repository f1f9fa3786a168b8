//! Discretized Nash Q-learning over quantized mean-field states, its greedy
//! inference, and the independent-learner baseline.

mod checkpoint;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::stagegame::StagePayoffs;

pub use checkpoint::{load_il_tables, load_tables, save_il_tables, save_tables, RngState, TableCheckpoint};
pub use train::{
    infer_dnashq, nashq_update, train_dnashq, train_dnashq_observed, train_dnashq_resume, train_il_mftg,
    train_il_mftg_observed, IlGreedyPolicy, IlRun, IlTables, InferStep, NashQPolicy, NashQRun, TrainMetrics,
};

/// Entry count above which tables switch to sparse storage.
pub const DENSE_LIMIT: usize = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashQHyper {
    pub episodes: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Evaluate the greedy profile on the test set every this many episodes (0 disables).
    pub eval_every: usize,
}

impl NashQHyper {
    pub fn for_env(env: &EnvSpec, episodes: usize) -> Self {
        Self { episodes, horizon: env.horizon(), gamma: env.gamma(), eps_start: 0.99, eps_end: 0.01, eval_every: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("discount {} outside [0, 1)", self.gamma)));
        }
        for e in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidArgument(format!("exploration level {e} outside [0, 1]")));
            }
        }
        if self.episodes == 0 {
            return Err(Error::InvalidArgument("need at least one episode".into()));
        }
        Ok(())
    }
}

/// ε_end + (ε_start − ε_end)·exp(−t / T).
pub fn epsilon_schedule(t: usize, total: usize, eps_start: f64, eps_end: f64) -> f64 {
    let total = total.max(1) as f64;
    eps_end + (eps_start - eps_end) * (-(t as f64) / total).exp()
}

/// α = 1/n for a tuple visited `count` times (including the current visit).
pub fn learning_rate(count: u32) -> Result<f64> {
    if count == 0 {
        Err(Error::UncountedVisit)
    } else {
        Ok(1.0 / count as f64)
    }
}

/// Dense or sparse storage keyed by a flat index; missing sparse entries read as default.
#[derive(Debug, Clone, PartialEq)]
pub enum Storage<T> {
    Dense(Vec<T>),
    Sparse { len: usize, map: HashMap<usize, T> },
}

impl<T: Copy + Default + PartialEq> Storage<T> {
    pub fn new(len: usize) -> Self {
        if len <= DENSE_LIMIT {
            Storage::Dense(vec![T::default(); len])
        } else {
            Storage::Sparse { len, map: HashMap::new() }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Storage::Dense(v) => v.len(),
            Storage::Sparse { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Storage::Dense(_))
    }

    pub fn get(&self, idx: usize) -> T {
        match self {
            Storage::Dense(v) => v[idx],
            Storage::Sparse { map, .. } => map.get(&idx).copied().unwrap_or_default(),
        }
    }

    pub fn set(&mut self, idx: usize, val: T) {
        match self {
            Storage::Dense(v) => v[idx] = val,
            Storage::Sparse { map, .. } => {
                if val == T::default() {
                    map.remove(&idx);
                } else {
                    map.insert(idx, val);
                }
            }
        }
    }

    /// Copies `out.len()` consecutive entries starting at `start`.
    pub fn read_range(&self, start: usize, out: &mut [T]) {
        match self {
            Storage::Dense(v) => out.copy_from_slice(&v[start..start + out.len()]),
            Storage::Sparse { map, .. } => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = map.get(&(start + k)).copied().unwrap_or_default();
                }
            }
        }
    }

    /// Non-default entries in ascending index order.
    pub fn nonzero(&self) -> Vec<(usize, T)> {
        match self {
            Storage::Dense(v) => {
                v.iter().enumerate().filter(|(_, x)| **x != T::default()).map(|(i, &x)| (i, x)).collect()
            }
            Storage::Sparse { map, .. } => {
                let mut out: Vec<(usize, T)> = map.iter().map(|(&k, &v)| (k, v)).collect();
                out.sort_unstable_by_key(|e| e.0);
                out
            }
        }
    }
}

/// Per-player Q over (projected state, joint discrete action) with shared visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QTables {
    n_states: usize,
    action_sizes: Vec<usize>,
    joint: usize,
    values: Vec<Storage<f64>>,
    counts: Storage<u32>,
}

impl QTables {
    pub fn new(n_states: usize, action_sizes: Vec<usize>) -> Result<Self> {
        let mut joint: usize = 1;
        for &a in &action_sizes {
            joint =
                joint.checked_mul(a).ok_or_else(|| Error::InvalidArgument("joint action space overflows".into()))?;
        }
        let len = n_states.checked_mul(joint).ok_or_else(|| Error::InvalidArgument("Q-table size overflows".into()))?;
        Ok(Self {
            n_states,
            joint,
            values: action_sizes.iter().map(|_| Storage::new(len)).collect(),
            counts: Storage::new(len),
            action_sizes,
        })
    }

    pub fn num_players(&self) -> usize {
        self.action_sizes.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    pub fn joint_size(&self) -> usize {
        self.joint
    }

    pub fn is_dense(&self) -> bool {
        self.counts.is_dense()
    }

    /// Flat joint action index, player 0 most significant.
    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().zip(&self.action_sizes).fold(0, |acc, (&a, &n)| acc * n + a)
    }

    fn flat(&self, state: usize, joint: usize) -> Result<usize> {
        if state >= self.n_states || joint >= self.joint {
            return Err(Error::IndexOutOfRange(format!("Q-table entry ({state}, {joint})")));
        }
        Ok(state * self.joint + joint)
    }

    pub fn get(&self, i: usize, state: usize, joint: usize) -> Result<f64> {
        let k = self.flat(state, joint)?;
        self.values.get(i).map(|v| v.get(k)).ok_or_else(|| Error::IndexOutOfRange(format!("player {i}")))
    }

    pub fn set(&mut self, i: usize, state: usize, joint: usize, value: f64) -> Result<()> {
        let k = self.flat(state, joint)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("Q-value for player {i}")));
        }
        self.values.get_mut(i).ok_or_else(|| Error::IndexOutOfRange(format!("player {i}")))?.set(k, value);
        Ok(())
    }

    pub fn count(&self, state: usize, joint: usize) -> Result<u32> {
        Ok(self.counts.get(self.flat(state, joint)?))
    }

    /// Increments and returns the visit count of a tuple.
    pub fn visit(&mut self, state: usize, joint: usize) -> Result<u32> {
        let k = self.flat(state, joint)?;
        let n = self.counts.get(k).saturating_add(1);
        self.counts.set(k, n);
        Ok(n)
    }

    pub fn total_visits(&self) -> u64 {
        self.counts.nonzero().iter().map(|e| e.1 as u64).sum()
    }

    /// Stage game at a projected state: every player's Q row over joint actions.
    pub fn stage_payoffs(&self, state: usize) -> Result<StagePayoffs> {
        let start = self.flat(state, 0)?;
        let tensors = self
            .values
            .iter()
            .map(|v| {
                let mut row = vec![0.0; self.joint];
                v.read_range(start, &mut row);
                row
            })
            .collect();
        StagePayoffs::new(self.action_sizes.clone(), tensors)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flat_map(|v| v.nonzero().into_iter().map(|e| e.1.abs())).fold(0.0, f64::max)
    }

    pub(crate) fn values(&self) -> &[Storage<f64>] {
        &self.values
    }

    pub(crate) fn counts(&self) -> &Storage<u32> {
        &self.counts
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Storage<f64>] {
        &mut self.values
    }

    pub(crate) fn counts_mut(&mut self) -> &mut Storage<u32> {
        &mut self.counts
    }
}
