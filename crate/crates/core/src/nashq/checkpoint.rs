//! Binary checkpoints of Q tables: magic, schema tag, JSON header, then
//! little-endian table data.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IlTables, NashQHyper, QTables, Storage};
use crate::error::{Error, Result};

const TABLE_MAGIC: &[u8; 8] = b"MFTGQTAB";
const IL_MAGIC: &[u8; 8] = b"MFTGILTB";
const SCHEMA: u32 = 1;
const MAX_HEADER: u64 = 1 << 26;

/// Enough of a ChaCha8 generator to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers do not carry 128 bits.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self.word_pos.parse().map_err(|_| Error::Checkpoint("bad RNG position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Trained tables plus what is needed to rebuild the grids and resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TableCheckpoint {
    pub env_name: String,
    pub state_sizes: Vec<usize>,
    pub state_resolution: usize,
    pub action_resolution: usize,
    pub episodes_done: usize,
    pub hyper: Option<NashQHyper>,
    pub rng: Option<RngState>,
    pub tables: QTables,
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    env_name: String,
    state_sizes: Vec<usize>,
    state_resolution: usize,
    action_resolution: usize,
    episodes_done: usize,
    hyper: Option<NashQHyper>,
    rng: Option<RngState>,
    n_states: usize,
    action_sizes: Vec<usize>,
    dense: bool,
    /// Stored entries per player table (sparse layout only).
    value_entries: Vec<usize>,
    count_entries: usize,
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 8], header: &impl Serialize) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&SCHEMA.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_header<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R, magic: &[u8; 8]) -> Result<H> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Checkpoint("unrecognized checkpoint magic".into()));
    }
    let schema = read_u32(r)?;
    if schema != SCHEMA {
        return Err(Error::Checkpoint(format!("unsupported checkpoint schema {schema}")));
    }
    let len = read_u64(r)?;
    if len > MAX_HEADER {
        return Err(Error::Checkpoint("checkpoint header too large".into()));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(serde_json::from_slice(&buf)?)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let v = f64::from_bits(read_u64(r)?);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Checkpoint("non-finite table entry".into()))
    }
}

pub fn save_tables<W: Write>(mut w: W, ck: &TableCheckpoint) -> Result<()> {
    let q = &ck.tables;
    let dense = q.is_dense();
    let header = TableHeader {
        env_name: ck.env_name.clone(),
        state_sizes: ck.state_sizes.clone(),
        state_resolution: ck.state_resolution,
        action_resolution: ck.action_resolution,
        episodes_done: ck.episodes_done,
        hyper: ck.hyper.clone(),
        rng: ck.rng.clone(),
        n_states: q.n_states(),
        action_sizes: q.action_sizes().to_vec(),
        dense,
        value_entries: if dense { Vec::new() } else { q.values().iter().map(|v| v.nonzero().len()).collect() },
        count_entries: if dense { 0 } else { q.counts().nonzero().len() },
    };
    write_header(&mut w, TABLE_MAGIC, &header)?;
    let mut buf = Vec::new();
    if dense {
        for v in q.values() {
            if let Storage::Dense(data) = v {
                data.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            }
        }
        if let Storage::Dense(data) = q.counts() {
            data.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        }
    } else {
        for v in q.values() {
            for (k, x) in v.nonzero() {
                buf.extend_from_slice(&(k as u64).to_le_bytes());
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        for (k, c) in q.counts().nonzero() {
            buf.extend_from_slice(&(k as u64).to_le_bytes());
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn load_tables<R: Read>(mut r: R) -> Result<TableCheckpoint> {
    let h: TableHeader = read_header(&mut r, TABLE_MAGIC)?;
    let mut q = QTables::new(h.n_states, h.action_sizes.clone())?;
    if q.is_dense() != h.dense {
        return Err(Error::Checkpoint("storage layout does not match table size".into()));
    }
    let len = q.n_states() * q.joint_size();
    let mut r = std::io::BufReader::new(r);
    if h.dense {
        for i in 0..q.num_players() {
            let mut data = vec![0.0; len];
            for x in &mut data {
                *x = read_f64(&mut r)?;
            }
            q.values_mut()[i] = Storage::Dense(data);
        }
        let mut counts = vec![0u32; len];
        for c in &mut counts {
            *c = read_u32(&mut r)?;
        }
        *q.counts_mut() = Storage::Dense(counts);
    } else {
        if h.value_entries.len() != q.num_players() {
            return Err(Error::Checkpoint("player count mismatch".into()));
        }
        for (i, &n) in h.value_entries.iter().enumerate() {
            let mut map = HashMap::with_capacity(n);
            for _ in 0..n {
                let k = read_u64(&mut r)? as usize;
                if k >= len {
                    return Err(Error::Checkpoint("table index out of range".into()));
                }
                map.insert(k, read_f64(&mut r)?);
            }
            q.values_mut()[i] = Storage::Sparse { len, map };
        }
        let mut map = HashMap::with_capacity(h.count_entries);
        for _ in 0..h.count_entries {
            let k = read_u64(&mut r)? as usize;
            if k >= len {
                return Err(Error::Checkpoint("count index out of range".into()));
            }
            map.insert(k, read_u32(&mut r)?);
        }
        *q.counts_mut() = Storage::Sparse { len, map };
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tables".into()));
    }
    Ok(TableCheckpoint {
        env_name: h.env_name,
        state_sizes: h.state_sizes,
        state_resolution: h.state_resolution,
        action_resolution: h.action_resolution,
        episodes_done: h.episodes_done,
        hyper: h.hyper,
        rng: h.rng,
        tables: q,
    })
}

#[derive(Serialize, Deserialize)]
struct IlHeader {
    env_name: String,
    state_sizes: Vec<usize>,
    state_resolution: usize,
    action_resolution: usize,
    own_states: Vec<usize>,
    action_sizes: Vec<usize>,
}

/// Independent-learner tables with the grid metadata of a [`TableCheckpoint`].
pub fn save_il_tables<W: Write>(
    mut w: W,
    env_name: &str,
    state_sizes: &[usize],
    state_resolution: usize,
    action_resolution: usize,
    t: &IlTables,
) -> Result<()> {
    let header = IlHeader {
        env_name: env_name.into(),
        state_sizes: state_sizes.to_vec(),
        state_resolution,
        action_resolution,
        own_states: t.own_states.clone(),
        action_sizes: t.action_sizes.clone(),
    };
    write_header(&mut w, IL_MAGIC, &header)?;
    let mut buf = Vec::new();
    for (v, c) in t.values.iter().zip(&t.counts) {
        v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        c.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Returns `(env_name, state_sizes, state_resolution, action_resolution, tables)`.
pub fn load_il_tables<R: Read>(mut r: R) -> Result<(String, Vec<usize>, usize, usize, IlTables)> {
    let h: IlHeader = read_header(&mut r, IL_MAGIC)?;
    if h.own_states.len() != h.action_sizes.len() {
        return Err(Error::Checkpoint("player count mismatch".into()));
    }
    let mut t = IlTables::new(h.own_states.clone(), h.action_sizes.clone());
    let mut r = std::io::BufReader::new(r);
    for i in 0..t.num_players() {
        for x in t.values[i].iter_mut() {
            *x = read_f64(&mut r)?;
        }
        for c in t.counts[i].iter_mut() {
            *c = read_u32(&mut r)?;
        }
    }
    Ok((h.env_name, h.state_sizes, h.state_resolution, h.action_resolution, t))
}
