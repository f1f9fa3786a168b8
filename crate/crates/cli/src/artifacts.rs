//! Files a run leaves behind: checkpoints, metrics rows and trajectory dumps.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use mftg::ddpg::{ActorPolicy, DdpgMetrics};
use mftg::envs::{EnvSpec, TestSet};
use mftg::eval::{rollout, Dynamics, EvalReport};
use mftg::nashq::{load_il_tables, load_tables, IlGreedyPolicy, NashQPolicy, TrainMetrics};
use mftg::neural::NetParams;
use mftg::policy::{MeanFieldPolicy, PolicyProfile};
use mftg::quantize::{discretize_actions, DiscreteActionSet, StateGrid};
use serde::{Deserialize, Serialize};

use crate::error::{Classify, CliError, CliResult};
use crate::plot::{METRICS_SCHEMA, TRAJECTORY_SCHEMA};

const TABLE_MAGIC: &[u8; 8] = b"MFTGQTAB";
const IL_MAGIC: &[u8; 8] = b"MFTGILTB";
const ACTOR_MAGIC: &[u8; 8] = b"MFTGACTR";

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).runtime()?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

pub fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> CliResult<()> {
    write_file(&dir.join(format!("{stem}.json")), &(report.to_json().runtime()? + "\n"))?;
    write_file(&dir.join(format!("{stem}.csv")), &report.to_csv())
}

#[derive(Debug, Serialize, Deserialize)]
struct ActorHeader {
    env_name: String,
    state_sizes: Vec<usize>,
    masked: bool,
    actors: usize,
}

/// Stores the trained actors of every coalition in one file.
pub fn save_actors(path: &Path, env: &EnvSpec, masked: bool, actors: &[&NetParams]) -> CliResult<()> {
    let header = serde_json::to_vec(&ActorHeader {
        env_name: env.name().into(),
        state_sizes: env.state_sizes().to_vec(),
        masked,
        actors: actors.len(),
    })
    .runtime()?;
    let mut w = BufWriter::new(File::create(path).runtime()?);
    w.write_all(ACTOR_MAGIC).runtime()?;
    w.write_all(&(header.len() as u64).to_le_bytes()).runtime()?;
    w.write_all(&header).runtime()?;
    for net in actors {
        net.write_to(&mut w).runtime()?;
    }
    w.flush().runtime()
}

type ProfileBuilder = Box<dyn Fn(&EnvSpec) -> CliResult<PolicyProfile>>;

/// What a checkpoint file holds, ready to act as a profile.
pub struct LoadedCheckpoint {
    pub env_name: String,
    pub state_sizes: Vec<usize>,
    /// `(state, action)` resolutions of a tabular checkpoint.
    pub resolution: Option<(usize, usize)>,
    pub kind: &'static str,
    build: ProfileBuilder,
}

impl LoadedCheckpoint {
    /// The stored profile against `env`, which must match the checkpoint.
    pub fn profile(&self, env: &EnvSpec) -> CliResult<PolicyProfile> {
        if env.name() != self.env_name || env.state_sizes() != self.state_sizes.as_slice() {
            return Err(CliError::usage(format!(
                "checkpoint was trained on `{}` with state sizes {:?}, not `{}` with {:?}",
                self.env_name,
                self.state_sizes,
                env.name(),
                env.state_sizes()
            )));
        }
        (self.build)(env)
    }
}

fn action_sets(env: &EnvSpec, ka: usize) -> CliResult<Vec<DiscreteActionSet>> {
    (0..env.num_coalitions()).map(|i| discretize_actions(env, i, ka).usage()).collect()
}

pub fn discrete_setup(env: &EnvSpec, k: usize, ka: usize) -> CliResult<(StateGrid, Vec<DiscreteActionSet>)> {
    Ok((StateGrid::new(env, k).usage()?, action_sets(env, ka)?))
}

pub fn load_checkpoint(path: &Path) -> CliResult<LoadedCheckpoint> {
    let bad = |e: &dyn std::fmt::Display| CliError::usage(format!("{}: {e}", path.display()));
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| CliError::usage(format!("checkpoint {} not readable: {e}", path.display())))?;
    let magic: [u8; 8] = bytes.get(..8).and_then(|m| m.try_into().ok()).ok_or_else(|| bad(&"file too short"))?;
    match &magic {
        m if m == TABLE_MAGIC => {
            let ck = load_tables(bytes.as_slice()).map_err(|e| bad(&e))?;
            let (k, ka) = (ck.state_resolution, ck.action_resolution);
            let tables = ck.tables;
            Ok(LoadedCheckpoint {
                env_name: ck.env_name,
                state_sizes: ck.state_sizes,
                resolution: Some((k, ka)),
                kind: "dnashq",
                build: Box::new(move |env| {
                    let (grid, sets) = discrete_setup(env, k, ka)?;
                    let sizes: Vec<usize> = sets.iter().map(|s| s.len()).collect();
                    if tables.n_states() != grid.len() || tables.action_sizes() != sizes.as_slice() {
                        return Err(CliError::usage("checkpoint tables do not match the environment's grids"));
                    }
                    Ok(NashQPolicy::profile(tables.clone(), grid, sets))
                }),
            })
        }
        m if m == IL_MAGIC => {
            let (env_name, state_sizes, k, ka, tables) = load_il_tables(bytes.as_slice()).map_err(|e| bad(&e))?;
            Ok(LoadedCheckpoint {
                env_name,
                state_sizes,
                resolution: Some((k, ka)),
                kind: "il_mftg",
                build: Box::new(move |env| {
                    let (grid, sets) = discrete_setup(env, k, ka)?;
                    for (i, set) in sets.iter().enumerate() {
                        if tables.shape(i) != (grid.coalition_grid(i).len(), set.len()) {
                            return Err(CliError::usage("checkpoint tables do not match the environment's grids"));
                        }
                    }
                    Ok(IlGreedyPolicy::profile(tables.clone(), grid, sets))
                }),
            })
        }
        m if m == ACTOR_MAGIC => {
            let mut r = &bytes[8..];
            let mut len = [0u8; 8];
            r.read_exact(&mut len).map_err(|e| bad(&e))?;
            let len = u64::from_le_bytes(len) as usize;
            if len > r.len() {
                return Err(bad(&"truncated header"));
            }
            let header: ActorHeader = serde_json::from_slice(&r[..len]).map_err(|e| bad(&e))?;
            r = &r[len..];
            let nets = (0..header.actors)
                .map(|_| NetParams::read_from(&mut r).map_err(|e| bad(&e)))
                .collect::<CliResult<Vec<_>>>()?;
            if !r.is_empty() {
                return Err(bad(&"trailing bytes"));
            }
            let masked = header.masked;
            Ok(LoadedCheckpoint {
                env_name: header.env_name,
                state_sizes: header.state_sizes,
                resolution: None,
                kind: if masked { "ddpg_ablated" } else { "ddpg" },
                build: Box::new(move |env| {
                    if nets.len() != env.num_coalitions() {
                        return Err(CliError::usage("checkpoint holds a different number of actors"));
                    }
                    Ok(nets
                        .iter()
                        .enumerate()
                        .map(|(i, n)| Arc::new(ActorPolicy::new(n.clone(), i, masked)) as Arc<dyn MeanFieldPolicy>)
                        .collect())
                }),
            })
        }
        _ => Err(bad(&"not a checkpoint file")),
    }
}

/// Mean-field rollouts of every test distribution, listed cell by cell.
pub fn trajectory_csv(
    env: &EnvSpec,
    profile: &PolicyProfile,
    tests: &TestSet,
    dynamics: Dynamics<'_>,
) -> CliResult<String> {
    let mut out = format!("{TRAJECTORY_SCHEMA}\ntest_index,t,coalition,state,x,y,mass\n");
    for (k, s0) in tests.entries.iter().enumerate() {
        let run = rollout(env, profile, s0, env.horizon(), dynamics).runtime()?;
        for (t, s) in run.states.iter().enumerate() {
            for (i, d) in s.coalitions().iter().enumerate() {
                for (x, &p) in d.probs().iter().enumerate() {
                    let (cx, cy) = env.geometry().map_or((x, 0), |g| g.coords(x));
                    let _ = writeln!(out, "{k},{t},{i},{x},{cx},{cy},{p}");
                }
            }
        }
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cells(v: Option<&[f64]>, m: usize) -> Vec<String> {
    (0..m).map(|i| cell(v.map(|r| r[i]))).collect()
}

fn exploit_cells(report: Option<&EvalReport>, m: usize) -> Vec<String> {
    let mut out = cells(report.map(|r| r.exploitabilities.as_slice()), m);
    out.push(cell(report.map(|r| r.total)));
    out
}

fn indexed(prefix: &str, m: usize) -> Vec<String> {
    (0..m).map(|i| format!("{prefix}_{i}")).collect()
}

/// Rows of `metrics.csv`, kept in memory until the run ends.
pub struct MetricsSheet {
    m: usize,
    text: String,
}

impl MetricsSheet {
    pub fn tabular(m: usize) -> Self {
        let mut cols = vec!["episode".to_string(), "epsilon".into()];
        cols.extend(indexed("return", m));
        cols.extend(indexed("test_return", m));
        cols.push("approx_stage_solves".into());
        cols.extend(indexed("exploitability", m));
        cols.push("exploitability_total".into());
        Self { m, text: format!("{METRICS_SCHEMA}\n{}\n", cols.join(",")) }
    }

    pub fn ddpg(m: usize) -> Self {
        let mut cols = vec!["episode".to_string()];
        cols.extend(indexed("return", m));
        cols.extend(indexed("test_return", m));
        cols.extend(indexed("critic_loss", m));
        cols.extend(indexed("exploitability", m));
        cols.push("exploitability_total".into());
        Self { m, text: format!("{METRICS_SCHEMA}\n{}\n", cols.join(",")) }
    }

    pub fn push_tabular(&mut self, row: &TrainMetrics, report: Option<&EvalReport>) {
        let mut cols = vec![row.episode.to_string(), row.epsilon.to_string()];
        cols.extend(cells(Some(&row.returns), self.m));
        cols.extend(cells(row.test_returns.as_deref(), self.m));
        cols.push(row.approx_stage_solves.to_string());
        cols.extend(exploit_cells(report, self.m));
        self.text.push_str(&cols.join(","));
        self.text.push('\n');
    }

    pub fn push_ddpg(&mut self, row: &DdpgMetrics, report: Option<&EvalReport>) {
        let mut cols = vec![row.episode.to_string()];
        cols.extend(cells(Some(&row.returns), self.m));
        cols.extend(cells(row.test_returns.as_deref(), self.m));
        cols.extend((0..self.m).map(|i| cell(row.critic_loss.get(i).copied().flatten())));
        cols.extend(exploit_cells(report, self.m));
        self.text.push_str(&cols.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}
