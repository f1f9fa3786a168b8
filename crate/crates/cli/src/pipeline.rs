//! Seeded training, evaluation and rate pipelines behind the subcommands.

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mftg::ddpg::{train_ddpg_mftg_observed, DdpgHyper};
use mftg::envs::{EnvSpec, TestSet};
use mftg::eval::{exploitability, BrConfig, BrMethod, Dynamics, EvalReport};
use mftg::nagents::{estimate_gap, ols, GapReport, GapRow, OlsFit};
use mftg::nashq::{
    save_il_tables, save_tables, train_dnashq_observed, train_il_mftg_observed, IlGreedyPolicy, NashQHyper,
    NashQPolicy, QTables, RngState, TableCheckpoint,
};
use mftg::policy::{LinearSoftmaxPolicy, MeanFieldPolicy, PolicyProfile};
use mftg::{DecisionRule, MeanFieldState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifacts::{
    discrete_setup, load_checkpoint, save_actors, trajectory_csv, write_file, write_report, MetricsSheet,
};
use crate::error::{Classify, CliError, CliResult};
use crate::manifest::{Algo, ExperimentManifest};
use crate::plot::{LinePlot, Series};

/// The best-response configuration a manifest asks for.
pub fn br_config(m: &ExperimentManifest, env: &EnvSpec) -> CliResult<BrConfig> {
    let (k, ka) = m.eval_resolution();
    let mut cfg = match m.eval.method {
        BrMethod::Exhaustive => {
            let (grid, sets) = discrete_setup(env, k, ka)?;
            BrConfig::exhaustive(env, grid, sets)
        }
        BrMethod::Tabular => {
            let (grid, sets) = discrete_setup(env, k, ka)?;
            BrConfig::tabular(env, grid, sets, m.eval.budget)
        }
        BrMethod::Deep => BrConfig::deep(env, DdpgHyper { episodes: m.eval.budget, ..m.ddpg.clone() }),
    };
    cfg.scope = m.eval.scope;
    cfg.retrain = m.eval.retrain;
    Ok(cfg)
}

/// Exploitability RNG for an evaluation point, independent of the training stream.
fn eval_rng(seed: u64, point: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point + 1);
    rng
}

struct Evaluator<'a> {
    env: &'a EnvSpec,
    cfg: Option<BrConfig>,
    tests: TestSet,
    every: usize,
    total: usize,
    seed: u64,
    last: RefCell<Option<EvalReport>>,
}

impl<'a> Evaluator<'a> {
    fn new(m: &ExperimentManifest, env: &'a EnvSpec, seed: u64) -> CliResult<Self> {
        let cfg = if m.eval.enabled { Some(br_config(m, env)?) } else { None };
        Ok(Self {
            env,
            cfg,
            tests: env.test_set(),
            every: m.eval.every,
            total: m.episodes,
            seed,
            last: RefCell::new(None),
        })
    }

    fn due(&self, episode: usize) -> bool {
        self.cfg.is_some()
            && ((self.every > 0 && (episode + 1).is_multiple_of(self.every)) || episode + 1 == self.total)
    }

    fn maybe_run(&self, episode: usize, profile: impl FnOnce() -> PolicyProfile) -> mftg::Result<Option<EvalReport>> {
        if !self.due(episode) {
            return Ok(None);
        }
        let cfg = self.cfg.as_ref().expect("due implies a config");
        let report = exploitability(self.env, &profile(), &self.tests, cfg, &mut eval_rng(self.seed, episode as u64))?;
        *self.last.borrow_mut() = Some(report.clone());
        Ok(Some(report))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub report: Option<EvalReport>,
}

/// Runs every seed of `m`, one run directory each.
pub fn run_train(m: &ExperimentManifest) -> CliResult<Vec<RunOutcome>> {
    let env = m.build_env()?;
    m.seeds.iter().map(|&seed| train_one(m, &env, seed)).collect()
}

fn train_one(m: &ExperimentManifest, env: &EnvSpec, seed: u64) -> CliResult<RunOutcome> {
    let dir = m.run_dir(seed);
    for sub in ["checkpoints", "reports", "plots"] {
        fs::create_dir_all(dir.join(sub)).runtime()?;
    }
    write_file(&dir.join("config.json"), &(serde_json::to_string_pretty(&m.for_seed(seed)).runtime()? + "\n"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let evaluator = Evaluator::new(m, env, seed)?;
    let players = env.num_coalitions();
    let ckpt_dir = dir.join("checkpoints");

    let (sheet, result): (MetricsSheet, CliResult<PolicyProfile>) = match m.algo {
        Algo::Dnashq | Algo::IlMftg => {
            let (grid, sets) = discrete_setup(env, m.state_resolution, m.action_resolution)?;
            let hyper = NashQHyper {
                episodes: m.episodes,
                horizon: env.horizon(),
                gamma: env.gamma(),
                eps_start: m.tabular.eps_start,
                eps_end: m.tabular.eps_end,
                eval_every: m.tabular.eval_every,
            };
            let mut sheet = MetricsSheet::tabular(players);
            let result = if m.algo == Algo::Dnashq {
                let tables = QTables::new(grid.len(), sets.iter().map(|s| s.len()).collect()).usage()?;
                let run = train_dnashq_observed(env, &grid, &sets, &hyper, tables, 0, &mut rng, &mut |row, tables| {
                    let report = evaluator
                        .maybe_run(row.episode, || NashQPolicy::profile(tables.clone(), grid.clone(), sets.clone()))?;
                    sheet.push_tabular(row, report.as_ref());
                    Ok(())
                });
                run.runtime().and_then(|run| {
                    let ck = TableCheckpoint {
                        env_name: env.name().into(),
                        state_sizes: env.state_sizes().to_vec(),
                        state_resolution: m.state_resolution,
                        action_resolution: m.action_resolution,
                        episodes_done: m.episodes,
                        hyper: Some(hyper.clone()),
                        rng: Some(RngState::capture(&rng)),
                        tables: run.tables,
                    };
                    let mut buf = Vec::new();
                    save_tables(&mut buf, &ck).runtime()?;
                    fs::write(ckpt_dir.join("tables.bin"), buf).runtime()?;
                    Ok(NashQPolicy::profile(ck.tables, grid.clone(), sets.clone()))
                })
            } else {
                let run = train_il_mftg_observed(env, &grid, &sets, &hyper, &mut rng, &mut |row, tables| {
                    let report = evaluator.maybe_run(row.episode, || {
                        IlGreedyPolicy::profile(tables.clone(), grid.clone(), sets.clone())
                    })?;
                    sheet.push_tabular(row, report.as_ref());
                    Ok(())
                });
                run.runtime().and_then(|run| {
                    let mut buf = Vec::new();
                    save_il_tables(
                        &mut buf,
                        env.name(),
                        env.state_sizes(),
                        m.state_resolution,
                        m.action_resolution,
                        &run.tables,
                    )
                    .runtime()?;
                    fs::write(ckpt_dir.join("il_tables.bin"), buf).runtime()?;
                    Ok(IlGreedyPolicy::profile(run.tables, grid.clone(), sets.clone()))
                })
            };
            (sheet, result)
        }
        Algo::Ddpg | Algo::DdpgAblated => {
            let masked = m.algo == Algo::DdpgAblated;
            let mut sheet = MetricsSheet::ddpg(players);
            let run = train_ddpg_mftg_observed(env, &m.ddpg, masked, &mut rng, &mut |row, agents| {
                let report = evaluator.maybe_run(row.episode, || {
                    agents.iter().map(|a| Arc::new(a.policy()) as Arc<dyn MeanFieldPolicy>).collect()
                })?;
                sheet.push_ddpg(row, report.as_ref());
                Ok(())
            });
            let result = run.runtime().and_then(|run| {
                let actors: Vec<_> = run.agents.iter().map(|a| &a.actor).collect();
                save_actors(&ckpt_dir.join("actors.bin"), env, masked, &actors)?;
                Ok(run.profile())
            });
            (sheet, result)
        }
    };
    write_file(&dir.join("metrics.csv"), sheet.as_str())?;
    let profile = result?;

    let report = evaluator.last.into_inner();
    if let Some(r) = &report {
        write_report(&dir.join("reports"), "exploitability", r)?;
    }
    let dynamics = evaluator.cfg.as_ref().map_or(Dynamics::Continuous, BrConfig::dynamics);
    let traj = trajectory_csv(env, &profile, &env.test_set(), dynamics)?;
    write_file(&dir.join("reports").join("trajectories.csv"), &traj)?;
    Ok(RunOutcome { seed, dir, report })
}

/// Default directory for reports about `checkpoint`: the run's `reports/`
/// when it sits in a run's `checkpoints/`, else its own directory.
pub fn default_report_dir(checkpoint: &Path) -> PathBuf {
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    if parent.file_name().is_some_and(|n| n == "checkpoints") {
        parent.parent().unwrap_or(Path::new(".")).join("reports")
    } else {
        parent.to_path_buf()
    }
}

/// A profile to evaluate: from a checkpoint or one of the built-in references.
pub enum ProfileSource<'a> {
    Checkpoint(&'a Path),
    Builtin(&'a str),
}

pub const BUILTIN_PROFILES: [&str; 3] = ["uniform", "stay", "random"];

pub fn builtin_profile(env: &EnvSpec, name: &str, seed: u64) -> CliResult<PolicyProfile> {
    let m = env.num_coalitions();
    match name {
        "uniform" => Ok(mftg::policy::uniform_profile(env)),
        "stay" => Ok(env
            .stay_rules()
            .into_iter()
            .map(|r: DecisionRule| Arc::new(mftg::policy::ConstantPolicy(r)) as Arc<dyn MeanFieldPolicy>)
            .collect()),
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..m)
                .map(|i| Arc::new(LinearSoftmaxPolicy::random(env, i, 1.0, &mut rng)) as Arc<dyn MeanFieldPolicy>)
                .collect())
        }
        other => Err(CliError::usage(format!("unknown profile `{other}` (known: {})", BUILTIN_PROFILES.join(", ")))),
    }
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub report_dir: PathBuf,
}

/// Resolves the manifest for evaluating a checkpoint: the checkpoint fixes the
/// environment and, for tables, the grids.
pub fn checkpoint_manifest(
    user: serde_json::Value,
    checkpoint: &Path,
) -> CliResult<(ExperimentManifest, PolicyProfile, EnvSpec)> {
    if !checkpoint.is_file() {
        return Err(CliError::usage(format!("checkpoint {} not found", checkpoint.display())));
    }
    let loaded = load_checkpoint(checkpoint)?;
    if let Some(name) = user.get("env").and_then(|v| v.as_str()) {
        if name != loaded.env_name {
            return Err(CliError::usage(format!("checkpoint was trained on `{}`, not `{name}`", loaded.env_name)));
        }
    }
    let mut user = user;
    if user.get("algo").is_none() {
        crate::manifest::set_path(&mut user, "algo", loaded.kind.into())?;
    }
    if let Some((k, ka)) = loaded.resolution {
        crate::manifest::set_path(&mut user, "state_resolution", k.into())?;
        crate::manifest::set_path(&mut user, "action_resolution", ka.into())?;
    }
    let m = crate::manifest::resolve_value(user, Some(&loaded.env_name))?;
    let env = m.build_env()?;
    let profile = loaded.profile(&env)?;
    Ok((m, profile, env))
}

/// Exploitability report (and, with `trajectories`, rollouts) for a profile.
pub fn evaluate_profile(
    m: &ExperimentManifest,
    env: &EnvSpec,
    profile: &PolicyProfile,
    report_dir: &Path,
    stem: &str,
    trajectories: bool,
) -> CliResult<EvalOutcome> {
    let cfg = br_config(m, env)?;
    let tests = env.test_set();
    let report = exploitability(env, profile, &tests, &cfg, &mut eval_rng(m.seeds[0], u64::MAX - 1)).runtime()?;
    write_report(report_dir, stem, &report)?;
    if trajectories {
        write_file(&report_dir.join("trajectories.csv"), &trajectory_csv(env, profile, &tests, cfg.dynamics())?)?;
    }
    Ok(EvalOutcome { report, report_dir: report_dir.to_path_buf() })
}

pub struct RateRequest<'a> {
    pub env: &'a EnvSpec,
    pub profile: Option<PolicyProfile>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub t: usize,
    pub seed: u64,
    pub test_index: Option<usize>,
    pub synthetic: bool,
}

pub struct RateOutcome {
    pub report: GapReport,
    pub fit: OlsFit,
}

/// Gap report of `c/√N` data, whose log-log slope is −1/2.
pub fn synthetic_gap(n_list: &[usize], reps: usize, t: usize) -> GapReport {
    let rows = n_list
        .iter()
        .flat_map(|&n| {
            (0..=t).map(move |s| {
                let g = (s as f64 + 1.0) / (n as f64).sqrt();
                GapRow { n, t: s, gap_mean: g, gap_std: 0.0, reward_gap_mean: g, reward_gap_std: 0.0, reps }
            })
        })
        .collect();
    GapReport { rows, tail_bound: 0.0 }
}

/// OLS of log(mean gap) on log(N) at time `t`.
pub fn slope_at(report: &GapReport, t: usize) -> CliResult<OlsFit> {
    let rows: Vec<&GapRow> = report.rows_at(t).collect();
    if rows.iter().any(|r| r.gap_mean <= 0.0) {
        return Err(CliError::Runtime(anyhow::anyhow!("zero mean gap at t = {t}; the slope is undefined")));
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.gap_mean.ln()).collect();
    ols(&xs, &ys).runtime()
}

pub fn run_rate(req: RateRequest<'_>) -> CliResult<RateOutcome> {
    let mut distinct = req.n_list.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(CliError::usage("the slope needs at least two distinct population sizes"));
    }
    if req.n_list.contains(&0) {
        return Err(CliError::usage("population sizes must be positive"));
    }
    if req.reps < 2 {
        return Err(CliError::usage("need at least two replications"));
    }
    let report = if req.synthetic {
        synthetic_gap(&req.n_list, req.reps, req.t)
    } else {
        let env = req.env;
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let profile = match req.profile {
            Some(p) => p,
            None => (0..env.num_coalitions())
                .map(|i| Arc::new(LinearSoftmaxPolicy::random(env, i, 1.0, &mut rng)) as Arc<dyn MeanFieldPolicy>)
                .collect(),
        };
        let s0: MeanFieldState = match req.test_index {
            Some(k) => env
                .test_set()
                .entries
                .get(k)
                .cloned()
                .ok_or_else(|| CliError::usage(format!("test index {k} out of range")))?,
            None => env.sample_training(&mut rng).runtime()?,
        };
        estimate_gap(env, &profile, &req.n_list, req.reps, req.t, &s0, &mut rng).runtime()?
    };
    let fit = slope_at(&report, req.t)?;
    Ok(RateOutcome { report, fit })
}

/// Log-log plot of the gap at `t` with the fitted line.
pub fn rate_figure(out: &RateOutcome, t: usize) -> LinePlot {
    let mut data = Series { label: "mean gap".into(), markers: true, ..Series::default() };
    for r in out.report.rows_at(t) {
        data.points.push((r.n as f64, r.gap_mean));
        data.band.push((r.n as f64, (r.gap_mean - r.gap_std).max(r.gap_mean * 0.01), r.gap_mean + r.gap_std));
    }
    let fit = Series {
        label: format!("slope {:.3}", out.fit.slope),
        points: data.points.iter().map(|&(n, _)| (n, (out.fit.intercept + out.fit.slope * n.ln()).exp())).collect(),
        ..Series::default()
    };
    LinePlot {
        title: format!("Mean-field gap at t = {t}"),
        x_label: "N (agents per coalition)".into(),
        y_label: "mean L1 gap".into(),
        log_x: true,
        log_y: true,
        series: vec![data, fit],
    }
}
