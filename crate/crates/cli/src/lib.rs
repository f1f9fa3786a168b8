//! Command-line experiment runner for mean-field type games.

pub mod artifacts;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod sweep;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mftg::envs::ENV_NAMES;

use crate::error::{CliError, CliResult};
use crate::manifest::{make_env, ParsedArgs};
use crate::pipeline::{ProfileSource, RateRequest};
use crate::plot::PlotKind;

const MANIFEST_HELP: &str = "\
Settings are `--key value` or `--key=value` pairs over a JSON manifest given \
with `--config FILE`; dotted keys reach nested fields (`--ddpg.batch 64`). \
Precedence: command line, then file, then defaults. `--seed N` sets a single \
seed; the default seed comes from MFTG_SEED.

Common keys: env, algo (dnashq | il_mftg | ddpg | ddpg_ablated), episodes, \
seeds, state_resolution, action_resolution, outdir, run_id, env_config.*, \
tabular.*, ddpg.*, eval.method (exhaustive | tabular | deep), eval.budget, \
eval.every, eval.scope (per_test | pooled), eval.retrain, eval.enabled.";

#[derive(Debug, Parser)]
#[command(name = "mftg", version, about = "Mean-field type game solvers and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a profile and write `<outdir>/<run-id>-seed<N>/{config.json, metrics.csv, checkpoints/, reports/, plots/}`.
    #[command(after_help = MANIFEST_HELP)]
    Train {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        settings: Vec<String>,
    },
    /// Evaluate a checkpoint: exploitability report plus test-set trajectories.
    ///
    /// Takes `--checkpoint FILE` and optionally `--report-dir DIR`, besides manifest settings.
    #[command(after_help = MANIFEST_HELP)]
    Eval {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        settings: Vec<String>,
    },
    /// Exploitability of a checkpoint or of a built-in profile (uniform, stay, random).
    ///
    /// Takes `--checkpoint FILE` or `--profile NAME`, and optionally `--report-dir DIR`.
    #[command(after_help = MANIFEST_HELP)]
    Exploitability {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        settings: Vec<String>,
    },
    /// Finite-population gap against the mean field and its log-log slope in N.
    Rate(RateArgs),
    /// Run a Cartesian grid of manifests.
    ///
    /// Axes come from `--grid FILE` (JSON object of dotted key to value list)
    /// and/or repeated `--axis key=v1,v2`. `--jobs N` bounds concurrency and
    /// `--sweep-id ID` names the run directories and the summary file.
    #[command(after_help = MANIFEST_HELP)]
    Sweep {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        settings: Vec<String>,
    },
    /// Render a metrics, gap or trajectory CSV as SVG.
    Plot(PlotArgs),
    /// List the built-in environments.
    Envs,
}

#[derive(Debug, clap::Args)]
pub struct RateArgs {
    #[arg(long, default_value = "grid1d")]
    pub env: String,
    /// Profile checkpoint; a seeded random linear-softmax profile otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "n-list", value_delimiter = ',', default_value = "100,1000,10000")]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Time at which the slope is fitted (also the simulated horizon).
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from this test distribution instead of a sampled training one.
    #[arg(long = "test-index")]
    pub test_index: Option<usize>,
    #[arg(long, default_value = "runs/rate")]
    pub out: PathBuf,
    /// Replace the simulation by exact c/√N data (self-test of the fit).
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, clap::Args)]
pub struct PlotArgs {
    /// reward, exploitability, rate or heatmap.
    #[arg(long)]
    pub kind: String,
    /// Input CSV; repeat for replicates (reward, exploitability) or series (rate).
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Time shown by the rate plot (latest by default).
    #[arg(long)]
    pub t: Option<usize>,
    /// Test distribution shown by the heatmap.
    #[arg(long = "test-index", default_value_t = 0)]
    pub test_index: usize,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn config_path(p: &ParsedArgs) -> CliResult<Option<PathBuf>> {
    Ok(p.one("config")?.map(PathBuf::from))
}

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train { settings } => {
            let p = ParsedArgs::parse(&settings, &["config"])?;
            let m = manifest::resolve(config_path(&p)?.as_deref(), &p.overrides)?;
            for run in pipeline::run_train(&m)? {
                match &run.report {
                    Some(r) => println!("{}: exploitability {} {:?}", run.dir.display(), r.total, r.exploitabilities),
                    None => println!("{}", run.dir.display()),
                }
            }
            Ok(())
        }
        Command::Eval { settings } => evaluate(&settings, true),
        Command::Exploitability { settings } => evaluate(&settings, false),
        Command::Rate(a) => rate(a),
        Command::Sweep { settings } => {
            let p = ParsedArgs::parse(&settings, &["config", "grid", "axis", "jobs", "sweep_id"])?;
            let base = manifest::user_layer(config_path(&p)?.as_deref(), &p.overrides)?;
            let mut grid = match p.one("grid")? {
                Some(path) => sweep::SweepGrid::from_json(&manifest::read_json_object(Path::new(path))?)?,
                None => sweep::SweepGrid::default(),
            };
            for spec in p.all("axis") {
                grid.push_spec(spec)?;
            }
            let jobs = match p.one("jobs")? {
                Some(j) => j.parse().map_err(|_| CliError::usage(format!("invalid job count `{j}`")))?,
                None => 1,
            };
            let id = p.one("sweep_id")?.unwrap_or("sweep").to_string();
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return Err(CliError::usage(format!("invalid sweep id `{id}`")));
            }
            let out = sweep::run_sweep(&base, &grid, &id, jobs)?;
            let failed = out.cells.iter().filter(|c| c.outcome.is_err()).count();
            println!("{} cells, {failed} failed; summary {}", out.cells.len(), out.summary.display());
            if failed > 0 {
                return Err(CliError::Runtime(anyhow::anyhow!("{failed} of {} sweep cells failed", out.cells.len())));
            }
            Ok(())
        }
        Command::Plot(a) => {
            let kind: PlotKind = a.kind.parse()?;
            let inputs: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
            let svg = plot::render(kind, &inputs, a.t, a.test_index)?;
            artifacts::write_file(&a.out, &svg)
        }
        Command::Envs => {
            let mut table = String::from("name\tcoalitions\tstates\tactions\thorizon\tgamma\ttests\n");
            for name in ENV_NAMES {
                let env = make_env(name, &Default::default())?;
                table += &format!(
                    "{name}\t{}\t{:?}\t{:?}\t{}\t{}\t{}\n",
                    env.num_coalitions(),
                    env.state_sizes(),
                    env.action_sizes(),
                    env.horizon(),
                    env.gamma(),
                    env.test_set().len()
                );
            }
            match std::io::Write::write_all(&mut std::io::stdout(), table.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Runtime(e.into())),
                _ => Ok(()),
            }
        }
    }
}

fn evaluate(settings: &[String], full: bool) -> CliResult<()> {
    let reserved: &[&str] =
        if full { &["config", "checkpoint", "report_dir"] } else { &["config", "checkpoint", "profile", "report_dir"] };
    let p = ParsedArgs::parse(settings, reserved)?;
    let user = manifest::user_layer(config_path(&p)?.as_deref(), &p.overrides)?;
    let source = match (p.one("checkpoint")?, if full { None } else { p.one("profile")? }) {
        (Some(c), None) => ProfileSource::Checkpoint(Path::new(c)),
        (None, Some(name)) => ProfileSource::Builtin(name),
        (Some(_), Some(_)) => return Err(CliError::usage("give either `--checkpoint` or `--profile`, not both")),
        (None, None) if full => return Err(CliError::usage("`eval` needs `--checkpoint FILE`")),
        (None, None) => return Err(CliError::usage("`exploitability` needs `--checkpoint FILE` or `--profile NAME`")),
    };
    let (m, profile, env, default_dir) = match source {
        ProfileSource::Checkpoint(path) => {
            let (m, profile, env) = pipeline::checkpoint_manifest(user, path)?;
            (m, profile, env, pipeline::default_report_dir(path))
        }
        ProfileSource::Builtin(name) => {
            let m = manifest::resolve_value(user, None)?;
            let env = m.build_env()?;
            let profile = pipeline::builtin_profile(&env, name, m.seeds[0])?;
            let dir = m.outdir.join(format!("{}-{name}", m.env)).join("reports");
            (m, profile, env, dir)
        }
    };
    let dir = p.one("report_dir")?.map(PathBuf::from).unwrap_or(default_dir);
    let stem = if full { "eval" } else { "exploitability" };
    let out = pipeline::evaluate_profile(&m, &env, &profile, &dir, stem, full)?;
    println!(
        "exploitability {} {:?}; reports in {}",
        out.report.total,
        out.report.exploitabilities,
        out.report_dir.display()
    );
    Ok(())
}

fn rate(a: RateArgs) -> CliResult<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => manifest::default_seed()?,
    };
    let env = make_env(&a.env, &Default::default())?;
    let profile = match &a.checkpoint {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!("checkpoint {} not found", path.display())));
            }
            Some(artifacts::load_checkpoint(path)?.profile(&env)?)
        }
        None => None,
    };
    let t = a.t;
    let outcome = pipeline::run_rate(RateRequest {
        env: &env,
        profile,
        n_list: a.n_list.clone(),
        reps: a.reps,
        t,
        seed,
        test_index: a.test_index,
        synthetic: a.synthetic,
    })?;
    let ns: Vec<String> = a.n_list.iter().map(|n| n.to_string()).collect();
    let line =
        format!("slope {:.6} (se {:.6}) at t = {t} over N = {}", outcome.fit.slope, outcome.fit.slope_se, ns.join(","));
    artifacts::write_file(&a.out.join("gap.csv"), &outcome.report.to_csv())?;
    artifacts::write_file(&a.out.join("slope.txt"), &format!("{line}\n"))?;
    artifacts::write_file(&a.out.join("rate.svg"), &pipeline::rate_figure(&outcome, t).to_svg())?;
    println!("{line}");
    Ok(())
}
