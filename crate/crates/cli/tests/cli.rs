use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mftg_cli::manifest::resolve_value;
use mftg_cli::plot::SATURATED;
use mftg_cli::sweep::SweepGrid;

fn mftg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mftg"))
        .args(args)
        .current_dir(dir)
        .env_remove("MFTG_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn data_rows(csv: &str) -> usize {
    csv.lines().filter(|l| !l.starts_with('#')).count() - 1
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn train_grid1d(dir: &Path, outdir: &str, episodes: &str) -> PathBuf {
    let out = mftg(
        dir,
        &["train", "--env", "grid1d", "--algo", "dnashq", "--episodes", episodes, "--seed", "7", "--outdir", outdir],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join(outdir).join("grid1d-dnashq-seed7")
}

#[test]
fn train_writes_one_metrics_row_per_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_grid1d(tmp.path(), "runs", "100");
    let metrics = String::from_utf8(read(run.join("metrics.csv"))).unwrap();
    assert!(metrics.starts_with("# schema=metrics/1\n"));
    assert_eq!(data_rows(&metrics), 100);
    for sub in ["checkpoints", "reports", "plots"] {
        assert!(run.join(sub).is_dir(), "{sub}");
    }
    assert!(run.join("checkpoints/tables.bin").is_file());
    let config: serde_json::Value = serde_json::from_slice(&read(run.join("config.json"))).unwrap();
    assert_eq!(config["seeds"], serde_json::json!([7]));
    assert_eq!(config["episodes"], 100);
}

#[test]
fn config_snapshot_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_grid1d(tmp.path(), "a", "40");
    let config = run.join("config.json");
    let out = mftg(tmp.path(), &["train", "--config", config.to_str().unwrap(), "--outdir", "b"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let again = tmp.path().join("b/grid1d-dnashq-seed7");
    for f in ["metrics.csv", "reports/exploitability.json", "checkpoints/tables.bin"] {
        assert!(read(run.join(f)) == read(again.join(f)), "{f} differs");
    }
}

#[test]
fn identical_manifests_give_identical_bytes() {
    let roots = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for algo in ["dnashq", "il_mftg", "ddpg"] {
        let mut dirs = Vec::new();
        for root in &roots {
            let mut args = vec!["train", "--algo", algo, "--seed", "3", "--eval.every", "5"];
            if algo == "ddpg" {
                args.extend([
                    "--episodes",
                    "10",
                    "--ddpg.width",
                    "8",
                    "--ddpg.batch",
                    "4",
                    "--eval.method",
                    "exhaustive",
                    "--eval.state_resolution",
                    "2",
                    "--ddpg.eval_every",
                    "5",
                ]);
            } else {
                args.extend(["--episodes", "30", "--tabular.eval_every", "10"]);
            }
            let out = mftg(root.path(), &args);
            assert_eq!(code(&out), 0, "{algo}: {}", stderr(&out));
            dirs.push(root.path().join("runs").join(format!("grid1d-{algo}-seed3")));
        }
        for f in [
            "metrics.csv",
            "config.json",
            "reports/exploitability.json",
            "reports/exploitability.csv",
            "reports/trajectories.csv",
        ] {
            assert!(read(dirs[0].join(f)) == read(dirs[1].join(f)), "{algo}: {f} differs");
        }
    }
}

#[test]
fn seed_defaults_to_the_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mftg"))
        .args(["train", "--episodes", "5", "--eval.enabled", "false"])
        .current_dir(tmp.path())
        .env("MFTG_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(tmp.path().join("runs/grid1d-dnashq-seed42/metrics.csv").is_file());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mftg(tmp.path(), &["train", "--env", "nowhere"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown environment"));
    for args in [
        vec!["train", "--algo", "sarsa"],
        vec!["train", "--episodes", "0"],
        vec!["train", "--no_such_key", "1"],
        vec!["train", "--config", "missing.json"],
        vec!["train", "stray"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&mftg(tmp.path(), &args)), 2, "{args:?}");
    }
}

#[test]
fn eval_reports_every_test_row_and_sums() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_grid1d(tmp.path(), "runs", "50");
    let ck = run.join("checkpoints/tables.bin");
    let out = mftg(tmp.path(), &["eval", "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: mftg::eval::EvalReport = serde_json::from_slice(&read(run.join("reports/eval.json"))).unwrap();
    let sum: f64 = report.exploitabilities.iter().sum();
    assert!((report.total - sum).abs() <= 1e-9 * (1.0 + sum.abs()));
    for player in 0..2 {
        assert_eq!(report.rows.iter().filter(|r| r.player == player).count(), 3);
    }
    let csv = String::from_utf8(read(run.join("reports/eval.csv"))).unwrap();
    assert_eq!(data_rows(&csv), 6);
    assert!(run.join("reports/trajectories.csv").is_file());

    // same evaluation of the training run's final profile
    let trained: mftg::eval::EvalReport =
        serde_json::from_slice(&read(run.join("reports/exploitability.json"))).unwrap();
    assert_eq!(trained.values, report.values);
}

#[test]
fn eval_rejects_missing_and_mismatched_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mftg(tmp.path(), &["eval", "--checkpoint", "nope.bin"]);
    assert_eq!(code(&out), 2);
    let run = train_grid1d(tmp.path(), "runs", "5");
    let ck = run.join("checkpoints/tables.bin");
    let out = mftg(tmp.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--env", "planning2d"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let junk = tmp.path().join("junk.bin");
    fs::write(&junk, b"not a checkpoint at all").unwrap();
    assert_eq!(code(&mftg(tmp.path(), &["eval", "--checkpoint", junk.to_str().unwrap()])), 2);
}

#[test]
fn exploitability_of_builtin_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let out =
        mftg(tmp.path(), &["exploitability", "--profile", "uniform", "--state_resolution", "4", "--report-dir", "r"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: mftg::eval::EvalReport =
        serde_json::from_slice(&read(tmp.path().join("r/exploitability.json"))).unwrap();
    assert!(report.exploitabilities.iter().all(|&e| e >= -1e-9));
    assert_eq!(code(&mftg(tmp.path(), &["exploitability", "--profile", "clever"])), 2);
    assert_eq!(code(&mftg(tmp.path(), &["exploitability"])), 2);
}

#[test]
fn synthetic_rate_has_slope_minus_one_half() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mftg(tmp.path(), &["rate", "--synthetic", "--out", "rate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with("slope -0.500000 "), "{line}");
    assert!(tmp.path().join("rate/gap.csv").is_file());
    let svg = String::from_utf8(read(tmp.path().join("rate/rate.svg"))).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(code(&mftg(tmp.path(), &["rate", "--synthetic", "--n-list", "100"])), 2);
    assert_eq!(code(&mftg(tmp.path(), &["rate", "--n-list", "100"])), 2);
}

#[test]
fn simulated_rate_writes_the_gap_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out =
        mftg(tmp.path(), &["rate", "--n-list", "20,80,320", "--reps", "4", "--t", "2", "--seed", "1", "--out", "r"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = String::from_utf8(read(tmp.path().join("r/gap.csv"))).unwrap();
    assert!(csv.starts_with("# schema=gap_report/1\n"));
    assert_eq!(data_rows(&csv), 3 * 3);
}

#[test]
fn sweep_runs_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mftg(
        tmp.path(),
        &[
            "sweep",
            "--episodes",
            "6",
            "--state_resolution",
            "2",
            "--axis",
            "tabular.eps_end=0.01,0.1",
            "--axis",
            "tabular.eps_start=0.9,0.99",
            "--jobs",
            "2",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dirs: Vec<_> =
        fs::read_dir(tmp.path().join("runs")).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(dirs.len(), 4);
    let summary = String::from_utf8(read(tmp.path().join("runs/sweep-summary.csv"))).unwrap();
    assert!(summary.starts_with("# schema=sweep_summary/1\n"));
    assert_eq!(data_rows(&summary), 4);
    assert!(summary.lines().skip(2).all(|l| l.contains(",ok,")));
}

#[test]
fn sweep_records_failed_cells_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let out =
        mftg(tmp.path(), &["sweep", "--episodes", "4", "--state_resolution", "2", "--axis", "tabular.eps_end=0.1,7"]);
    assert_eq!(code(&out), 3);
    let summary = String::from_utf8(read(tmp.path().join("runs/sweep-summary.csv"))).unwrap();
    assert_eq!(data_rows(&summary), 2);
    assert!(summary.contains(",ok,") && summary.contains(",failed,"));
}

#[test]
fn batch_and_learning_rate_axes_resolve() {
    let grid = SweepGrid::from_json(&serde_json::json!({
        "ddpg.batch": [16, 32, 64, 128],
        "ddpg.actor_lr": [5e-5, 5e-4, 5e-3, 5e-2],
    }))
    .unwrap();
    assert_eq!(grid.len(), 16);
    let mut seen = Vec::new();
    for idx in 0..grid.len() {
        let mut user = serde_json::json!({"env": "planning2d", "algo": "ddpg"});
        for (k, v) in grid.cell(idx) {
            mftg_cli::manifest::set_path(&mut user, &k, v).unwrap();
        }
        let m = resolve_value(user, None).unwrap();
        seen.push((m.ddpg.batch, m.ddpg.actor_lr.to_bits()));
    }
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 16);
}

#[test]
fn plots_are_deterministic_and_check_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("empty.csv"), "# schema=metrics/1\nepisode,return_0,return_1,exploitability_total\n").unwrap();
    for kind in ["reward", "exploitability"] {
        let out = mftg(dir, &["plot", "--kind", kind, "--input", "empty.csv", "--out", "a.svg"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let svg = String::from_utf8(read(dir.join("a.svg"))).unwrap();
        assert!(svg.contains("<svg") && !svg.contains("<polyline"));
    }

    let run = train_grid1d(dir, "runs", "30");
    let metrics = run.join("metrics.csv");
    for kind in ["reward", "exploitability"] {
        let m = metrics.to_str().unwrap();
        assert_eq!(code(&mftg(dir, &["plot", "--kind", kind, "--input", m, "--input", m, "--out", "p1.svg"])), 0);
        assert_eq!(code(&mftg(dir, &["plot", "--kind", kind, "--input", m, "--input", m, "--out", "p2.svg"])), 0);
        assert!(read(dir.join("p1.svg")) == read(dir.join("p2.svg")), "{kind} plot differs");
    }
    let traj = run.join("reports/trajectories.csv");
    assert_eq!(
        code(&mftg(dir, &["plot", "--kind", "heatmap", "--input", traj.to_str().unwrap(), "--out", "h.svg"])),
        0
    );

    let out = mftg(dir, &["plot", "--kind", "rate", "--input", metrics.to_str().unwrap(), "--out", "bad.svg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("schema mismatch"));
    assert_eq!(code(&mftg(dir, &["plot", "--kind", "histogram", "--input", "empty.csv", "--out", "x.svg"])), 2);
}

#[test]
fn point_mass_heatmap_has_one_saturated_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let csv =
        "# schema=trajectory/1\ntest_index,t,coalition,state,x,y,mass\n0,0,0,0,0,0,0\n0,0,0,1,1,0,1\n0,0,0,2,2,0,0\n";
    fs::write(tmp.path().join("t.csv"), csv).unwrap();
    let out = mftg(tmp.path(), &["plot", "--kind", "heatmap", "--input", "t.csv", "--out", "h.svg"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = String::from_utf8(read(tmp.path().join("h.svg"))).unwrap();
    assert_eq!(svg.matches(SATURATED).count(), 1);
    assert_eq!(svg.matches("fill=\"#ffffff\"").count(), 2);
}
