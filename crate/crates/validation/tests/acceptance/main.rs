//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
//! process fails if any criterion fails. Pass criterion numbers as arguments to
//! run a subset (`cargo test --test acceptance -- 3 5`). Started with
//! `--mftg-cli ARGS...` the binary acts as the `mftg` command instead.

mod criteria;
mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Check = fn() -> Verdict;

pub const CLI_MODE: &str = "--mftg-cli";

const CRITERIA: [(u32, &str, Check); 10] = [
    (1, "finite-population rate", criteria::population_rate),
    (2, "stage-game oracle equivalence", criteria::stage_game_oracle),
    (3, "Nash Q fixed point", criteria::nashq_fixed_point),
    (4, "resolution refinement", criteria::resolution_refinement),
    (5, "exploitability soundness", criteria::exploitability_soundness),
    (6, "DNashQ beats independent learners", criteria::dnashq_vs_independent),
    (7, "gradient correctness", criteria::gradient_correctness),
    (8, "DDPG smoke", criteria::ddpg_smoke),
    (9, "simplex machinery", criteria::simplex_machinery),
    (10, "determinism", criteria::determinism),
];

fn main() -> ExitCode {
    let mut args = std::env::args_os();
    if args.nth(1).is_some_and(|a| a == CLI_MODE) {
        let code = mftg_cli::run(std::iter::once("mftg".into()).chain(args));
        return ExitCode::from(code as u8);
    }
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let status = if verdict.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} {name}: {} [{:.1} s]", verdict.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!verdict.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
