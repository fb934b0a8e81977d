//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Set AGGFLOW_ACCEPTANCE to a comma-separated list of ids to run a subset.

use aggflow::acceptance::{self, ALL};
use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let ids: Vec<u32> = match std::env::var("AGGFLOW_ACCEPTANCE") {
        Ok(s) if !s.trim().is_empty() => s.split(',').map(|t| t.trim().parse().expect("criterion id")).collect(),
        _ => ALL.to_vec(),
    };
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let results = acceptance::run_suite(&ids, 2024, Some(&out), |r| {
        println!("{}", r.line());
        print!("{}", r.report_lines());
    });
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
