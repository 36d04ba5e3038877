//! Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
//! `KL_CRITERIA=1,6,7` restricts the run.

use kl_verify::{run_criterion, run_suite_with};
use std::process::ExitCode;

fn main() -> ExitCode {
    let only: Option<Vec<u8>> = std::env::var("KL_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|c| c.trim().parse().ok()).collect());
    let failed = match only {
        Some(list) => {
            let mut failed = 0;
            for c in list {
                match run_criterion(c) {
                    Ok(check) => {
                        println!("{check}");
                        failed += usize::from(!check.passed);
                    }
                    Err(e) => {
                        println!("criterion {c:>2} FAIL error: {e}");
                        failed += 1;
                    }
                }
            }
            failed
        }
        None => match run_suite_with("acceptance", |c| println!("{c}")) {
            Ok(rep) => rep.checks.iter().filter(|c| !c.passed).count(),
            Err(e) => {
                println!("acceptance run aborted: {e}");
                return ExitCode::FAILURE;
            }
        },
    };
    println!("acceptance: {failed} failing");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
