//! Acceptance criteria A1-A10, one pass/fail line each.

use std::process::ExitCode;

use lowvol_core::verify::{run_criterion, VerifyOptions, CRITERIA};

fn main() -> ExitCode {
    let opts = VerifyOptions::default();
    let mut failed = 0;
    for id in CRITERIA {
        let result = run_criterion(id, &opts).expect("known criterion");
        println!("{result}");
        if !result.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", CRITERIA.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
