//! Runs every acceptance criterion and prints one line per criterion.

use std::process::ExitCode;

use amplitude_flow_cli::acceptance::{self, SuiteInputs};

fn main() -> ExitCode {
    let ctx = SuiteInputs::default();
    let mut failed = 0;
    for id in acceptance::ALL {
        let outcome = acceptance::evaluate(id, &ctx);
        println!("{outcome}");
        failed += usize::from(!outcome.passed);
    }
    println!("acceptance: {} of {} criteria passed", acceptance::ALL.len() - failed, acceptance::ALL.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
