use mhenet::gradsuite::{run_suite, BlockCheck};
use mhenet::tensor::{set_fault_injection, Precision};

use crate::{set_threads, CliError, CliResult, GradcheckArgs};

/// Print one line per block; fail if any exceeds its tolerance.
pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<Vec<BlockCheck>> {
    set_threads(a.common.threads);
    if Precision::COMPILED != Precision::F64 {
        eprintln!("warning: engine built with 32-bit scalars; tolerances assume 64-bit");
    }
    set_fault_injection(a.inject_fault);
    let result = run_suite(a.common.seed.unwrap_or(0));
    set_fault_injection(false);
    let checks = result?;
    println!("{:<20} {:>12} {:>8}  status", "block", "max_rel_err", "tol");
    for c in &checks {
        println!(
            "{:<20} {:>12.3e} {:>8.0e}  {}",
            c.name,
            c.max_rel_error,
            c.tol,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(CliError::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}
