use std::fs;

use mhenet::metrics::{evaluate_dataset, MetricReport};

use crate::{set_threads, CliError, CliResult, EvalArgs};

/// Print the TSV report, optionally save it (`--out`) and as JSON
/// (`--json`). Any unmatched file makes the command fail after reporting.
pub fn cmd_eval(a: &EvalArgs) -> CliResult<MetricReport> {
    set_threads(a.common.threads);
    let report = evaluate_dataset(&a.pred, &a.gt)?;
    let tsv = report.to_tsv();
    print!("{tsv}");
    if let Some(p) = &a.common.out {
        fs::write(p, &tsv).map_err(|e| CliError::file(p, e))?;
    }
    if let Some(p) = &a.json {
        fs::write(p, report.to_json()?).map_err(|e| CliError::file(p, e))?;
    }
    let undefined = report.undefined_wfm_count();
    if undefined > 0 {
        eprintln!("note: {undefined} image(s) with empty ground truth; wfm reported as 0 (marked *)");
    }
    if !report.missing.is_empty() {
        for m in &report.missing {
            eprintln!("skipped: {m}");
        }
        return Err(CliError::Failed(format!("{} file(s) without a counterpart", report.missing.len())));
    }
    Ok(report)
}
