//! The twelve acceptance criteria, one PASS/FAIL line each.

use std::io::Write;

use ctlstop_core::verify::{print_table, run_acceptance, SuiteConfig};

#[test]
fn acceptance_criteria() {
    let lines = run_acceptance(SuiteConfig::default());
    // Straight to the process stdout so the table shows without --nocapture.
    let mut out = std::io::stdout().lock();
    writeln!(out, "\n{}", print_table(&lines)).unwrap();
    out.flush().unwrap();
    let failed: Vec<_> = lines.iter().filter(|l| !l.passed).map(|l| l.id.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
