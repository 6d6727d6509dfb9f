//! Runs every acceptance criterion and prints one PASS/FAIL line each.

use std::io::Write;

use specmarket::verify::{run, VerifyOptions};

#[test]
fn acceptance_criteria() {
    let report = run(&VerifyOptions::default()).expect("suite runs");
    let mut out = std::io::stdout().lock();
    writeln!(out).unwrap();
    for o in &report.outcomes {
        writeln!(out, "{}", o.line()).unwrap();
    }
    out.flush().unwrap();
    assert_eq!(report.outcomes.len(), 15);
    assert!(report.passed(), "failed criteria: {:?}", report.failed());
}
