//! Prints one PASS/FAIL line per acceptance criterion and fails if any
//! criterion fails.

mod common;

use std::io::Write;

#[test]
fn acceptance() {
    // written to the process stdout directly so the lines survive capture
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (name, check) in common::CRITERIA {
        let line = match check() {
            Ok(detail) => format!("PASS {name}: {detail}"),
            Err(reason) => {
                failed.push(name);
                format!("FAIL {name}: {reason}")
            }
        };
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
