//! Runs every acceptance check at full scale, one line per check.

use collapse_core::verify::{run_all, VerifyConfig};

#[test]
fn acceptance_criteria() {
    let results = run_all(&VerifyConfig::default()).expect("checks run");
    for r in &results {
        println!("{}", r.line());
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed checks: {failed:?}");
}
