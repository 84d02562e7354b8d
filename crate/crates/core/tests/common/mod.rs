#![allow(dead_code)]

use std::path::PathBuf;

use qhr::io::load_model;
use qhr::ModelParams;

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

pub fn fixture(name: &str) -> ModelParams {
    load_model(models_dir().join(format!("{name}.json")))
        .unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// `|x − shown| ≤ 1` unit of the last displayed digit.
pub fn within_ulp(x: f64, shown: f64, decimals: i32) -> bool {
    (x - shown).abs() <= 10f64.powi(-decimals) * (1.0 + 1e-9)
}

/// Prints the single verdict line for an acceptance criterion and fails the
/// test with the collected details.
pub fn report(id: &str, title: &str, failures: &[String]) {
    if failures.is_empty() {
        println!("PASS  criterion {id}: {title}");
    } else {
        println!("FAIL  criterion {id}: {title}");
        for f in failures {
            println!("        {f}");
        }
        panic!("criterion {id} failed: {}", failures.join("; "));
    }
}
