//! Acceptance run: one line per criterion, non-zero exit if any fails.
//! Pass criterion numbers as arguments to run a subset.

mod common;

use std::process::ExitCode;

use common::criteria::{self, Outcome};

fn main() -> ExitCode {
    let checks: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient checks", criteria::c1_gradients),
        (2, "causality", criteria::c2_causality),
        (3, "encodings", criteria::c3_encodings),
        (4, "string and clustering oracles", criteria::c4_oracles),
        (5, "gradient dropout arithmetic", criteria::c5_gradient_dropout),
        (6, "pipeline recovery", criteria::c6_pipeline),
        (7, "learning", criteria::c7_learning),
        (8, "gradient dropout direction", criteria::c8_gd_direction),
        (9, "overfit", criteria::c9_overfit),
        (10, "metrics", criteria::c10_metrics),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in checks {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict} {name}: {}", out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
