//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `DSKD_ACCEPTANCE=1,2,6` restricts the run to the listed criteria.
//! `DSKD_ACCEPTANCE_OUT=<dir>` keeps the end-to-end artifacts there instead of
//! a temporary directory.

// `ensure!(a < b, ..)` must fail when either side is NaN, which `!(a < b)` does.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod clustering;
mod end_to_end;
mod formulas;
mod gradients;
mod reductions;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

pub type Check = Result<String, String>;

/// Fails the enclosing check with a formatted message unless `cond` holds.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: Box<dyn Fn(&mut end_to_end::Shared) -> Check>,
}

fn criteria() -> Vec<Criterion> {
    let secs = Duration::from_secs;
    vec![
        Criterion {
            id: 1,
            name: "morphological expansion reproduces the six negation rows",
            budget: secs(1),
            run: Box::new(|_| formulas::table1()),
        },
        Criterion {
            id: 2,
            name: "loss formulas match closed-form oracles to 1e-10",
            budget: secs(1),
            run: Box::new(|_| formulas::loss_oracles()),
        },
        Criterion {
            id: 3,
            name: "CE, KL and L_sem gradients match central differences",
            budget: secs(60),
            run: Box::new(|_| gradients::suite()),
        },
        Criterion {
            id: 4,
            name: "k-means recovers planted two-Gaussian senses",
            budget: secs(10),
            run: Box::new(|_| clustering::kmeans_recovery()),
        },
        Criterion {
            id: 5,
            name: "composition contracts and keep-rate oracle",
            budget: secs(5),
            run: Box::new(|_| clustering::composition_contracts()),
        },
        Criterion {
            id: 6,
            name: "beta=0 reproduces KD bitwise; alpha=0 reproduces CE training",
            budget: secs(60),
            run: Box::new(|_| reductions::identities()),
        },
        Criterion {
            id: 7,
            name: "DSKD beats KD on held-out cloze accuracy (sign test)",
            budget: secs(15 * 60),
            run: Box::new(end_to_end::directional),
        },
        Criterion {
            id: 8,
            name: "pipeline rerun is bit-identical",
            budget: secs(15 * 60),
            run: Box::new(end_to_end::determinism),
        },
        Criterion {
            id: 9,
            name: "kappa and k sweeps emit CSV and SVG",
            budget: secs(45 * 60),
            run: Box::new(end_to_end::sweeps),
        },
    ]
}

fn selected() -> Option<Vec<u32>> {
    let v = std::env::var("DSKD_ACCEPTANCE").ok()?;
    Some(v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let only = selected();
    let mut shared = end_to_end::Shared::new();
    let mut failed = 0;
    for c in criteria() {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| (c.run)(&mut shared)))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!(
                "{detail}; runtime {:.1}s exceeds budget {:.0}s",
                elapsed.as_secs_f64(),
                c.budget.as_secs_f64()
            )),
            other => other,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} [{}] {} ({:.2}s): {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
