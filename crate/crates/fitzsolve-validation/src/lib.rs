//! Acceptance checks, one function per criterion. Each returns a [`Check`]
//! with the measured quantities; `tests/acceptance.rs` runs them all.

pub mod determinism;
pub mod fitzpatrick;
pub mod functionals;
pub mod oracles;
pub mod sde;
pub mod skorohod;
pub mod tree;

use std::time::{Duration, Instant};

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Check {
            passed,
            detail: detail.into(),
        }
    }

    /// Collects named sub-checks; passes when all do.
    pub fn all(parts: Vec<(String, bool)>) -> Self {
        let failed: Vec<&str> = parts
            .iter()
            .filter(|p| !p.1)
            .map(|p| p.0.as_str())
            .collect();
        let detail = if failed.is_empty() {
            parts
                .iter()
                .map(|p| p.0.as_str())
                .collect::<Vec<_>>()
                .join("; ")
        } else {
            format!("failed: {}", failed.join("; "))
        };
        Check::new(failed.is_empty(), detail)
    }
}

pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    /// Wall-clock budget; `None` when the criterion states none.
    pub budget: Option<Duration>,
    pub run: fn() -> Check,
}

pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub elapsed: Duration,
    pub detail: String,
}

impl Criterion {
    /// Runs the check; a panic or an exceeded budget counts as a failure.
    pub fn execute(&self) -> Outcome {
        let start = Instant::now();
        let res = std::panic::catch_unwind(self.run);
        let elapsed = start.elapsed();
        let (mut passed, mut detail) = match res {
            Ok(c) => (c.passed, c.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if let Some(b) = self.budget {
            if elapsed > b {
                passed = false;
                detail = format!("over budget {:.0} s; {detail}", b.as_secs_f64());
            }
        }
        Outcome {
            id: self.id,
            name: self.name,
            passed,
            elapsed,
            detail,
        }
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            id: 1,
            name: "fitzpatrick lower bound and membership",
            budget: secs(10),
            run: fitzpatrick::lower_bound_and_membership,
        },
        Criterion {
            id: 2,
            name: "closed-form vs grid-search fitzpatrick",
            budget: secs(30),
            run: fitzpatrick::closed_form_vs_grid,
        },
        Criterion {
            id: 3,
            name: "1D skorohod exactness",
            budget: secs(5),
            run: skorohod::reflection_exactness,
        },
        Criterion {
            id: 4,
            name: "a priori and holder estimate harness",
            budget: secs(60),
            run: skorohod::estimate_harness,
        },
        Criterion {
            id: 5,
            name: "minimization equals solution",
            budget: secs(120),
            run: skorohod::minimization,
        },
        Criterion {
            id: 6,
            name: "functional sign, zero and convexity laws",
            budget: secs(300),
            run: functionals::sign_zero_convexity,
        },
        Criterion {
            id: 7,
            name: "reflected additive SDE law",
            budget: secs(120),
            run: sde::reflected_law,
        },
        Criterion {
            id: 8,
            name: "backward tree vs brute force",
            budget: secs(60),
            run: tree::brute_force_agreement,
        },
        Criterion {
            id: 9,
            name: "martingale representation exactness",
            budget: secs(5),
            run: tree::representation,
        },
        Criterion {
            id: 10,
            name: "CLI determinism",
            budget: None,
            run: determinism::reruns_identical,
        },
    ]
}
