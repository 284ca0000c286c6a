//! Bookkeeping for the acceptance suite in `tests/acceptance.rs`.

use std::time::{Duration, Instant};

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: String,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} {:<5} {} ({:.1} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Collects outcomes, printing each as soon as it is known.
#[derive(Debug, Default)]
pub struct Report {
    pub outcomes: Vec<Outcome>,
    filter: Vec<String>,
}

impl Report {
    /// Criteria whose id starts with one of `filter` run; all run when it is empty.
    pub fn new(filter: Vec<String>) -> Self {
        Report { outcomes: Vec::new(), filter }
    }

    pub fn wants(&self, id: &str) -> bool {
        self.filter.is_empty() || self.filter.iter().any(|f| id.starts_with(f.as_str()))
    }

    /// Runs `f` if selected. A time budget, when given, is part of the verdict.
    pub fn run(&mut self, id: &str, budget: Option<Duration>, f: impl FnOnce() -> (bool, String)) {
        if !self.wants(id) {
            return;
        }
        let start = Instant::now();
        let (mut pass, mut detail) = f();
        let elapsed = start.elapsed();
        if let Some(b) = budget {
            if elapsed > b {
                pass = false;
                detail.push_str(&format!("; over the {:.0} s budget", b.as_secs_f64()));
            }
        }
        let o = Outcome { id: id.to_string(), pass, detail, elapsed };
        println!("{}", o.line());
        self.outcomes.push(o);
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.pass).count()
    }
}
