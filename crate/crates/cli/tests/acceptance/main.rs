//! Acceptance suite: one line per criterion, non-zero exit when any fails.
//!
//! `FLOWKD_ACCEPTANCE=1,4,9` restricts the run to the listed criteria.

mod invariants;
mod oracles;

use std::io::Write;
use std::process::ExitCode;
use std::time::{Duration, Instant};

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
    /// Extra lines printed under the verdict.
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into(), notes: Vec::new() }
    }

    pub fn with_notes(mut self, notes: Vec<String>) -> Self {
        self.notes = notes;
        self
    }

    /// Fails the criterion when it ran longer than `limit`.
    fn within(mut self, elapsed: Duration, limit: Option<Duration>) -> Self {
        if let Some(limit) = limit {
            if elapsed > limit {
                self.passed = false;
                self.detail.push_str(&format!("; exceeded runtime limit of {}s", limit.as_secs()));
            }
        }
        self
    }
}

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 9] = [
    Criterion { id: 1, title: "math-core oracles", limit: Some(Duration::from_secs(30)), run: oracles::run },
    Criterion { id: 2, title: "loss gradients", limit: Some(Duration::from_secs(120)), run: exact::gradients },
    Criterion { id: 3, title: "invariants", limit: None, run: invariants::run },
    Criterion { id: 4, title: "alpha schedule", limit: None, run: exact::schedule },
    Criterion { id: 5, title: "degeneration to PKT", limit: None, run: exact::degeneration },
    Criterion { id: 6, title: "critical-period direction", limit: Some(Duration::from_secs(20 * 60)), run: experiments::critical_period },
    Criterion { id: 7, title: "auxiliary size direction", limit: None, run: experiments::auxiliary_size },
    Criterion { id: 8, title: "HoG cloning", limit: None, run: experiments::hog_cloning },
    Criterion { id: 9, title: "determinism", limit: None, run: exact::determinism },
];

fn selected() -> Option<Vec<u32>> {
    let list = std::env::var("FLOWKD_ACCEPTANCE").ok()?;
    Some(list.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let only = selected();
    let mut stdout = std::io::stdout();
    let mut failed = Vec::new();
    for c in CRITERIA.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id))) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = outcome.within(elapsed, c.limit);
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            stdout,
            "criterion {} {:<26} {verdict}  {} [{:.1}s]",
            c.id,
            c.title,
            outcome.detail,
            elapsed.as_secs_f64()
        );
        for note in &outcome.notes {
            let _ = writeln!(stdout, "    {note}");
        }
        let _ = stdout.flush();
        if !outcome.passed {
            failed.push(c.id);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        let _ = writeln!(stdout, "failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
