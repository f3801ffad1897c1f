//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any
//! criterion fails.

mod oracles;
mod planner;
mod trend;

use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn report(results: &mut Vec<bool>, number: usize, name: &str, outcome: Outcome) {
    let mark = if outcome.pass { "PASS" } else { "FAIL" };
    println!("[{mark}] {number:>2} {name}: {}", outcome.detail);
    results.push(outcome.pass);
}

/// Suites named on the command line, or all of them.
fn selected(suite: &str) -> bool {
    let names: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    names.is_empty() || names.iter().any(|n| suite.contains(n.as_str()))
}

fn main() {
    let mut results = Vec::new();

    if selected("oracles") {
        let t = Instant::now();
        report(
            &mut results,
            1,
            "enumeration oracles",
            oracles::enumeration(),
        );
        report(
            &mut results,
            2,
            "gradient vs finite differences",
            oracles::finite_differences(),
        );
        report(
            &mut results,
            3,
            "predictive response",
            oracles::predictive_response(),
        );
        report(
            &mut results,
            4,
            "response frequencies",
            oracles::response_frequencies(),
        );
        report(&mut results, 5, "latency sampling", oracles::latency());
        println!(
            "     oracle suite took {:.1}s (limit 120s)",
            t.elapsed().as_secs_f64()
        );
    }

    if selected("planner") {
        let t = Instant::now();
        report(
            &mut results,
            6,
            "toy expectimax games",
            planner::toy_games(),
        );
        report(
            &mut results,
            7,
            "progressive widening bound",
            planner::widening_bound(),
        );
        report(
            &mut results,
            8,
            "threshold query count",
            planner::threshold_count(),
        );
        println!(
            "     planner suite took {:.1}s (limit 300s)",
            t.elapsed().as_secs_f64()
        );
    }

    if selected("trend") {
        let t = Instant::now();
        let runs = trend::run_seeds();
        report(
            &mut results,
            9,
            "queries per token fall",
            trend::learning_curve(&runs),
        );
        report(&mut results, 10, "method ordering", trend::ordering(&runs));
        report(
            &mut results,
            11,
            "nvote gap vs majority oracle",
            trend::nvote_gap(),
        );
        report(
            &mut results,
            12,
            "byte-identical seeded exports",
            trend::determinism(),
        );
        println!(
            "     trend suite took {:.1}s (limit 900s)",
            t.elapsed().as_secs_f64()
        );
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
