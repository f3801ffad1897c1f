use std::fs;
use std::process::Command;

use otj_core::environment::CrowdMode;
use otj_core::harness::{
    generate_synthetic, run_stream, Dataset, EpisodeRecord, RunConfig, SyntheticConfig,
};

use crate::Outcome;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Operating point for the trend suite. Costs are small because expected
/// accuracy moves in steps of about 1/n per token.
const TUNED: &[(&str, &str)] = &[
    ("mcts.budget", "1000"),
    ("mcts.c", "0.05"),
    ("mcts.max_depth", "8"),
    ("mcts.max_queries_per_position", "3"),
    ("utility.cost_per_query", "0.0002"),
    ("utility.cost_per_second", "0.0002"),
    ("env.accuracy", "0.7"),
    ("env.latency_mean", "1.2"),
    ("env.latency_std_dev", "0.4"),
];

fn dataset(seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        num_examples: 500,
        length: 8,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn config(policy: &str, seed: u64) -> RunConfig {
    let mut config = RunConfig::default();
    for (k, v) in TUNED {
        config.set(k, v).unwrap();
    }
    config.set("policy", policy).unwrap();
    config.seed = seed;
    config
}

fn run(data: &Dataset, policy: &str, seed: u64) -> Vec<EpisodeRecord> {
    run_stream(data, &config(policy, seed), CrowdMode::Generative)
        .unwrap()
        .records
}

fn accuracy(records: &[EpisodeRecord]) -> f64 {
    let correct: usize = records.iter().map(|r| r.correct_tokens()).sum();
    correct as f64 / records.iter().map(|r| r.len()).sum::<usize>() as f64
}

fn queries_per_token(records: &[EpisodeRecord]) -> f64 {
    let queries: usize = records.iter().map(|r| r.num_queries).sum();
    queries as f64 / records.iter().map(|r| r.len()).sum::<usize>() as f64
}

pub struct SeedRun {
    seed: u64,
    lense: Vec<EpisodeRecord>,
    threshold: Vec<EpisodeRecord>,
    online: Vec<EpisodeRecord>,
}

pub fn run_seeds() -> Vec<SeedRun> {
    SEEDS
        .iter()
        .map(|&seed| {
            let data = dataset(seed);
            SeedRun {
                seed,
                lense: run(&data, "lense", seed),
                threshold: run(&data, "threshold", seed),
                online: run(&data, "online", seed),
            }
        })
        .collect()
}

pub fn learning_curve(runs: &[SeedRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let fifth = r.lense.len() / 5;
        let first = queries_per_token(&r.lense[..fifth]);
        let last = queries_per_token(&r.lense[r.lense.len() - fifth..]);
        pass &= last < first;
        parts.push(format!("seed {} {first:.3}->{last:.3}", r.seed));
    }
    Outcome::new(
        pass,
        format!("first->last quintile queries/token: {}", parts.join(", ")),
    )
}

pub fn ordering(runs: &[SeedRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let (lense, threshold) = (accuracy(&r.lense), accuracy(&r.threshold));
        let (lense50, online50) = (accuracy(&r.lense[..50]), accuracy(&r.online[..50]));
        pass &= lense >= threshold - 0.01 && lense50 - online50 >= 0.05;
        parts.push(format!(
            "seed {} lense {lense:.3} threshold {threshold:.3} | ep1-50 lense {lense50:.3} online {online50:.3}",
            r.seed
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

/// Probability that a plurality of `votes` answers, ties to the lowest
/// label index, recovers `truth`.
fn plurality_accuracy(votes: usize, k: usize, accuracy: f64, truth: usize) -> f64 {
    let wrong = (1.0 - accuracy) / (k - 1) as f64;
    let mut total = 0.0;
    let mut counts = vec![0usize; k];
    fn walk(
        label: usize,
        left: usize,
        counts: &mut Vec<usize>,
        truth: usize,
        accuracy: f64,
        wrong: f64,
        total: &mut f64,
    ) {
        let k = counts.len();
        if label == k - 1 {
            counts[label] = left;
            let winner = (0..k).fold(0, |b, y| if counts[y] > counts[b] { y } else { b });
            if winner == truth {
                let mut coef = 1.0;
                let mut remaining = counts.iter().sum::<usize>();
                let mut p = 1.0;
                for (y, &c) in counts.iter().enumerate() {
                    coef *= binomial(remaining, c);
                    remaining -= c;
                    p *= (if y == truth { accuracy } else { wrong }).powi(c as i32);
                }
                *total += coef * p;
            }
            return;
        }
        for c in 0..=left {
            counts[label] = c;
            walk(label + 1, left - c, counts, truth, accuracy, wrong, total);
        }
    }
    walk(0, votes, &mut counts, truth, accuracy, wrong, &mut total);
    total
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn nvote_gap() -> Outcome {
    let data = dataset(0);
    let k = data.label_set.len();
    let mut freq = vec![0usize; k];
    for e in &data.examples {
        for &y in &e.gold {
            freq[y] += 1;
        }
    }
    let tokens = data.num_tokens() as f64;
    let analytic = |votes| {
        (0..k)
            .map(|y| freq[y] as f64 / tokens * plurality_accuracy(votes, k, 0.7, y))
            .sum::<f64>()
    };
    let (a1, a5) = (analytic(1), analytic(5));
    let e1 = accuracy(&run(&data, "nvote:1", 0));
    let e5 = accuracy(&run(&data, "nvote:5", 0));
    let (gap, oracle) = (e5 - e1, a5 - a1);
    Outcome::new(
        e5 > e1 && (gap - oracle).abs() <= 0.03,
        format!(
            "nvote:1 {e1:.3} (analytic {a1:.3}), nvote:5 {e5:.3} (analytic {a5:.3}), gap {gap:.3} vs {oracle:.3} (±0.03)"
        ),
    )
}

pub fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.tsv");
    generate_synthetic(&SyntheticConfig {
        num_examples: 40,
        seed: 12,
        ..Default::default()
    })
    .unwrap()
    .save(&data_path)
    .unwrap();
    let simulate = |name: &str| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_otj"));
        cmd.env_remove("OTJ_CONFIG")
            .arg("simulate")
            .arg("--data")
            .arg(&data_path)
            .args(["--policy", "lense", "--seed", "12"])
            .arg("--out")
            .arg(&out);
        for (k, v) in TUNED {
            cmd.arg("--set").arg(format!("{k}={v}"));
        }
        let status = cmd.output().unwrap().status;
        (status.success(), out)
    };
    let ((ok_a, a), (ok_b, b)) = (simulate("a"), simulate("b"));
    let files = [
        "episodes.jsonl",
        "trajectory.jsonl",
        "summary.txt",
        "curve.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok() || fs::read(a.join(f)).is_err()
        })
        .collect();
    Outcome::new(
        ok_a && ok_b && differing.is_empty(),
        format!(
            "two seeded simulate runs, {} export files, differing: {differing:?}",
            files.len()
        ),
    )
}
