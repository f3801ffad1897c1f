use otj_core::crf::{
    condition_on_responses, forward_backward, target_gradient, target_objective, viterbi_map,
    ChainPotentials, CrfModel, LabelSet, SoftTarget, TokenSequence,
};
use otj_core::environment::{posterior_predictive_response, LatencyModel, ResponseModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

/// Every label sequence of length `n` over `k` labels.
fn all_sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..k).map(move |y| {
                    let mut s = prefix.clone();
                    s.push(y);
                    s
                })
            })
            .collect();
    }
    out
}

fn score(p: &ChainPotentials, ys: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        s += p.node(i, y);
        if i > 0 {
            s += p.edge_at(ys[i - 1], y);
        }
    }
    s
}

fn random_potentials(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ChainPotentials {
    let node = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let edge = (0..k * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    ChainPotentials::new(n, k, node, edge).unwrap()
}

/// Marginals, log partition and argmax of the unnormalized weights
/// `exp(score(y) + extra(y))`.
struct Enumerated {
    marginals: Vec<Vec<f64>>,
    log_z: f64,
    map: Vec<usize>,
}

fn enumerate(p: &ChainPotentials, extra: impl Fn(&[usize]) -> f64) -> Enumerated {
    let (n, k) = (p.len(), p.num_labels());
    let seqs = all_sequences(n, k);
    let scores: Vec<f64> = seqs.iter().map(|s| score(p, s) + extra(s)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let mut marginals = vec![vec![0.0; k]; n];
    for (s, &sc) in seqs.iter().zip(&scores) {
        let w = (sc - max).exp() / z;
        for (i, &y) in s.iter().enumerate() {
            marginals[i][y] += w;
        }
    }
    let best = (0..seqs.len()).fold(0, |b, j| if scores[j] > scores[b] { j } else { b });
    Enumerated {
        marginals,
        log_z: max + z.ln(),
        map: seqs[best].clone(),
    }
}

fn max_diff(a: &[Vec<f64>], b: impl Iterator<Item = Vec<f64>>) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| (p - q).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

pub fn enumeration() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut map_mismatches) = (0.0f64, 0);
    for _ in 0..500 {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(2..=4);
        let p = random_potentials(&mut rng, n, k);

        let fb = forward_backward(&p);
        let oracle = enumerate(&p, |_| 0.0);
        worst = worst
            .max(max_diff(&oracle.marginals, fb.rows().map(|r| r.to_vec())))
            .max((fb.log_partition() - oracle.log_z).abs());
        if viterbi_map(&p) != oracle.map {
            map_mismatches += 1;
        }

        let acc = rng.random_range(0.4..0.95);
        let model = ResponseModel::new(acc, k).unwrap();
        let responses: Vec<(usize, usize)> = (0..rng.random_range(0..=2 * n))
            .map(|_| (rng.random_range(0..n), rng.random_range(0..k)))
            .collect();
        let conditioned = forward_backward(&condition_on_responses(&p, &responses, &model));
        let oracle = enumerate(&p, |ys| {
            responses
                .iter()
                .map(|&(i, r)| model.prob(r, ys[i]).ln())
                .sum()
        });
        worst = worst.max(max_diff(
            &oracle.marginals,
            conditioned.rows().map(|r| r.to_vec()),
        ));
    }
    Outcome::new(
        worst <= TOL && map_mismatches == 0,
        format!("500 instances, max |diff| {worst:.2e} (tol {TOL:.0e}), MAP mismatches {map_mismatches}"),
    )
}

/// A model over `n` random tokens with every weight drawn at random.
fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (CrfModel, TokenSequence) {
    let words = ["ab", "cd", "ef", "Gh", "ij", "kl"];
    let x = TokenSequence::new((0..n).map(|_| words[rng.random_range(0..words.len())])).unwrap();
    let labels = LabelSet::new((0..k).map(|y| format!("L{y}"))).unwrap();
    let mut model = CrfModel::new(labels);
    model.register(&x);
    for w in model.weights_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    (model, x)
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

pub fn finite_differences() -> Outcome {
    const TOL: f64 = 1e-5;
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut coordinates = 0;
    for instance in 0..100 {
        let n = rng.random_range(1..=5);
        let k = rng.random_range(2..=4);
        let (mut model, x) = random_model(&mut rng, n, k);
        let target = if instance % 2 == 0 {
            SoftTarget::product((0..n).map(|_| random_distribution(&mut rng, k)).collect())
        } else {
            SoftTarget::from_pairwise(&random_potentials(&mut rng, n, k).pairwise_marginals())
        };
        let l2 = rng.random_range(0.0..0.1);
        let grad = target_gradient(&model, &x, &target, l2).unwrap();
        for j in 0..grad.len() {
            let w = model.weights()[j];
            model.weights_mut()[j] = w + H;
            let up = target_objective(&model, &x, &target, l2).unwrap();
            model.weights_mut()[j] = w - H;
            let down = target_objective(&model, &x, &target, l2).unwrap();
            model.weights_mut()[j] = w;
            let fd = (up - down) / (2.0 * H);
            let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
            coordinates += 1;
        }
    }
    Outcome::new(
        worst <= TOL,
        format!("100 instances, {coordinates} coordinates, max relative error {worst:.2e} (tol {TOL:.0e})"),
    )
}

pub fn predictive_response() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(2..=3);
        let (model, x) = random_model(&mut rng, n, k);
        let resp = ResponseModel::new(rng.random_range(0.4..0.95), k).unwrap();
        let received: Vec<(usize, usize)> = (0..rng.random_range(0..=3))
            .map(|_| (rng.random_range(0..n), rng.random_range(0..k)))
            .collect();
        let q = rng.random_range(0..n);
        let got = posterior_predictive_response(&model, &x, &received, q, &resp);

        // Joint enumeration over (y, r'): p(r' | received) ∝ Σ_y p(y) Π p(r_j | y) p(r' | y_q).
        let p = model.compute_potentials(&x);
        let mut joint = vec![0.0; k];
        for ys in all_sequences(n, k) {
            let prior = score(&p, &ys).exp();
            let evidence: f64 = received.iter().map(|&(i, r)| resp.prob(r, ys[i])).product();
            for (r, slot) in joint.iter_mut().enumerate() {
                *slot += prior * evidence * resp.prob(r, ys[q]);
            }
        }
        let total: f64 = joint.iter().sum();
        for (a, b) in got.iter().zip(&joint) {
            worst = worst.max((a - b / total).abs());
        }
    }
    Outcome::new(
        worst <= TOL,
        format!("300 instances, max |diff| {worst:.2e} (tol {TOL:.0e})"),
    )
}

pub fn response_frequencies() -> Outcome {
    const SAMPLES: usize = 100_000;
    let model = ResponseModel::new(0.7, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0usize; 4];
    for _ in 0..SAMPLES {
        counts[model.sample(0, &mut rng)] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / SAMPLES as f64).collect();
    let pass = (freq[0] - 0.7).abs() <= 0.015 && freq[1..].iter().all(|f| (f - 0.1).abs() <= 0.01);
    Outcome::new(
        pass,
        format!(
            "correct {:.4} (0.7 ± 0.015), wrong {:.4} {:.4} {:.4} (0.1 ± 0.01)",
            freq[0], freq[1], freq[2], freq[3]
        ),
    )
}

pub fn latency() -> Outcome {
    const TRIALS: usize = 100_000;
    let model = LatencyModel::new(2.0, 0.5, LatencyModel::DEFAULT_FLOOR).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..TRIALS {
        let issue = rng.random_range(0.0..5.0);
        let now = issue + rng.random_range(0.0..6.0);
        if model.sample_conditional(issue, now, &mut rng) <= now {
            violations += 1;
        }
    }
    let mean = (0..TRIALS).map(|_| model.sample(&mut rng)).sum::<f64>() / TRIALS as f64;
    Outcome::new(
        violations == 0 && (mean - 2.0).abs() <= 0.03,
        format!("{violations} conditional draws at or before now in {TRIALS}, unconditional mean {mean:.4} (2.0 ± 0.03)"),
    )
}
