//! Planted-chain synthetic sequence task.
//!
//! Labels follow a sticky Markov chain. Each label owns a Zipf-distributed
//! vocabulary of made-up words; with probability `noise` a token is drawn
//! instead from a shared vocabulary that carries no label information.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Zipf;

use super::dataset::{Dataset, Example};
use crate::crf::{LabelSet, TokenSequence};
use crate::error::HarnessError;

pub const SYNTHETIC_LABELS: [&str; 4] = ["NONE", "PER", "LOC", "ORG"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_examples: usize,
    pub length: usize,
    pub vocab_per_label: usize,
    pub shared_vocab: usize,
    pub noise: f64,
    /// Probability that an entity label repeats on the next token.
    pub stickiness: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_examples: 500,
            length: 8,
            vocab_per_label: 40,
            shared_vocab: 20,
            noise: 0.15,
            stickiness: 0.5,
            seed: 0,
        }
    }
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn make_vocab<R: Rng + ?Sized>(size: usize, taken: &mut Vec<String>, rng: &mut R) -> Vec<String> {
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syllables = rng.random_range(2..=3);
        let word: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS[rng.random_range(0..ONSETS.len())],
                    VOWELS[rng.random_range(0..VOWELS.len())]
                )
            })
            .collect();
        if !taken.contains(&word) {
            taken.push(word.clone());
            out.push(word);
        }
    }
    out
}

fn transition_rows(k: usize, stickiness: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|from| {
            (0..k)
                .map(|to| match (from, to) {
                    (0, 0) => 0.7,
                    (0, _) => 0.3 / (k - 1) as f64,
                    (_, 0) => (1.0 - stickiness) * 0.8,
                    _ if from == to => stickiness,
                    _ => (1.0 - stickiness) * 0.2 / (k - 2).max(1) as f64,
                })
                .collect()
        })
        .collect()
}

/// Generates the task. The same config always yields the same dataset.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset, HarnessError> {
    if cfg.length == 0 || cfg.vocab_per_label == 0 || cfg.shared_vocab == 0 {
        return Err(HarnessError::Config(
            "synthetic sizes must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.noise) || !(0.0..1.0).contains(&cfg.stickiness) {
        return Err(HarnessError::Config(
            "synthetic noise/stickiness out of range".into(),
        ));
    }
    let k = SYNTHETIC_LABELS.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = Vec::new();
    let vocab: Vec<Vec<String>> = (0..k)
        .map(|_| make_vocab(cfg.vocab_per_label, &mut taken, &mut rng))
        .collect();
    let shared = make_vocab(cfg.shared_vocab, &mut taken, &mut rng);

    let initial = WeightedIndex::new([0.55, 0.15, 0.15, 0.15]).expect("valid weights");
    let rows: Vec<WeightedIndex<f64>> = transition_rows(k, cfg.stickiness)
        .into_iter()
        .map(|r| WeightedIndex::new(r).expect("valid weights"))
        .collect();
    let zipf = Zipf::new(cfg.vocab_per_label as f64, 1.0).expect("valid zipf");

    let mut examples = Vec::with_capacity(cfg.num_examples);
    for id in 0..cfg.num_examples {
        let mut gold = Vec::with_capacity(cfg.length);
        let mut tokens = Vec::with_capacity(cfg.length);
        let mut y = initial.sample(&mut rng);
        for t in 0..cfg.length {
            if t > 0 {
                y = rows[y].sample(&mut rng);
            }
            gold.push(y);
            let word = if rng.random_bool(cfg.noise) {
                shared[rng.random_range(0..shared.len())].clone()
            } else {
                let rank = zipf.sample(&mut rng) as usize;
                vocab[y][rank.clamp(1, cfg.vocab_per_label) - 1].clone()
            };
            tokens.push(word);
        }
        examples.push(Example {
            id,
            input: TokenSequence::new(tokens)?,
            gold,
        });
    }
    Dataset::new(examples, LabelSet::new(SYNTHETIC_LABELS)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig {
            num_examples: 30,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.len(), 30);
        assert!(a.examples.iter().all(|e| e.input.len() == 8));
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        let b = generate_synthetic(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn transition_rows_are_distributions() {
        for row in transition_rows(4, 0.5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn every_label_appears() {
        let d = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let mut counts = [0usize; 4];
        for e in &d.examples {
            for &y in &e.gold {
                counts[y] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c > 200), "{counts:?}");
    }
}
