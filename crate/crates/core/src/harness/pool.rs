//! Frozen-pool files: one JSON record per line,
//! `{example_id, position, label, delay_seconds, worker_id}`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::export::{read_jsonl, write_jsonl};
use crate::environment::{FrozenPool, LatencyModel, PoolRecord, ResponseModel};
use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolLine {
    pub example_id: usize,
    pub position: usize,
    pub label: String,
    pub delay_seconds: f64,
    #[serde(default)]
    pub worker_id: String,
}

/// Checks every line against `dataset` and builds the pool.
pub fn build_frozen_pool(
    lines: &[PoolLine],
    dataset: &Dataset,
    fallback: bool,
) -> Result<FrozenPool, HarnessError> {
    let mut pool = FrozenPool::new(fallback);
    for (i, line) in lines.iter().enumerate() {
        let mismatch = |msg: String| HarnessError::PoolMismatch(format!("record {}: {msg}", i + 1));
        let example = dataset
            .examples
            .iter()
            .find(|e| e.id == line.example_id)
            .ok_or_else(|| mismatch(format!("unknown example id {}", line.example_id)))?;
        if line.position >= example.input.len() {
            return Err(mismatch(format!(
                "position {} outside example {} of length {}",
                line.position,
                line.example_id,
                example.input.len()
            )));
        }
        let label = dataset.label_set.index_of(&line.label).ok_or_else(|| {
            mismatch(format!(
                "label {:?} not in the dataset's label set",
                line.label
            ))
        })?;
        pool.insert(
            line.example_id,
            line.position,
            PoolRecord {
                label,
                delay: line.delay_seconds,
                worker_id: line.worker_id.clone(),
            },
        )
        .map_err(|e| mismatch(e.to_string()))?;
    }
    Ok(pool)
}

pub fn load_frozen_pool(
    path: impl AsRef<Path>,
    dataset: &Dataset,
    fallback: bool,
) -> Result<FrozenPool, HarnessError> {
    let lines: Vec<PoolLine> = read_jsonl(path)?;
    build_frozen_pool(&lines, dataset, fallback)
}

/// Simulated pre-collection: `depth` answers for every token of every
/// example.
pub fn generate_pool_lines(
    dataset: &Dataset,
    depth: usize,
    response: &ResponseModel,
    latency: &LatencyModel,
    seed: u64,
) -> Vec<PoolLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    for ex in &dataset.examples {
        for (position, &truth) in ex.gold.iter().enumerate() {
            for w in 0..depth {
                lines.push(PoolLine {
                    example_id: ex.id,
                    position,
                    label: dataset
                        .label_set
                        .name(response.sample(truth, &mut rng))
                        .to_owned(),
                    delay_seconds: latency.sample(&mut rng),
                    worker_id: format!("w{w}"),
                });
            }
        }
    }
    lines
}

pub fn save_pool_lines(lines: &[PoolLine], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, lines).map_err(|e| HarnessError::io(path, e))?;
    fs::write(path, buf).map_err(|e| HarnessError::io(path, e))
}
