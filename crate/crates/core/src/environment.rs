//! Crowd model: response noise, response latency, the posterior-predictive
//! response distribution and the frozen-pool replay source.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::crf::{condition_on_responses, forward_backward, CrfModel, TokenSequence};
use crate::error::EnvError;

/// Workers answer correctly with probability `accuracy`; the remaining mass
/// is spread evenly over the other `K - 1` labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    accuracy: f64,
    label_count: usize,
}

impl ResponseModel {
    pub const DEFAULT_ACCURACY: f64 = 0.7;

    pub fn new(accuracy: f64, label_count: usize) -> Result<Self, EnvError> {
        if !(accuracy > 0.0 && accuracy <= 1.0) {
            return Err(EnvError::InvalidResponseModel(format!(
                "accuracy {accuracy} not in (0, 1]"
            )));
        }
        if label_count < 2 {
            return Err(EnvError::InvalidResponseModel(format!(
                "K = {label_count} < 2"
            )));
        }
        Ok(Self {
            accuracy,
            label_count,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    /// `p_resp(r | y)`.
    pub fn prob(&self, response: usize, truth: usize) -> f64 {
        if response == truth {
            self.accuracy
        } else {
            (1.0 - self.accuracy) / (self.label_count - 1) as f64
        }
    }

    /// Log of [`Self::prob`], floored at the smallest positive double so a
    /// perfectly accurate crowd still yields finite potentials.
    pub fn log_prob(&self, response: usize, truth: usize) -> f64 {
        self.prob(response, truth).max(f64::MIN_POSITIVE).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, truth: usize, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.accuracy {
            return truth;
        }
        let wrong = rng.random_range(0..self.label_count - 1);
        if wrong >= truth {
            wrong + 1
        } else {
            wrong
        }
    }
}

/// Gaussian response delay truncated below at `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    mean: f64,
    std_dev: f64,
    floor: f64,
}

const MAX_REJECTIONS: usize = 1000;

impl LatencyModel {
    pub const DEFAULT_MEAN: f64 = 1.2;
    pub const DEFAULT_STD_DEV: f64 = 0.4;
    pub const DEFAULT_FLOOR: f64 = 0.05;

    pub fn new(mean: f64, std_dev: f64, floor: f64) -> Result<Self, EnvError> {
        if !(mean > 0.0 && std_dev > 0.0 && floor > 0.0)
            || !mean.is_finite()
            || !std_dev.is_finite()
        {
            return Err(EnvError::InvalidLatencyModel(format!(
                "mean {mean}, std_dev {std_dev}, floor {floor} must all be positive"
            )));
        }
        Ok(Self {
            mean,
            std_dev,
            floor,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std_dev(&self) -> f64 {
        self.std_dev
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// One delay in seconds, never below `floor`: rejection sampling with a
    /// cap of 1000 draws, then clamping.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(self.mean, self.std_dev).expect("validated parameters");
        for _ in 0..MAX_REJECTIONS {
            let d = normal.sample(rng);
            if d >= self.floor {
                return d;
            }
        }
        self.floor
    }

    /// Absolute arrival time `s + d` for a query issued at `issue`, drawn
    /// conditioned on arriving strictly after `now`.
    pub fn sample_conditional<R: Rng + ?Sized>(&self, issue: f64, now: f64, rng: &mut R) -> f64 {
        debug_assert!(now >= issue);
        let lower = self.floor.max(now - issue);
        let delay = truncated_normal_above(self.mean, self.std_dev, lower, rng);
        let arrival = issue + delay;
        if arrival > now {
            arrival
        } else {
            now.next_up()
        }
    }
}

/// Draw from `N(mean, sd²)` restricted to `[lower, ∞)`. Plain rejection when
/// the bound is in the body; Robert's exponential proposal in the tail.
fn truncated_normal_above<R: Rng + ?Sized>(mean: f64, sd: f64, lower: f64, rng: &mut R) -> f64 {
    let z_lower = (lower - mean) / sd;
    if z_lower < 1.0 {
        for _ in 0..MAX_REJECTIONS {
            let z: f64 = StandardNormal.sample(rng);
            if z >= z_lower {
                return mean + sd * z;
            }
        }
    }
    let alpha = 0.5 * (z_lower + (z_lower * z_lower + 4.0).sqrt());
    loop {
        let u: f64 = rng.random();
        let z = z_lower - (1.0 - u).ln() / alpha;
        let accept = (-(z - alpha).powi(2) / 2.0).exp();
        if rng.random::<f64>() <= accept {
            return (mean + sd * z).max(lower);
        }
    }
}

/// `p(r' | x, received, q)` given the posterior node marginal at `q`.
pub fn predictive_from_marginal(marginal: &[f64], response_model: &ResponseModel) -> Vec<f64> {
    let k = marginal.len();
    (0..k)
        .map(|r| {
            marginal
                .iter()
                .enumerate()
                .map(|(y, p)| p * response_model.prob(r, y))
                .sum()
        })
        .collect()
}

/// Distribution of the next response to a query on `position`, with the
/// true label marginalized out under the response-conditioned posterior.
pub fn posterior_predictive_response(
    model: &CrfModel,
    x: &TokenSequence,
    received: &[(usize, usize)],
    position: usize,
    response_model: &ResponseModel,
) -> Vec<f64> {
    let conditioned =
        condition_on_responses(&model.compute_potentials(x), received, response_model);
    let marginals = forward_backward(&conditioned);
    predictive_from_marginal(marginals.row(position), response_model)
}

/// One pre-collected worker answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub label: usize,
    pub delay: f64,
    pub worker_id: String,
}

/// A worker answer handed to the live episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrowdDraw {
    pub label: usize,
    pub delay: f64,
    /// The frozen pool was exhausted and the answer was sampled generatively.
    pub fallback: bool,
}

/// Pre-collected answers replayed without replacement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrozenPool {
    records: BTreeMap<(usize, usize), Vec<PoolRecord>>,
    consumed: BTreeMap<(usize, usize), Vec<bool>>,
    fallback: bool,
}

impl FrozenPool {
    pub fn new(fallback: bool) -> Self {
        Self {
            fallback,
            ..Self::default()
        }
    }

    pub fn fallback(&self) -> bool {
        self.fallback
    }

    pub fn set_fallback(&mut self, fallback: bool) {
        self.fallback = fallback;
    }

    pub fn insert(
        &mut self,
        example: usize,
        position: usize,
        record: PoolRecord,
    ) -> Result<(), EnvError> {
        if !(record.delay > 0.0) {
            return Err(EnvError::InvalidLatencyModel(format!(
                "pool delay {} must be positive",
                record.delay
            )));
        }
        self.records
            .entry((example, position))
            .or_default()
            .push(record);
        self.consumed
            .entry((example, position))
            .or_default()
            .push(false);
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.records.keys().copied()
    }

    pub fn records(&self, example: usize, position: usize) -> &[PoolRecord] {
        self.records
            .get(&(example, position))
            .map_or(&[], Vec::as_slice)
    }

    pub fn remaining(&self, example: usize, position: usize) -> usize {
        self.consumed
            .get(&(example, position))
            .map_or(0, |c| c.iter().filter(|used| !**used).count())
    }

    /// Marks every record unconsumed again.
    pub fn reset(&mut self) {
        self.consumed
            .values_mut()
            .flatten()
            .for_each(|c| *c = false);
    }

    /// Removes and returns a uniformly chosen unconsumed record.
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        example: usize,
        position: usize,
        rng: &mut R,
    ) -> Result<&PoolRecord, EnvError> {
        let exhausted = EnvError::PoolExhausted { example, position };
        let consumed = self
            .consumed
            .get_mut(&(example, position))
            .ok_or(exhausted.clone())?;
        let open: Vec<usize> = (0..consumed.len()).filter(|&i| !consumed[i]).collect();
        let &pick = open.choose(rng).ok_or(exhausted)?;
        consumed[pick] = true;
        Ok(&self.records[&(example, position)][pick])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CrowdMode {
    Generative,
    Frozen(FrozenPool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentModel {
    pub response: ResponseModel,
    pub latency: LatencyModel,
    pub mode: CrowdMode,
}

impl EnvironmentModel {
    pub fn generative(response: ResponseModel, latency: LatencyModel) -> Self {
        Self {
            response,
            latency,
            mode: CrowdMode::Generative,
        }
    }

    /// Answer from the real crowd for a query on `(example, position)` whose
    /// true label is `truth`.
    pub fn frozen_draw<R: Rng + ?Sized>(
        &mut self,
        example: usize,
        position: usize,
        truth: usize,
        rng: &mut R,
    ) -> Result<CrowdDraw, EnvError> {
        match &mut self.mode {
            CrowdMode::Generative => Ok(CrowdDraw {
                label: self.response.sample(truth, rng),
                delay: self.latency.sample(rng),
                fallback: false,
            }),
            CrowdMode::Frozen(pool) => {
                let fallback = pool.fallback();
                match pool.draw(example, position, rng) {
                    Ok(rec) => Ok(CrowdDraw {
                        label: rec.label,
                        delay: rec.delay,
                        fallback: false,
                    }),
                    Err(e) if !fallback => Err(e),
                    Err(_) => Ok(CrowdDraw {
                        label: self.response.sample(truth, rng),
                        delay: self.latency.sample(rng),
                        fallback: true,
                    }),
                }
            }
        }
    }
}
