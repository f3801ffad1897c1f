//! Soft-label training.
//!
//! A target fixes expected node counts `q_i(y)` and expected transition
//! counts `c(a, b)`. The objective is
//!
//! ```text
//! J(w) = log Z(w) - Σ_i Σ_y q_i(y) s_i(y) - Σ_ab c(a,b) T(a,b) + l2/2 |w|²
//! ```
//!
//! and its gradient is model expected counts minus target expected counts
//! plus `l2 * w`. One-hot targets recover the ordinary conditional
//! log-likelihood.

use serde::{Deserialize, Serialize};

use super::inference::{sequence_score, PairwiseMarginals};
use super::{CrfModel, TokenSequence, ADAGRAD_EPSILON};
use crate::error::CrfError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaGradConfig {
    pub step_size: f64,
    pub l2: f64,
}

impl Default for AdaGradConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub gradient_norm: f64,
    pub step_norm: f64,
}

/// Expected sufficient statistics of a label distribution over one input.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTarget {
    /// Per-position label distributions.
    pub node: Vec<Vec<f64>>,
    /// `K x K`, entry `[a*K + b]` = expected number of `a -> b` transitions.
    pub transitions: Vec<f64>,
}

impl SoftTarget {
    /// The product distribution of independent per-position rows. Exact for
    /// one-hot rows.
    pub fn product(rows: Vec<Vec<f64>>) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        let mut transitions = vec![0.0; k * k];
        for w in rows.windows(2) {
            for a in 0..k {
                for b in 0..k {
                    transitions[a * k + b] += w[0][a] * w[1].get(b).copied().unwrap_or(0.0);
                }
            }
        }
        Self {
            node: rows,
            transitions,
        }
    }

    /// Expected counts of a chain posterior.
    pub fn from_pairwise(p: &PairwiseMarginals) -> Self {
        Self {
            node: p.marginals.to_rows(),
            transitions: p.transition_counts.clone(),
        }
    }
}

fn validate_target(
    model: &CrfModel,
    x: &TokenSequence,
    target: &SoftTarget,
) -> Result<(), CrfError> {
    let k = model.num_labels();
    if target.node.len() != x.len() {
        return Err(CrfError::InvalidTarget(format!(
            "{} target rows for {} tokens",
            target.node.len(),
            x.len()
        )));
    }
    for (i, row) in target.node.iter().enumerate() {
        if row.len() != k {
            return Err(CrfError::InvalidTarget(format!(
                "row {i} has {} entries",
                row.len()
            )));
        }
        let total: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0 + 1e-9).contains(p)) || (total - 1.0).abs() > 1e-6 {
            return Err(CrfError::InvalidTarget(format!(
                "row {i} is not a distribution"
            )));
        }
    }
    let total: f64 = target.transitions.iter().sum();
    if target.transitions.len() != k * k
        || target.transitions.iter().any(|c| !(*c >= 0.0))
        || (total - x.len().saturating_sub(1) as f64).abs() > 1e-6
    {
        return Err(CrfError::InvalidTarget(
            "transition counts must be K x K, non-negative and sum to n - 1".into(),
        ));
    }
    Ok(())
}

/// Negative expected log-likelihood of `target` plus the L2 penalty.
pub fn target_objective(
    model: &CrfModel,
    x: &TokenSequence,
    target: &SoftTarget,
    l2: f64,
) -> Result<f64, CrfError> {
    validate_target(model, x, target)?;
    let p = model.compute_potentials(x);
    let log_z = super::forward_backward(&p).log_partition();
    let k = model.num_labels();
    let mut expected = 0.0;
    for (i, row) in target.node.iter().enumerate() {
        for (y, &q) in row.iter().enumerate() {
            expected += q * p.node(i, y);
        }
    }
    for a in 0..k {
        for b in 0..k {
            expected += target.transitions[a * k + b] * p.edge_at(a, b);
        }
    }
    let penalty = 0.5 * l2 * model.weights().iter().map(|w| w * w).sum::<f64>();
    Ok(log_z - expected + penalty)
}

/// Dense gradient of [`target_objective`].
pub fn target_gradient(
    model: &CrfModel,
    x: &TokenSequence,
    target: &SoftTarget,
    l2: f64,
) -> Result<Vec<f64>, CrfError> {
    validate_target(model, x, target)?;
    let k = model.num_labels();
    let p = model.compute_potentials(x);
    let pw = p.pairwise_marginals();
    let features = model.position_features(x);

    let mut grad: Vec<f64> = model.weights().iter().map(|w| l2 * w).collect();
    for (i, row) in target.node.iter().enumerate() {
        for y in 0..k {
            let diff = pw.marginals.get(i, y) - row[y];
            if diff == 0.0 {
                continue;
            }
            grad[model.bias_index(y)] += diff;
            for (a, v) in features[i].iter() {
                grad[model.node_index(a, y)] += v * diff;
            }
        }
    }
    for a in 0..k {
        for b in 0..k {
            grad[model.transition_index(a, b)] +=
                pw.transition_counts[a * k + b] - target.transitions[a * k + b];
        }
    }
    Ok(grad)
}

/// [`target_objective`] for the product distribution of `target` rows.
pub fn soft_label_objective(
    model: &CrfModel,
    x: &TokenSequence,
    target: &[Vec<f64>],
    l2: f64,
) -> Result<f64, CrfError> {
    target_objective(model, x, &SoftTarget::product(target.to_vec()), l2)
}

/// [`target_gradient`] for the product distribution of `target` rows.
pub fn soft_label_gradient(
    model: &CrfModel,
    x: &TokenSequence,
    target: &[Vec<f64>],
    l2: f64,
) -> Result<Vec<f64>, CrfError> {
    target_gradient(model, x, &SoftTarget::product(target.to_vec()), l2)
}

pub(super) fn adagrad_step(
    model: &mut CrfModel,
    x: &TokenSequence,
    target: &SoftTarget,
    config: &AdaGradConfig,
) -> Result<UpdateStats, CrfError> {
    if !(config.step_size > 0.0) || !(config.l2 >= 0.0) {
        return Err(CrfError::InvalidHyperparameter(format!(
            "step_size {} l2 {}",
            config.step_size, config.l2
        )));
    }
    let grad = target_gradient(model, x, target, config.l2)?;
    let mut grad_sq = 0.0;
    let mut step_sq = 0.0;
    for ((w, acc), g) in model
        .weights
        .iter_mut()
        .zip(model.accumulators.iter_mut())
        .zip(grad)
    {
        if g == 0.0 {
            continue;
        }
        *acc += g * g;
        let step = config.step_size * g / (*acc + ADAGRAD_EPSILON).sqrt();
        *w -= step;
        grad_sq += g * g;
        step_sq += step * step;
    }
    Ok(UpdateStats {
        gradient_norm: grad_sq.sqrt(),
        step_norm: step_sq.sqrt(),
    })
}

/// Log-likelihood of a hard label sequence under the model.
pub(crate) fn log_likelihood(model: &CrfModel, x: &TokenSequence, labels: &[usize]) -> f64 {
    let p = model.compute_potentials(x);
    sequence_score(&p, labels) - super::forward_backward(&p).log_partition()
}

impl CrfModel {
    pub fn log_likelihood(&self, x: &TokenSequence, labels: &[usize]) -> f64 {
        log_likelihood(self, x, labels)
    }
}
