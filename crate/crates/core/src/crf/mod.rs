//! Linear-chain conditional random field.
//!
//! Weight layout is `[transitions K*K | label bias K | attribute blocks]`
//! where attribute `a` owns the `K` weights starting at `K*K + K + a*K`.
//! Appending an attribute to the registry therefore only extends the vector.

mod checkpoint;
mod features;
mod inference;
mod learn;

pub use checkpoint::CHECKPOINT_FORMAT;
pub use features::{
    extract_features, feature_names, lookup_features, word_shape, FeatureRegistry, FeatureVector,
    LabelSet, TokenSequence,
};
pub use inference::{
    condition_on_responses, forward_backward, log_sum_exp, sequence_score, viterbi_map,
    ChainPotentials, Marginals, PairwiseMarginals,
};
pub use learn::{
    soft_label_gradient, soft_label_objective, target_gradient, target_objective, AdaGradConfig,
    SoftTarget, UpdateStats,
};

use crate::error::CrfError;

pub(crate) const ADAGRAD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    label_set: LabelSet,
    registry: FeatureRegistry,
    weights: Vec<f64>,
    accumulators: Vec<f64>,
}

impl CrfModel {
    pub fn new(label_set: LabelSet) -> Self {
        let k = label_set.len();
        let len = k * k + k;
        Self {
            label_set,
            registry: FeatureRegistry::new(),
            weights: vec![0.0; len],
            accumulators: vec![0.0; len],
        }
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    pub fn transition_index(&self, from: usize, to: usize) -> usize {
        from * self.num_labels() + to
    }

    pub fn bias_index(&self, label: usize) -> usize {
        let k = self.num_labels();
        k * k + label
    }

    pub fn node_index(&self, attribute: usize, label: usize) -> usize {
        let k = self.num_labels();
        k * k + k + attribute * k + label
    }

    /// Registers every attribute of `x` and grows the parameter vectors.
    pub fn register(&mut self, x: &TokenSequence) {
        for i in 0..x.len() {
            extract_features(x, i, &mut self.registry, true);
        }
        self.sync_len();
    }

    /// Sets the weight of the conjunction `attribute ∧ label`, registering
    /// the attribute if needed.
    pub fn set_node_weight(&mut self, attribute: &str, label: usize, value: f64) {
        let a = self.registry.get_or_insert(attribute);
        self.sync_len();
        let idx = self.node_index(a, label);
        self.weights[idx] = value;
    }

    fn sync_len(&mut self) {
        let k = self.num_labels();
        let len = k * k + k + self.registry.len() * k;
        self.weights.resize(len, 0.0);
        self.accumulators.resize(len, 0.0);
    }

    pub(crate) fn from_parts(
        label_set: LabelSet,
        registry: FeatureRegistry,
        weights: Vec<f64>,
        accumulators: Vec<f64>,
    ) -> Result<Self, CrfError> {
        let k = label_set.len();
        let len = k * k + k + registry.len() * k;
        if weights.len() != len || accumulators.len() != len {
            return Err(CrfError::Checkpoint(format!(
                "expected {len} weights and accumulators, found {} and {}",
                weights.len(),
                accumulators.len()
            )));
        }
        if accumulators.iter().any(|a| !(*a >= 0.0)) {
            return Err(CrfError::Checkpoint("negative accumulator".into()));
        }
        Ok(Self {
            label_set,
            registry,
            weights,
            accumulators,
        })
    }

    /// Per-position attribute vectors using only already-known attributes.
    pub fn position_features(&self, x: &TokenSequence) -> Vec<FeatureVector> {
        (0..x.len())
            .map(|i| lookup_features(x, i, &self.registry))
            .collect()
    }

    /// Node and edge log-potentials for `x`. Unknown attributes contribute
    /// nothing.
    pub fn compute_potentials(&self, x: &TokenSequence) -> ChainPotentials {
        let k = self.num_labels();
        let n = x.len();
        let mut node = vec![0.0; n * k];
        for (i, fv) in self.position_features(x).iter().enumerate() {
            let row = &mut node[i * k..(i + 1) * k];
            for (y, slot) in row.iter_mut().enumerate() {
                *slot = self.weights[self.bias_index(y)];
            }
            for (a, v) in fv.iter() {
                let base = self.node_index(a, 0);
                for (y, slot) in row.iter_mut().enumerate() {
                    *slot += v * self.weights[base + y];
                }
            }
        }
        let edge = self.weights[..k * k].to_vec();
        ChainPotentials::new(n, k, node, edge).expect("shape is consistent by construction")
    }

    pub fn marginals(&self, x: &TokenSequence) -> Marginals {
        forward_backward(&self.compute_potentials(x))
    }

    pub fn predict(&self, x: &TokenSequence) -> Vec<usize> {
        viterbi_map(&self.compute_potentials(x))
    }

    /// One AdaGrad step towards the product distribution of `target` rows.
    /// Registers any new attributes of `x` first.
    pub fn adagrad_update(
        &mut self,
        x: &TokenSequence,
        target: &[Vec<f64>],
        config: &AdaGradConfig,
    ) -> Result<UpdateStats, CrfError> {
        self.adagrad_update_target(x, &SoftTarget::product(target.to_vec()), config)
    }

    /// One AdaGrad step on the expected counts of `target`.
    pub fn adagrad_update_target(
        &mut self,
        x: &TokenSequence,
        target: &SoftTarget,
        config: &AdaGradConfig,
    ) -> Result<UpdateStats, CrfError> {
        self.register(x);
        learn::adagrad_step(self, x, target, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model3() -> CrfModel {
        CrfModel::new(LabelSet::new(["PER", "LOC", "NONE"]).unwrap())
    }

    #[test]
    fn zero_weights_give_zero_potentials() {
        let mut m = model3();
        let x = TokenSequence::new(["on", "George", "str."]).unwrap();
        m.register(&x);
        let p = m.compute_potentials(&x);
        assert!(p.node_rows().all(|r| r.iter().all(|&v| v == 0.0)));
        assert!(p.edge().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_active_weight() {
        let mut m = model3();
        let x = TokenSequence::new(["on", "George", "str."]).unwrap();
        m.register(&x);
        m.set_node_weight("word=George", 1, 2.0);
        let p = m.compute_potentials(&x);
        for i in 0..3 {
            for y in 0..3 {
                let expected = if (i, y) == (1, 1) { 2.0 } else { 0.0 };
                assert_eq!(p.node(i, y), expected);
            }
        }
    }

    #[test]
    fn unknown_attributes_are_ignored() {
        let m = model3();
        let x = TokenSequence::new(["never", "seen"]).unwrap();
        let p = m.compute_potentials(&x);
        assert_eq!(p.len(), 2);
        assert!(m.registry().is_empty());
    }
}
