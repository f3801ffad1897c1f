use crate::environment::ResponseModel;
use crate::error::CrfError;

/// Log-space factors of a homogeneous chain: `n x K` node scores and one
/// shared `K x K` transition table.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPotentials {
    n: usize,
    k: usize,
    node: Vec<f64>,
    edge: Vec<f64>,
}

impl ChainPotentials {
    pub fn new(n: usize, k: usize, node: Vec<f64>, edge: Vec<f64>) -> Result<Self, CrfError> {
        if n == 0 {
            return Err(CrfError::EmptySequence);
        }
        if k < 2 {
            return Err(CrfError::TooFewLabels(k));
        }
        if node.len() != n * k || edge.len() != k * k {
            return Err(CrfError::PotentialShape {
                n,
                k,
                node: node.len(),
                edge: edge.len(),
            });
        }
        if node.iter().chain(edge.iter()).any(|v| !v.is_finite()) {
            return Err(CrfError::NonFinite);
        }
        Ok(Self { n, k, node, edge })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self::new(n, k, vec![0.0; n * k], vec![0.0; k * k]).expect("valid shape")
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    pub fn node(&self, i: usize, y: usize) -> f64 {
        self.node[i * self.k + y]
    }

    pub fn node_row(&self, i: usize) -> &[f64] {
        &self.node[i * self.k..(i + 1) * self.k]
    }

    pub fn node_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.node.chunks(self.k)
    }

    pub fn edge(&self) -> &[f64] {
        &self.edge
    }

    pub fn edge_at(&self, from: usize, to: usize) -> f64 {
        self.edge[from * self.k + to]
    }

    pub fn add_node(&mut self, i: usize, y: usize, value: f64) {
        self.node[i * self.k + y] += value;
    }
}

/// Per-position posterior marginals and the log partition function.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    n: usize,
    k: usize,
    node: Vec<f64>,
    log_partition: f64,
}

impl Marginals {
    pub fn from_rows(rows: &[Vec<f64>], log_partition: f64) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        Self {
            n: rows.len(),
            k,
            node: rows.iter().flatten().copied().collect(),
            log_partition,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, y: usize) -> f64 {
        self.node[i * self.k + y]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.node[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.node.chunks(self.k)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    /// Row-wise argmax, lowest index on ties.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }
}

/// Node marginals plus transition expectations summed over positions.
#[derive(Debug, Clone)]
pub struct PairwiseMarginals {
    pub marginals: Marginals,
    /// `K x K`, entry `[a*K + b]` = Σ_i P(y_i = a, y_{i+1} = b).
    pub transition_counts: Vec<f64>,
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Unnormalized log score of a full label sequence.
pub fn sequence_score(p: &ChainPotentials, labels: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        s += p.node(i, y);
        if i > 0 {
            s += p.edge_at(labels[i - 1], y);
        }
    }
    s
}

struct Lattice {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_z: f64,
}

fn lattice(p: &ChainPotentials) -> Lattice {
    let (n, k) = (p.n, p.k);
    let mut alpha = vec![0.0; n * k];
    let mut beta = vec![0.0; n * k];
    let mut scratch = vec![0.0; k];

    alpha[..k].copy_from_slice(p.node_row(0));
    for i in 1..n {
        for y in 0..k {
            for (prev, s) in scratch.iter_mut().enumerate() {
                *s = alpha[(i - 1) * k + prev] + p.edge_at(prev, y);
            }
            alpha[i * k + y] = log_sum_exp(&scratch) + p.node(i, y);
        }
    }
    for i in (0..n - 1).rev() {
        for y in 0..k {
            for (next, s) in scratch.iter_mut().enumerate() {
                *s = p.edge_at(y, next) + p.node(i + 1, next) + beta[(i + 1) * k + next];
            }
            beta[i * k + y] = log_sum_exp(&scratch);
        }
    }
    let log_z = log_sum_exp(&alpha[(n - 1) * k..]);
    Lattice { alpha, beta, log_z }
}

fn node_marginals(p: &ChainPotentials, lat: &Lattice) -> Marginals {
    let (n, k) = (p.n, p.k);
    let mut node = vec![0.0; n * k];
    for i in 0..n {
        let row = &mut node[i * k..(i + 1) * k];
        for (y, slot) in row.iter_mut().enumerate() {
            *slot = (lat.alpha[i * k + y] + lat.beta[i * k + y] - lat.log_z).exp();
        }
        // Renormalize away rounding so rows sum to one.
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Marginals {
        n,
        k,
        node,
        log_partition: lat.log_z,
    }
}

/// Exact node marginals by log-space forward-backward.
pub fn forward_backward(p: &ChainPotentials) -> Marginals {
    node_marginals(p, &lattice(p))
}

impl ChainPotentials {
    /// Forward-backward that also returns expected transition counts.
    pub fn pairwise_marginals(&self) -> PairwiseMarginals {
        let (n, k) = (self.n, self.k);
        let lat = lattice(self);
        let mut counts = vec![0.0; k * k];
        for i in 0..n.saturating_sub(1) {
            for a in 0..k {
                for b in 0..k {
                    counts[a * k + b] += (lat.alpha[i * k + a]
                        + self.edge_at(a, b)
                        + self.node(i + 1, b)
                        + lat.beta[(i + 1) * k + b]
                        - lat.log_z)
                        .exp();
                }
            }
        }
        PairwiseMarginals {
            marginals: node_marginals(self, &lat),
            transition_counts: counts,
        }
    }
}

/// Highest-scoring label sequence; ties go to the lowest label index at
/// every backtrack step.
pub fn viterbi_map(p: &ChainPotentials) -> Vec<usize> {
    let (n, k) = (p.n, p.k);
    let mut score = p.node_row(0).to_vec();
    let mut back = vec![0usize; n * k];
    let mut next = vec![0.0; k];
    for i in 1..n {
        for y in 0..k {
            let mut best = 0;
            let mut best_score = score[0] + p.edge_at(0, y);
            for prev in 1..k {
                let s = score[prev] + p.edge_at(prev, y);
                if s > best_score {
                    best = prev;
                    best_score = s;
                }
            }
            back[i * k + y] = best;
            next[y] = best_score + p.node(i, y);
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut labels = vec![0; n];
    labels[n - 1] = argmax(&score);
    for i in (1..n).rev() {
        labels[i - 1] = back[i * k + labels[i]];
    }
    labels
}

/// Adds `log p_resp(r | y)` to the node scores of every answered position.
/// Callers must drop unanswered queries beforehand.
pub fn condition_on_responses(
    potentials: &ChainPotentials,
    responses: &[(usize, usize)],
    response_model: &ResponseModel,
) -> ChainPotentials {
    let mut out = potentials.clone();
    let k = potentials.k;
    for &(position, label) in responses {
        assert!(
            position < potentials.n,
            "response position {position} out of range"
        );
        assert!(label < k, "response label {label} out of range");
        for y in 0..k {
            out.add_node(position, y, response_model.log_prob(label, y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pot(n: usize, k: usize, node: Vec<f64>) -> ChainPotentials {
        ChainPotentials::new(n, k, node, vec![0.0; k * k]).unwrap()
    }

    #[test]
    fn single_node_normalization() {
        let m = forward_backward(&pot(1, 2, vec![2f64.ln(), 0.0]));
        assert!((m.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.get(0, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.log_partition() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_potentials_are_uniform() {
        for (n, k) in [(1, 2), (4, 3), (7, 5)] {
            let m = forward_backward(&ChainPotentials::zeros(n, k));
            assert!(m
                .rows()
                .flatten()
                .all(|&v| (v - 1.0 / k as f64).abs() < 1e-12));
            assert!((m.log_partition() - n as f64 * (k as f64).ln()).abs() < 1e-9);
            assert_eq!(viterbi_map(&ChainPotentials::zeros(n, k)), vec![0; n]);
        }
    }

    #[test]
    fn single_node_argmax() {
        assert_eq!(viterbi_map(&pot(1, 2, vec![0.0, 5.0])), vec![1]);
    }

    #[test]
    fn large_potentials_do_not_overflow() {
        let n = 50;
        let node: Vec<f64> = (0..n * 3)
            .map(|i| if i % 2 == 0 { 30.0 } else { -30.0 })
            .collect();
        let p = ChainPotentials::new(n, 3, node, vec![30.0; 9]).unwrap();
        let m = forward_backward(&p);
        assert!(m.log_partition().is_finite());
        assert!(m.rows().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ChainPotentials::new(1, 2, vec![f64::NAN, 0.0], vec![0.0; 4]).is_err());
        assert!(ChainPotentials::new(1, 2, vec![0.0], vec![0.0; 4]).is_err());
    }

    #[test]
    fn pairwise_counts_sum_to_chain_length() {
        let p = ChainPotentials::new(
            4,
            2,
            vec![0.3, -0.2, 1.0, 0.0, 0.5, 0.5, -1.0, 2.0],
            vec![0.1, -0.4, 0.7, 0.0],
        )
        .unwrap();
        let pw = p.pairwise_marginals();
        assert!((pw.transition_counts.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_response_list_is_identity() {
        let p = pot(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let rm = ResponseModel::new(0.7, 2).unwrap();
        assert_eq!(condition_on_responses(&p, &[], &rm), p);
    }
}
