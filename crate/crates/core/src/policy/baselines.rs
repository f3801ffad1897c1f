use serde::{Deserialize, Serialize};

use crate::game::{Action, GameContext, GameState};

/// Heuristic that front-loads enough queries per position to push the
/// residual uncertainty below `1 - confidence_target`, assuming each query
/// scales the uncertainty by `uncertainty_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub confidence_target: f64,
    pub uncertainty_factor: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            confidence_target: 0.98,
            uncertainty_factor: 0.3,
        }
    }
}

const MAX_THRESHOLD_QUERIES: usize = 64;

/// Smallest `m` with `(1 - p) * factor^m <= 1 - target`.
pub fn required_queries(max_marginal: f64, config: &ThresholdConfig) -> usize {
    let allowed = 1.0 - config.confidence_target;
    let mut residual = 1.0 - max_marginal;
    let mut m = 0;
    while residual > allowed && m < MAX_THRESHOLD_QUERIES {
        residual *= config.uncertainty_factor;
        m += 1;
    }
    m
}

/// All queries are issued before the first wait; afterwards the policy only
/// waits for stragglers and returns.
pub fn threshold_decide(state: &GameState, ctx: &GameContext, config: &ThresholdConfig) -> Action {
    if !state.has_waited() {
        let posterior = ctx.posterior(&state.received());
        for (i, row) in posterior.marginals.rows().enumerate() {
            let p = row.iter().copied().fold(0.0, f64::max);
            if state.queries_on(i) < required_queries(p, config) {
                return Action::Query(i);
            }
        }
    }
    if state.in_flight_count() > 0 {
        Action::Wait
    } else {
        Action::Return
    }
}

/// `n_votes` queries per position up front, then wait for all of them.
pub fn nvote_decide(state: &GameState, n_votes: usize) -> Action {
    if !state.has_waited() {
        if let Some(i) = (0..state.len()).find(|&i| state.queries_on(i) < n_votes) {
            return Action::Query(i);
        }
    }
    if state.in_flight_count() > 0 {
        Action::Wait
    } else {
        Action::Return
    }
}

/// Per-position plurality vote, lowest label index on ties. Positions
/// without votes take the corresponding `fallback` label.
pub fn nvote_aggregate(votes: &[Vec<usize>], num_labels: usize, fallback: &[usize]) -> Vec<usize> {
    votes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.is_empty() {
                return fallback[i];
            }
            let mut counts = vec![0usize; num_labels];
            v.iter().for_each(|&l| counts[l] += 1);
            let mut best = 0;
            for (label, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = label;
                }
            }
            best
        })
        .collect()
}

/// Never asks; the harness trains on gold labels instead.
pub fn online_decide(_state: &GameState) -> Action {
    Action::Return
}
