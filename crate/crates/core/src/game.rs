//! The query/wait/return game between the system and the crowd.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{
    condition_on_responses, forward_backward, viterbi_map, ChainPotentials, CrfModel, Marginals,
    SoftTarget, TokenSequence,
};
use crate::environment::{predictive_from_marginal, EnvironmentModel, LatencyModel, ResponseModel};
use crate::error::GameError;

/// System action. The derived order is the tie-break order used by the
/// planner: `Query(0) < … < Query(n-1) < Wait < Return`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "position", rename_all = "lowercase")]
pub enum Action {
    Query(usize),
    Wait,
    Return,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Query(i) => write!(f, "query({i})"),
            Action::Wait => f.write_str("wait"),
            Action::Return => f.write_str("return"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    System,
    Crowd,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub action: Action,
    pub issue_time: f64,
    pub response: Option<usize>,
    pub arrival: Option<f64>,
}

/// Full decision state: clock plus the parallel action/issue/response/arrival
/// lists, stored as one list of entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    n: usize,
    now: f64,
    entries: Vec<Entry>,
    turn: Turn,
}

impl GameState {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            now: 0.0,
            entries: Vec::new(),
            turn: Turn::System,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn turn(&self) -> Turn {
        self.turn
    }

    pub fn is_terminal(&self) -> bool {
        self.turn == Turn::Terminal
    }

    /// Indices of query entries still awaiting a response.
    pub fn in_flight(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.action, Action::Query(_)) && e.response.is_none())
            .map(|(j, _)| j)
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight().count()
    }

    /// Answered queries as `(position, label)`, in entry order.
    pub fn received(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .filter_map(|e| match (e.action, e.response) {
                (Action::Query(i), Some(r)) => Some((i, r)),
                _ => None,
            })
            .collect()
    }

    /// Query actions issued so far, answered or not.
    pub fn num_queries(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.action, Action::Query(_)))
            .count()
    }

    /// Queries (answered or pending) issued for `position`.
    pub fn queries_on(&self, position: usize) -> usize {
        self.entries
            .iter()
            .filter(|e| e.action == Action::Query(position))
            .count()
    }

    pub fn has_waited(&self) -> bool {
        self.entries.iter().any(|e| e.action == Action::Wait)
    }

    pub fn legal_actions(&self) -> Vec<Action> {
        if self.turn != Turn::System {
            return Vec::new();
        }
        let mut actions: Vec<Action> = (0..self.n).map(Action::Query).collect();
        if self.in_flight().next().is_some() {
            actions.push(Action::Wait);
        }
        actions.push(Action::Return);
        actions
    }

    pub fn is_legal(&self, action: Action) -> bool {
        if self.turn != Turn::System {
            return false;
        }
        match action {
            Action::Query(i) => i < self.n,
            Action::Wait => self.in_flight().next().is_some(),
            Action::Return => true,
        }
    }

    pub fn apply_system_action(&self, action: Action) -> Result<GameState, GameError> {
        if !self.is_legal(action) {
            return Err(GameError::IllegalAction(action.to_string()));
        }
        let mut entries = Vec::with_capacity(self.entries.len() + 1);
        entries.extend_from_slice(&self.entries);
        entries.push(Entry {
            action,
            issue_time: self.now,
            response: None,
            arrival: None,
        });
        Ok(GameState {
            n: self.n,
            now: self.now,
            entries,
            turn: match action {
                Action::Query(_) => Turn::System,
                Action::Wait => Turn::Crowd,
                Action::Return => Turn::Terminal,
            },
        })
    }

    /// Moves the clock forward on the system's turn. Only the live path
    /// uses this: wall time passes while the system deliberates.
    pub fn advance_clock(&self, now: f64) -> Result<GameState, GameError> {
        if self.turn != Turn::System {
            return Err(GameError::IllegalAction("advance clock".into()));
        }
        if !(now >= self.now) || !now.is_finite() {
            return Err(GameError::ArrivalBeforeIssue {
                issue: self.now,
                arrival: now,
            });
        }
        let mut next = self.clone();
        next.now = now;
        Ok(next)
    }

    /// Crowd move: entry `j` is answered with `label` at `arrival`, the
    /// clock advances to `arrival` and the turn reverts to the system.
    pub fn apply_response(
        &self,
        j: usize,
        label: usize,
        arrival: f64,
    ) -> Result<GameState, GameError> {
        if self.turn != Turn::Crowd {
            return Err(GameError::NotCrowdTurn);
        }
        let entry = self.entries.get(j).ok_or(GameError::NotInFlight(j))?;
        if !matches!(entry.action, Action::Query(_)) || entry.response.is_some() {
            return Err(GameError::NotInFlight(j));
        }
        if !(arrival > entry.issue_time) || arrival < self.now {
            return Err(GameError::ArrivalBeforeIssue {
                issue: entry.issue_time,
                arrival,
            });
        }
        let mut next = self.clone();
        next.entries[j].response = Some(label);
        next.entries[j].arrival = Some(arrival);
        next.now = arrival;
        next.turn = Turn::System;
        Ok(next)
    }

    /// Copy with every pending query entry removed.
    pub fn without_pending(&self) -> GameState {
        let mut next = self.clone();
        next.entries
            .retain(|e| !(matches!(e.action, Action::Query(_)) && e.response.is_none()));
        next
    }
}

/// Per-query and per-second costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub cost_per_query: f64,
    pub cost_per_second: f64,
}

impl Default for UtilityParams {
    fn default() -> Self {
        Self {
            cost_per_query: 0.01,
            cost_per_second: 0.005,
        }
    }
}

/// Mean marginal probability of the MAP label at each position.
pub fn expected_accuracy(marginals: &Marginals, map_labels: &[usize]) -> f64 {
    let n = marginals.len();
    map_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| marginals.get(i, y))
        .sum::<f64>()
        / n as f64
}

/// Where a crowd move draws its answer from.
#[derive(Debug, Clone, Copy)]
pub enum CrowdSampler<'a> {
    /// Posterior predictive under the model (planning).
    Posterior,
    /// Noisy answer around the known gold labels.
    GroundTruth(&'a [usize]),
}

/// Everything about one input that stays fixed during an episode: the
/// unconditioned chain potentials and the crowd model.
#[derive(Debug, Clone)]
pub struct GameContext {
    base: ChainPotentials,
    response: ResponseModel,
    latency: LatencyModel,
    params: UtilityParams,
}

/// Conditioned posterior summary used for utility and prediction.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub marginals: Marginals,
    pub map_labels: Vec<usize>,
}

impl Posterior {
    pub fn expected_accuracy(&self) -> f64 {
        expected_accuracy(&self.marginals, &self.map_labels)
    }
}

impl GameContext {
    pub fn new(base: ChainPotentials, env: &EnvironmentModel, params: UtilityParams) -> Self {
        Self {
            base,
            response: env.response,
            latency: env.latency,
            params,
        }
    }

    pub fn from_model(
        crf: &CrfModel,
        x: &TokenSequence,
        env: &EnvironmentModel,
        params: UtilityParams,
    ) -> Self {
        Self::new(crf.compute_potentials(x), env, params)
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.base.num_labels()
    }

    pub fn params(&self) -> &UtilityParams {
        &self.params
    }

    pub fn response_model(&self) -> &ResponseModel {
        &self.response
    }

    pub fn base_potentials(&self) -> &ChainPotentials {
        &self.base
    }

    /// Posterior given the received responses; pending queries are ignored.
    pub fn posterior(&self, received: &[(usize, usize)]) -> Posterior {
        let conditioned = condition_on_responses(&self.base, received, &self.response);
        Posterior {
            marginals: forward_backward(&conditioned),
            map_labels: viterbi_map(&conditioned),
        }
    }

    /// Expected counts of the response-conditioned posterior, for training.
    pub fn posterior_target(&self, received: &[(usize, usize)]) -> SoftTarget {
        SoftTarget::from_pairwise(
            &condition_on_responses(&self.base, received, &self.response).pairwise_marginals(),
        )
    }

    pub fn cost(&self, state: &GameState) -> f64 {
        state.num_queries() as f64 * self.params.cost_per_query
            + state.now() * self.params.cost_per_second
    }

    /// `ExpAcc - (n_Q w_M + τ w_T)`, evaluated as if the system returned now.
    pub fn utility(&self, state: &GameState) -> f64 {
        self.posterior(&state.received()).expected_accuracy() - self.cost(state)
    }

    /// Samples arrival times for all in-flight queries, resolves the earliest
    /// and draws its answer. `marginal_row(i)` must be row `i` of the posterior of the
    /// state's received responses when sampling from the posterior.
    pub fn sample_crowd_move_with<R: Rng + ?Sized>(
        &self,
        state: &GameState,
        sampler: CrowdSampler<'_>,
        marginal_row: impl FnOnce(usize) -> Vec<f64>,
        rng: &mut R,
    ) -> Result<GameState, GameError> {
        if state.turn() != Turn::Crowd {
            return Err(GameError::NotCrowdTurn);
        }
        let mut winner: Option<(usize, f64)> = None;
        for j in state.in_flight() {
            let t =
                self.latency
                    .sample_conditional(state.entries()[j].issue_time, state.now(), rng);
            if winner.is_none_or(|(_, best)| t < best) {
                winner = Some((j, t));
            }
        }
        let (j, arrival) = winner.ok_or(GameError::NotCrowdTurn)?;
        let Action::Query(position) = state.entries()[j].action else {
            unreachable!("in-flight entries are queries");
        };
        let label = match sampler {
            CrowdSampler::Posterior => {
                let dist = predictive_from_marginal(&marginal_row(position), &self.response);
                sample_categorical(&dist, rng)
            }
            CrowdSampler::GroundTruth(gold) => self.response.sample(gold[position], rng),
        };
        state.apply_response(j, label, arrival)
    }

    pub fn sample_crowd_move<R: Rng + ?Sized>(
        &self,
        state: &GameState,
        sampler: CrowdSampler<'_>,
        rng: &mut R,
    ) -> Result<GameState, GameError> {
        self.sample_crowd_move_with(
            state,
            sampler,
            |i| self.posterior(&state.received()).marginals.row(i).to_vec(),
            rng,
        )
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * dist.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(n: usize, k: usize, mean: f64, sd: f64) -> GameContext {
        let env = EnvironmentModel::generative(
            ResponseModel::new(0.7, k).unwrap(),
            LatencyModel::new(mean, sd, 0.05).unwrap(),
        );
        GameContext::new(ChainPotentials::zeros(n, k), &env, UtilityParams::default())
    }

    #[test]
    fn fresh_state_has_no_wait() {
        let s = GameState::new(3);
        assert_eq!(
            s.legal_actions(),
            vec![
                Action::Query(0),
                Action::Query(1),
                Action::Query(2),
                Action::Return
            ]
        );
        let s = s.apply_system_action(Action::Query(1)).unwrap();
        assert!(s.legal_actions().contains(&Action::Wait));
    }

    #[test]
    fn answered_queries_do_not_enable_wait() {
        let s = GameState::new(2)
            .apply_system_action(Action::Query(0))
            .unwrap()
            .apply_system_action(Action::Wait)
            .unwrap()
            .apply_response(0, 1, 1.0)
            .unwrap();
        assert!(!s.legal_actions().contains(&Action::Wait));
        assert_eq!(s.received(), vec![(0, 1)]);
    }

    #[test]
    fn query_appends_with_current_clock() {
        let s = GameState::new(3)
            .apply_system_action(Action::Query(0))
            .unwrap()
            .apply_system_action(Action::Wait)
            .unwrap()
            .apply_response(0, 0, 1.5)
            .unwrap();
        let before = s.clone();
        let t = s.apply_system_action(Action::Query(2)).unwrap();
        assert_eq!(s, before);
        let last = t.entries().last().unwrap();
        assert_eq!(last.issue_time, 1.5);
        assert_eq!(last.response, None);
        assert_eq!(t.now(), 1.5);
        assert_eq!(t.entries().len(), s.entries().len() + 1);
    }

    #[test]
    fn wait_without_in_flight_is_illegal() {
        let s = GameState::new(2);
        assert_eq!(
            s.apply_system_action(Action::Wait),
            Err(GameError::IllegalAction("wait".into()))
        );
        assert!(s.apply_system_action(Action::Query(2)).is_err());
    }

    #[test]
    fn return_is_terminal() {
        let s = GameState::new(2)
            .apply_system_action(Action::Return)
            .unwrap();
        assert!(s.is_terminal());
        assert!(s.legal_actions().is_empty());
        assert!(s.apply_system_action(Action::Return).is_err());
    }

    #[test]
    fn expected_accuracy_by_hand() {
        let m = Marginals::from_rows(&[vec![0.9, 0.1], vec![0.6, 0.4]], 0.0);
        assert!((expected_accuracy(&m, &[0, 0]) - 0.75).abs() < 1e-12);
        let m = Marginals::from_rows(&vec![vec![0.25; 4]; 3], 0.0);
        assert!((expected_accuracy(&m, &[0, 0, 0]) - 0.25).abs() < 1e-12);
        let m = Marginals::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], 0.0);
        assert_eq!(expected_accuracy(&m, &[1, 0]), 1.0);
    }

    #[test]
    fn utility_arithmetic() {
        // n = 1, K = 2 chain with p(0) = 0.75 => ExpAcc 0.75.
        let env = EnvironmentModel::generative(
            ResponseModel::new(0.7, 2).unwrap(),
            LatencyModel::new(1.0, 0.1, 0.05).unwrap(),
        );
        let base = ChainPotentials::new(1, 2, vec![3f64.ln(), 0.0], vec![0.0; 4]).unwrap();
        let params = UtilityParams {
            cost_per_query: 0.01,
            cost_per_second: 0.005,
        };
        let ctx = GameContext::new(base, &env, params);
        let s = GameState::new(1)
            .apply_system_action(Action::Return)
            .unwrap();
        assert!((ctx.utility(&s) - 0.75).abs() < 1e-12);

        // One query still in flight at τ = 2 s: its response is ignored but
        // its cost counts.
        let mut s = GameState::new(1)
            .apply_system_action(Action::Query(0))
            .unwrap();
        s.now = 2.0;
        let s = s.apply_system_action(Action::Return).unwrap();
        assert!((ctx.utility(&s) - 0.73).abs() < 1e-12);

        let pricier = GameContext::new(
            ctx.base_potentials().clone(),
            &env,
            UtilityParams {
                cost_per_query: 0.02,
                ..params
            },
        );
        assert!(pricier.utility(&s) < ctx.utility(&s));
    }

    #[test]
    fn single_in_flight_is_resolved() {
        let c = ctx(3, 3, 1.0, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = GameState::new(3)
            .apply_system_action(Action::Query(2))
            .unwrap()
            .apply_system_action(Action::Wait)
            .unwrap();
        let t = c
            .sample_crowd_move(&s, CrowdSampler::Posterior, &mut rng)
            .unwrap();
        assert_eq!(t.turn(), Turn::System);
        assert!(t.entries()[0].response.is_some());
        assert_eq!(Some(t.now()), t.entries()[0].arrival);
        assert!(t.now() > 0.0);
    }

    #[test]
    fn earlier_issue_resolves_first() {
        let c = ctx(2, 2, 1.0, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut s = GameState::new(2)
            .apply_system_action(Action::Query(0))
            .unwrap();
        s.now = 5.0;
        let s = s
            .apply_system_action(Action::Query(1))
            .unwrap()
            .apply_system_action(Action::Wait)
            .unwrap();
        let trials = 2000;
        let first = (0..trials)
            .filter(|_| {
                let t = c
                    .sample_crowd_move(&s, CrowdSampler::Posterior, &mut rng)
                    .unwrap();
                t.entries()[0].response.is_some()
            })
            .count();
        assert!(first as f64 / trials as f64 > 0.999);
    }

    #[test]
    fn ground_truth_sampler_with_perfect_crowd() {
        let env = EnvironmentModel::generative(
            ResponseModel::new(1.0, 3).unwrap(),
            LatencyModel::new(1.0, 0.2, 0.05).unwrap(),
        );
        let c = GameContext::new(ChainPotentials::zeros(2, 3), &env, UtilityParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = GameState::new(2)
            .apply_system_action(Action::Query(1))
            .unwrap()
            .apply_system_action(Action::Wait)
            .unwrap();
        let t = c
            .sample_crowd_move(&s, CrowdSampler::GroundTruth(&[0, 2]), &mut rng)
            .unwrap();
        assert_eq!(t.received(), vec![(1, 2)]);
    }

    #[test]
    fn crowd_move_requires_crowd_turn() {
        let c = ctx(2, 2, 1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        assert_eq!(
            c.sample_crowd_move(&GameState::new(2), CrowdSampler::Posterior, &mut rng),
            Err(GameError::NotCrowdTurn)
        );
    }
}
