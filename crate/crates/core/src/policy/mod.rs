//! Action selection for the query game: the tree-search planner and the
//! baselines it is compared against.

mod baselines;
pub mod mcts;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{
    nvote_aggregate, nvote_decide, online_decide, required_queries, threshold_decide,
    ThresholdConfig,
};
pub use mcts::{mcts_decide, PolicyConfig, SearchGame, SearchTree};

use crate::game::{Action, CrowdSampler, GameContext, GameState, Posterior, Turn};

/// The query game as a search problem, with posteriors memoized by the
/// multiset of received responses.
pub struct QueryGame<'a> {
    ctx: &'a GameContext,
    max_queries_per_position: usize,
    cache: RefCell<HashMap<Vec<(usize, usize)>, Rc<Posterior>>>,
}

impl<'a> QueryGame<'a> {
    pub fn new(ctx: &'a GameContext, max_queries_per_position: usize) -> Self {
        Self {
            ctx,
            max_queries_per_position,
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn posterior(&self, state: &GameState) -> Rc<Posterior> {
        let mut key = state.received();
        key.sort_unstable();
        if let Some(p) = self.cache.borrow().get(&key) {
            return Rc::clone(p);
        }
        let p = Rc::new(self.ctx.posterior(&key));
        self.cache.borrow_mut().insert(key, Rc::clone(&p));
        p
    }
}

impl SearchGame for QueryGame<'_> {
    type State = GameState;
    type Action = Action;

    fn turn(&self, state: &GameState) -> Turn {
        state.turn()
    }

    fn legal_actions(&self, state: &GameState) -> Vec<Action> {
        state
            .legal_actions()
            .into_iter()
            .filter(|a| match a {
                Action::Query(i) => state.queries_on(*i) < self.max_queries_per_position,
                _ => true,
            })
            .collect()
    }

    fn apply(&self, state: &GameState, action: Action) -> GameState {
        state
            .apply_system_action(action)
            .expect("planner only applies legal actions")
    }

    fn sample_outcome<R: Rng + ?Sized>(&self, state: &GameState, rng: &mut R) -> GameState {
        self.ctx
            .sample_crowd_move_with(
                state,
                CrowdSampler::Posterior,
                |i| self.posterior(state).marginals.row(i).to_vec(),
                rng,
            )
            .expect("chance nodes have in-flight queries")
    }

    fn utility(&self, state: &GameState) -> f64 {
        self.posterior(state).expected_accuracy() - self.ctx.cost(state)
    }
}

/// Planner entry point for the query game.
pub fn lense_decide<R: Rng + ?Sized>(
    state: &GameState,
    ctx: &GameContext,
    config: &PolicyConfig,
    rng: &mut R,
) -> Action {
    let game = QueryGame::new(ctx, config.max_queries_per_position);
    mcts_decide(&game, state.clone(), config, rng).unwrap_or(Action::Return)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Lense,
    Threshold,
    NVote(usize),
    Online,
}

impl PolicyKind {
    /// Whether the crowd's answers (rather than gold labels) train the model.
    pub fn learns_from_crowd(&self) -> bool {
        !matches!(self, PolicyKind::Online)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Lense => f.write_str("lense"),
            PolicyKind::Threshold => f.write_str("threshold"),
            PolicyKind::NVote(n) => write!(f, "nvote:{n}"),
            PolicyKind::Online => f.write_str("online"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "lense" => Ok(PolicyKind::Lense),
            "threshold" => Ok(PolicyKind::Threshold),
            "online" => Ok(PolicyKind::Online),
            other => {
                let n = other
                    .strip_prefix("nvote:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| format!("unknown policy {other:?} (expected lense, threshold, nvote:<n>, online)"))?;
                Ok(PolicyKind::NVote(n))
            }
        }
    }
}

/// A policy together with its tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub mcts: PolicyConfig,
    pub threshold: ThresholdConfig,
}

impl Policy {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            mcts: PolicyConfig::default(),
            threshold: ThresholdConfig::default(),
        }
    }

    pub fn decide<R: Rng + ?Sized>(
        &self,
        state: &GameState,
        ctx: &GameContext,
        rng: &mut R,
    ) -> Action {
        match self.kind {
            PolicyKind::Lense => lense_decide(state, ctx, &self.mcts, rng),
            PolicyKind::Threshold => threshold_decide(state, ctx, &self.threshold),
            PolicyKind::NVote(n) => nvote_decide(state, n),
            PolicyKind::Online => online_decide(state),
        }
    }
}
