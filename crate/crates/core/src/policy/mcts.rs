//! Monte-Carlo tree search with UCT at decision nodes and progressive
//! widening at chance nodes.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::game::Turn;

/// A two-player game against nature, as seen by the planner.
pub trait SearchGame {
    type State: Clone;
    type Action: Copy + Debug + PartialEq;

    fn turn(&self, state: &Self::State) -> Turn;

    /// Legal actions in tie-break order (earlier wins ties).
    fn legal_actions(&self, state: &Self::State) -> Vec<Self::Action>;

    fn apply(&self, state: &Self::State, action: Self::Action) -> Self::State;

    /// One draw from the chance dynamics.
    fn sample_outcome<R: Rng + ?Sized>(&self, state: &Self::State, rng: &mut R) -> Self::State;

    /// Utility of ending the game in `state`. Also used when the depth cap
    /// cuts a rollout short.
    fn utility(&self, state: &Self::State) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub uct_constant: f64,
    pub rollout_budget: usize,
    pub max_depth: usize,
    pub widening: bool,
    /// Per-position cap on queries considered by the planner. Not a game
    /// rule; it only bounds the search.
    pub max_queries_per_position: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            uct_constant: std::f64::consts::SQRT_2,
            rollout_budget: 1000,
            max_depth: 12,
            widening: true,
            max_queries_per_position: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Edge<A> {
    Action(A),
    Outcome(usize),
}

#[derive(Debug, Clone)]
pub struct SearchNode<S, A> {
    pub state: S,
    pub turn: Turn,
    pub visits: u64,
    pub value_sum: f64,
    /// Children created so far, in creation order.
    pub children: Vec<(Edge<A>, usize)>,
    /// Legal actions without a child yet, next one last.
    untried: Vec<A>,
    expanded: bool,
    terminal_value: Option<f64>,
}

impl<S, A> SearchNode<S, A> {
    fn new(state: S, turn: Turn) -> Self {
        Self {
            state,
            turn,
            visits: 0,
            value_sum: 0.0,
            children: Vec::new(),
            untried: Vec::new(),
            expanded: false,
            terminal_value: None,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

/// Arena-backed search tree; node 0 is the root.
pub struct SearchTree<'g, G: SearchGame> {
    game: &'g G,
    config: PolicyConfig,
    nodes: Vec<SearchNode<G::State, G::Action>>,
}

/// UCT score; unvisited children score +∞.
pub fn uct_score(child_value_sum: f64, child_visits: u64, parent_visits: u64, c: f64) -> f64 {
    if child_visits == 0 {
        return f64::INFINITY;
    }
    let n = child_visits as f64;
    let exploration = if c == 0.0 {
        0.0
    } else {
        c * ((parent_visits as f64).ln() / n).sqrt()
    };
    child_value_sum / n + exploration
}

/// Index of the highest UCT score, first index on ties.
pub fn select_uct(children: &[(f64, u64)], parent_visits: u64, c: f64) -> usize {
    select_uct_iter(children.iter().copied(), parent_visits, c)
}

fn select_uct_iter(
    children: impl Iterator<Item = (f64, u64)>,
    parent_visits: u64,
    c: f64,
) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (v, n)) in children.enumerate() {
        let score = uct_score(v, n, parent_visits, c);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

/// Whether a chance node with `visits` (already counting the current one)
/// and `stored` sampled children must reuse a stored child.
pub fn widening_saturated(visits: u64, stored: usize) -> bool {
    stored > 0 && (visits as f64).sqrt().max(1.0) <= stored as f64
}

impl<'g, G: SearchGame> SearchTree<'g, G> {
    pub fn new(game: &'g G, root: G::State, config: PolicyConfig) -> Self {
        let turn = game.turn(&root);
        Self {
            game,
            config,
            nodes: vec![SearchNode::new(root, turn)],
        }
    }

    pub fn root(&self) -> &SearchNode<G::State, G::Action> {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[SearchNode<G::State, G::Action>] {
        &self.nodes
    }

    fn push(&mut self, state: G::State) -> usize {
        let turn = self.game.turn(&state);
        self.nodes.push(SearchNode::new(state, turn));
        self.nodes.len() - 1
    }

    /// One rollout from the root; returns the utility it observed.
    pub fn rollout<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.monte_carlo_value(0, 0, rng)
    }

    fn monte_carlo_value<R: Rng + ?Sized>(&mut self, id: usize, depth: usize, rng: &mut R) -> f64 {
        self.nodes[id].visits += 1;
        let turn = self.nodes[id].turn;
        let value = if turn == Turn::Terminal || depth >= self.config.max_depth {
            self.terminal_value(id)
        } else if turn == Turn::System {
            let child = self.select_system_child(id);
            self.monte_carlo_value(child, depth + 1, rng)
        } else {
            let child = self.select_chance_child(id, rng);
            self.monte_carlo_value(child, depth + 1, rng)
        };
        self.nodes[id].value_sum += value;
        value
    }

    fn terminal_value(&mut self, id: usize) -> f64 {
        if let Some(v) = self.nodes[id].terminal_value {
            return v;
        }
        let v = self.game.utility(&self.nodes[id].state);
        self.nodes[id].terminal_value = Some(v);
        v
    }

    /// UCT choice among the legal actions. Children are created on their
    /// first visit: an action without a child is unvisited, so it wins
    /// outright, and the earliest such action wins ties.
    fn select_system_child(&mut self, id: usize) -> usize {
        if !self.nodes[id].expanded {
            let mut actions = self.game.legal_actions(&self.nodes[id].state);
            actions.reverse();
            self.nodes[id].untried = actions;
            self.nodes[id].expanded = true;
        }
        if let Some(action) = self.nodes[id].untried.pop() {
            let next = self.game.apply(&self.nodes[id].state, action);
            let child = self.push(next);
            self.nodes[id].children.push((Edge::Action(action), child));
            return child;
        }
        let node = &self.nodes[id];
        let stats = node
            .children
            .iter()
            .map(|&(_, c)| (self.nodes[c].value_sum, self.nodes[c].visits));
        node.children[select_uct_iter(stats, node.visits, self.config.uct_constant)].1
    }

    fn select_chance_child<R: Rng + ?Sized>(&mut self, id: usize, rng: &mut R) -> usize {
        let node = &self.nodes[id];
        let stored = node.children.len();
        if self.config.widening && widening_saturated(node.visits, stored) {
            return node.children[rng.random_range(0..stored)].1;
        }
        let next = self.game.sample_outcome(&node.state, rng);
        let child = self.push(next);
        self.nodes[id].children.push((Edge::Outcome(stored), child));
        child
    }

    /// Root actions as `(action, visits, mean value)` in tie-break order,
    /// including actions not tried yet.
    pub fn root_statistics(&self) -> Vec<(G::Action, u64, f64)> {
        let root = &self.nodes[0];
        root.children
            .iter()
            .filter_map(|&(edge, c)| match edge {
                Edge::Action(a) => Some((a, self.nodes[c].visits, self.nodes[c].mean())),
                Edge::Outcome(_) => None,
            })
            .chain(root.untried.iter().rev().map(|&a| (a, 0, 0.0)))
            .collect()
    }

    /// Visited root action with the highest mean value, earliest on ties.
    pub fn best_action(&self) -> Option<G::Action> {
        let mut best: Option<(G::Action, f64)> = None;
        for (a, visits, mean) in self.root_statistics() {
            if visits == 0 {
                continue;
            }
            if best.is_none_or(|(_, m)| mean > m) {
                best = Some((a, mean));
            }
        }
        best.map(|(a, _)| a)
    }
}

/// Runs `rollout_budget` rollouts from `root` and commits to the root action
/// with the highest mean value. Returns `None` only for a root without
/// actions (terminal or chance node).
pub fn mcts_decide<G: SearchGame, R: Rng + ?Sized>(
    game: &G,
    root: G::State,
    config: &PolicyConfig,
    rng: &mut R,
) -> Option<G::Action> {
    let mut tree = SearchTree::new(game, root, *config);
    if tree.root().turn != Turn::System {
        return None;
    }
    for _ in 0..config.rollout_budget.max(1) {
        tree.rollout(rng);
    }
    tree.best_action()
}
