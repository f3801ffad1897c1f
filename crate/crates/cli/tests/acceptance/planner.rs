use otj_core::crf::ChainPotentials;
use otj_core::environment::{EnvironmentModel, LatencyModel, ResponseModel};
use otj_core::game::{GameContext, GameState, Turn, UtilityParams};
use otj_core::policy::{
    mcts_decide, required_queries, PolicyConfig, QueryGame, SearchGame, SearchTree, ThresholdConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

/// Node of a finite game tree with discretized chance outcomes.
enum Toy {
    Decide(Vec<usize>),
    Chance(Vec<(f64, usize)>),
    Leaf(f64),
}

struct ToyGame(Vec<Toy>);

/// Builds a game tree from nested constructors.
struct Builder(Vec<Toy>);

impl Builder {
    fn leaf(&mut self, v: f64) -> usize {
        self.0.push(Toy::Leaf(v));
        self.0.len() - 1
    }
    fn decide(&mut self, children: Vec<usize>) -> usize {
        self.0.push(Toy::Decide(children));
        self.0.len() - 1
    }
    fn chance(&mut self, outcomes: Vec<(f64, usize)>) -> usize {
        self.0.push(Toy::Chance(outcomes));
        self.0.len() - 1
    }
}

impl ToyGame {
    fn expectimax(&self, node: usize) -> f64 {
        match &self.0[node] {
            Toy::Leaf(v) => *v,
            Toy::Decide(c) => c
                .iter()
                .map(|&n| self.expectimax(n))
                .fold(f64::NEG_INFINITY, f64::max),
            Toy::Chance(o) => o.iter().map(|&(p, n)| p * self.expectimax(n)).sum(),
        }
    }

    fn optimal_root_action(&self, root: usize) -> usize {
        let Toy::Decide(children) = &self.0[root] else {
            unreachable!("roots are decision nodes")
        };
        (0..children.len()).fold(0, |b, a| {
            if self.expectimax(children[a]) > self.expectimax(children[b]) {
                a
            } else {
                b
            }
        })
    }
}

impl SearchGame for ToyGame {
    type State = usize;
    type Action = usize;

    fn turn(&self, s: &usize) -> Turn {
        match self.0[*s] {
            Toy::Decide(_) => Turn::System,
            Toy::Chance(_) => Turn::Crowd,
            Toy::Leaf(_) => Turn::Terminal,
        }
    }
    fn legal_actions(&self, s: &usize) -> Vec<usize> {
        match &self.0[*s] {
            Toy::Decide(c) => (0..c.len()).collect(),
            _ => Vec::new(),
        }
    }
    fn apply(&self, s: &usize, a: usize) -> usize {
        match &self.0[*s] {
            Toy::Decide(c) => c[a],
            _ => unreachable!("actions only at decision nodes"),
        }
    }
    fn sample_outcome<R: Rng + ?Sized>(&self, s: &usize, rng: &mut R) -> usize {
        let Toy::Chance(outcomes) = &self.0[*s] else {
            unreachable!("outcomes only at chance nodes")
        };
        let mut u: f64 = rng.random();
        for &(p, n) in outcomes {
            if u < p {
                return n;
            }
            u -= p;
        }
        outcomes.last().unwrap().1
    }
    fn utility(&self, s: &usize) -> f64 {
        match self.0[*s] {
            Toy::Leaf(v) => v,
            _ => 0.0,
        }
    }
}

/// Four games of up to three plies; returns each game with its root. The
/// optimal root value beats the runner-up by at least 0.1.
fn toy_suite() -> Vec<(ToyGame, usize)> {
    let mut games = Vec::new();

    // A sure 0.6 against a coin flip worth 0.5.
    let mut b = Builder(Vec::new());
    let (hi, lo) = (b.leaf(0.9), b.leaf(0.1));
    let flip = b.chance(vec![(0.5, hi), (0.5, lo)]);
    let sure = b.leaf(0.6);
    let root = b.decide(vec![flip, sure]);
    games.push((ToyGame(b.0), root));

    // Information worth having: the gamble lets the next move adapt (0.72
    // against 0.6 and 0.55).
    let mut b = Builder(Vec::new());
    let l = [1.0, 0.2, 0.1, 0.6].map(|v| b.leaf(v));
    let good = b.decide(vec![l[0], l[1]]);
    let bad = b.decide(vec![l[2], l[3]]);
    let adapt = b.chance(vec![(0.3, good), (0.7, bad)]);
    let sure = b.leaf(0.55);
    let (hi, lo) = (b.leaf(0.9), b.leaf(0.3));
    let coin = b.chance(vec![(0.5, hi), (0.5, lo)]);
    let root = b.decide(vec![sure, coin, adapt]);
    games.push((ToyGame(b.0), root));

    // Decide, chance, decide: 0.75 against 0.63 and 0.62.
    let mut b = Builder(Vec::new());
    let l = [0.9, 0.4, 0.2, 0.6].map(|v| b.leaf(v));
    let d1 = b.decide(vec![l[0], l[1]]);
    let d2 = b.decide(vec![l[2], l[3]]);
    let plan = b.chance(vec![(0.5, d1), (0.5, d2)]);
    let (hi, zero) = (b.leaf(0.7), b.leaf(0.0));
    let risky = b.chance(vec![(0.9, hi), (0.1, zero)]);
    let sure = b.leaf(0.62);
    let root = b.decide(vec![risky, sure, plan]);
    games.push((ToyGame(b.0), root));

    // A rare jackpot (0.37) and a sure 0.40 against an adaptive middle road
    // (0.5).
    let mut b = Builder(Vec::new());
    let (jack, low) = (b.leaf(1.0), b.leaf(0.3));
    let lottery = b.chance(vec![(0.1, jack), (0.9, low)]);
    let l = [0.55, 0.35, 0.45, 0.2].map(|v| b.leaf(v));
    let d1 = b.decide(vec![l[0], l[1]]);
    let d2 = b.decide(vec![l[2], l[3]]);
    let middle = b.chance(vec![(0.5, d1), (0.5, d2)]);
    let sure = b.leaf(0.40);
    let root = b.decide(vec![lottery, sure, middle]);
    games.push((ToyGame(b.0), root));

    games
}

pub fn toy_games() -> Outcome {
    // Utilities lie in [0, 1]; c = 0.5 sits mid-plateau of the exploration
    // constants that resolve these gaps.
    let config = PolicyConfig {
        rollout_budget: 5000,
        uct_constant: 0.5,
        ..PolicyConfig::default()
    };
    let mut optimal = 0;
    let mut per_game = Vec::new();
    for (game, root) in toy_suite() {
        let best = game.optimal_root_action(root);
        let mut hits = 0;
        for seed in 0..25 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if mcts_decide(&game, root, &config, &mut rng) == Some(best) {
                hits += 1;
            }
        }
        optimal += hits;
        per_game.push(hits.to_string());
    }
    Outcome::new(
        optimal >= 95,
        format!(
            "optimal root action in {optimal}/100 trials (need 95), per game {}",
            per_game.join("/")
        ),
    )
}

pub fn widening_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 5;
    let node = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = ChainPotentials::new(n, 4, node, vec![0.0; 16]).unwrap();
    let env = EnvironmentModel::generative(
        ResponseModel::new(0.7, 4).unwrap(),
        LatencyModel::new(1.2, 0.4, 0.05).unwrap(),
    );
    let ctx = GameContext::new(
        base,
        &env,
        UtilityParams {
            cost_per_query: 0.001,
            cost_per_second: 0.001,
        },
    );
    let game = QueryGame::new(&ctx, 3);
    let mut tree = SearchTree::new(&game, GameState::new(n), PolicyConfig::default());
    for _ in 0..10_000 {
        tree.rollout(&mut rng);
    }
    let mut checked = 0;
    let mut violations = 0;
    let mut widest = 0;
    for node in tree.nodes().iter().filter(|node| node.turn == Turn::Crowd) {
        let bound = ((node.visits as f64).sqrt().ceil() as usize).max(1) + 1;
        checked += 1;
        widest = widest.max(node.children.len());
        if node.children.len() > bound {
            violations += 1;
        }
    }
    Outcome::new(
        violations == 0 && checked > 0,
        format!("10000 rollouts, {checked} crowd nodes, {violations} violations, widest {widest} children"),
    )
}

pub fn threshold_count() -> Outcome {
    let config = ThresholdConfig {
        confidence_target: 0.98,
        uncertainty_factor: 0.3,
    };
    let got = required_queries(0.6, &config);
    let closed_form = ((0.02f64 / 0.4).ln() / 0.3f64.ln()).ceil() as usize;
    Outcome::new(
        got == 3 && closed_form == 3,
        format!("required_queries(0.6) = {got}, closed form {closed_form}, expected 3"),
    )
}
