use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::Dataset;
use crate::crf::{CrfModel, LabelSet, SoftTarget, TokenSequence};
use crate::environment::{CrowdMode, EnvironmentModel};
use crate::error::{GameError, HarnessError};
use crate::game::{Action, GameContext, GameState, Posterior, UtilityParams};
use crate::policy::{nvote_aggregate, Policy, PolicyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub position: usize,
    pub issue_time: f64,
    pub arrival_time: Option<f64>,
    pub response: Option<String>,
}

/// What happened on one streamed input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub example_id: usize,
    pub tokens: Vec<String>,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub num_queries: usize,
    pub queries: Vec<QueryRecord>,
    /// Game clock at return, in seconds.
    pub latency: f64,
    pub expected_accuracy: f64,
    pub query_cost: f64,
    pub time_cost: f64,
    pub utility: f64,
    pub model_version: u64,
    pub pool_exhausted: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    pub fn correct_tokens(&self) -> usize {
        self.predicted
            .iter()
            .zip(&self.gold)
            .filter(|(p, g)| p == g)
            .count()
    }
}

/// One line of the trajectory log. Wait events carry the response that
/// ended the wait and the clock after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub episode: usize,
    pub step: usize,
    pub action: Action,
    pub clock: f64,
    pub in_flight: usize,
    pub response: Option<String>,
}

/// Stepwise driver for one episode, shared by the simulator and the live
/// broker.
pub struct Episode {
    episode: usize,
    example_id: usize,
    input: TokenSequence,
    ctx: GameContext,
    state: GameState,
    events: Vec<TrajectoryEvent>,
    pool_exhausted: bool,
}

impl Episode {
    pub fn new(
        episode: usize,
        example_id: usize,
        input: TokenSequence,
        model: &CrfModel,
        env: &EnvironmentModel,
        params: UtilityParams,
    ) -> Self {
        let ctx = GameContext::from_model(model, &input, env, params);
        let state = GameState::new(input.len());
        Self {
            episode,
            example_id,
            input,
            ctx,
            state,
            events: Vec::new(),
            pool_exhausted: false,
        }
    }

    pub fn id(&self) -> usize {
        self.episode
    }

    pub fn example_id(&self) -> usize {
        self.example_id
    }

    pub fn input(&self) -> &TokenSequence {
        &self.input
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn context(&self) -> &GameContext {
        &self.ctx
    }

    pub fn mark_pool_exhausted(&mut self) {
        self.pool_exhausted = true;
    }

    pub fn posterior(&self) -> Posterior {
        self.ctx.posterior(&self.state.received())
    }

    pub fn decide<R: rand::Rng + ?Sized>(&self, policy: &Policy, rng: &mut R) -> Action {
        policy.decide(&self.state, &self.ctx, rng)
    }

    /// Applies a system action and returns the index of the new entry.
    pub fn apply_action(&mut self, action: Action) -> Result<usize, GameError> {
        self.state = self.state.apply_system_action(action)?;
        if action != Action::Wait {
            self.log(action, None);
        }
        Ok(self.state.entries().len() - 1)
    }

    /// Live path: lets the game clock catch up with wall time.
    pub fn advance_clock(&mut self, now: f64) -> Result<(), GameError> {
        self.state = self.state.advance_clock(now)?;
        Ok(())
    }

    /// Resolves in-flight entry `j`. Only valid right after a wait.
    pub fn apply_response(
        &mut self,
        j: usize,
        label: usize,
        arrival: f64,
        labels: &LabelSet,
    ) -> Result<(), GameError> {
        self.state = self.state.apply_response(j, label, arrival)?;
        self.log(Action::Wait, Some(labels.name(label).to_owned()));
        Ok(())
    }

    fn log(&mut self, action: Action, response: Option<String>) {
        self.events.push(TrajectoryEvent {
            episode: self.episode,
            step: self.events.len(),
            action,
            clock: self.state.now(),
            in_flight: self.state.in_flight_count(),
            response,
        });
    }

    /// Prediction, training target and record for a finished episode.
    pub fn finish(
        self,
        policy: PolicyKind,
        labels: &LabelSet,
        gold: &[usize],
        model_version: u64,
    ) -> FinishedEpisode {
        let posterior = self.posterior();
        let received = self.state.received();
        let predicted = match policy {
            PolicyKind::NVote(_) => {
                let mut votes = vec![Vec::new(); self.input.len()];
                for &(i, r) in &received {
                    votes[i].push(r);
                }
                nvote_aggregate(&votes, labels.len(), &posterior.map_labels)
            }
            _ => posterior.map_labels.clone(),
        };
        let target = match policy {
            PolicyKind::Online => Some(SoftTarget::product(
                gold.iter()
                    .map(|&g| {
                        (0..labels.len())
                            .map(|y| if y == g { 1.0 } else { 0.0 })
                            .collect()
                    })
                    .collect(),
            )),
            _ if received.is_empty() => None,
            _ => Some(self.ctx.posterior_target(&received)),
        };
        let params = self.ctx.params();
        let query_cost = self.state.num_queries() as f64 * params.cost_per_query;
        let time_cost = self.state.now() * params.cost_per_second;
        let expected_accuracy = posterior.expected_accuracy();
        let names = |v: &[usize]| {
            v.iter()
                .map(|&y| labels.name(y).to_owned())
                .collect::<Vec<_>>()
        };
        let queries = self
            .state
            .entries()
            .iter()
            .filter_map(|e| match e.action {
                Action::Query(position) => Some(QueryRecord {
                    position,
                    issue_time: e.issue_time,
                    arrival_time: e.arrival,
                    response: e.response.map(|r| labels.name(r).to_owned()),
                }),
                _ => None,
            })
            .collect::<Vec<_>>();
        let record = EpisodeRecord {
            episode: self.episode,
            example_id: self.example_id,
            tokens: self.input.tokens().to_vec(),
            predicted: names(&predicted),
            gold: names(gold),
            num_queries: queries.len(),
            queries,
            latency: self.state.now(),
            expected_accuracy,
            query_cost,
            time_cost,
            utility: expected_accuracy - query_cost - time_cost,
            model_version,
            pool_exhausted: self.pool_exhausted,
        };
        FinishedEpisode {
            record,
            events: self.events,
            target,
        }
    }
}

pub struct FinishedEpisode {
    pub record: EpisodeRecord,
    pub events: Vec<TrajectoryEvent>,
    /// Per-position soft labels to train on, if the episode taught anything.
    pub target: Option<SoftTarget>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<EpisodeRecord>,
    pub trajectory: Vec<TrajectoryEvent>,
    pub model: CrfModel,
}

/// Independent deterministic stream per (seed, episode, role).
fn episode_rng(seed: u64, episode: usize, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((episode as u64) << 2) | role);
    rng
}

const ROLE_PLANNER: u64 = 1;
const ROLE_CROWD: u64 = 2;

/// The planner's random stream for one episode, as used by [`run_stream`].
pub fn planner_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    episode_rng(seed, episode, ROLE_PLANNER)
}

/// Example indices in stream order.
pub fn stream_order(dataset: &Dataset, config: &RunConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = config.shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// Plays every example of the stream against the simulated crowd, updating
/// the model between episodes.
pub fn run_stream(
    dataset: &Dataset,
    config: &RunConfig,
    mode: CrowdMode,
) -> Result<RunOutput, HarnessError> {
    run_stream_with(
        dataset,
        config,
        mode,
        CrfModel::new(dataset.label_set.clone()),
        |_| {},
    )
}

/// [`run_stream`] starting from `model`, calling `on_episode` after each
/// episode.
pub fn run_stream_with(
    dataset: &Dataset,
    config: &RunConfig,
    mode: CrowdMode,
    mut model: CrfModel,
    mut on_episode: impl FnMut(&EpisodeRecord),
) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let labels = &dataset.label_set;
    let mut env = EnvironmentModel {
        response: config.response_model(labels.len())?,
        latency: config.latency_model()?,
        mode,
    };
    if let CrowdMode::Frozen(pool) = &mut env.mode {
        pool.set_fallback(config.pool_fallback);
    }
    let policy = config.policy();
    let mut records = Vec::with_capacity(dataset.len());
    let mut trajectory = Vec::new();
    let mut version = 0u64;

    for (episode_idx, example_idx) in stream_order(dataset, config).into_iter().enumerate() {
        let example = &dataset.examples[example_idx];
        let mut planner_rng = episode_rng(config.seed, episode_idx, ROLE_PLANNER);
        let mut crowd_rng = episode_rng(config.seed, episode_idx, ROLE_CROWD);
        let mut episode = Episode::new(
            episode_idx,
            example.id,
            example.input.clone(),
            &model,
            &env,
            config.utility,
        );
        // Answers the simulated crowd will give, fixed at issue time:
        // entry index -> (label, absolute arrival time).
        let mut pending: Vec<Option<(usize, f64)>> = Vec::new();

        loop {
            let action = episode.decide(&policy, &mut planner_rng);
            let j = episode.apply_action(action)?;
            pending.resize(j + 1, None);
            match action {
                Action::Query(position) => {
                    let draw = env.frozen_draw(
                        example.id,
                        position,
                        example.gold[position],
                        &mut crowd_rng,
                    )?;
                    if draw.fallback {
                        episode.mark_pool_exhausted();
                    }
                    pending[j] = Some((draw.label, episode.state().now() + draw.delay));
                }
                Action::Wait => {
                    let (next, (label, arrival)) = pending
                        .iter()
                        .enumerate()
                        .filter_map(|(k, p)| p.map(|p| (k, p)))
                        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
                        .expect("wait is only legal with queries in flight");
                    pending[next] = None;
                    episode.apply_response(next, label, arrival, labels)?;
                }
                Action::Return => break,
            }
        }

        let finished = episode.finish(config.policy, labels, &example.gold, version);
        if let Some(target) = &finished.target {
            model.adagrad_update_target(&example.input, target, &config.adagrad)?;
            version += 1;
        }
        on_episode(&finished.record);
        records.push(finished.record);
        trajectory.extend(finished.events);
    }
    Ok(RunOutput {
        records,
        trajectory,
        model,
    })
}
