//! Live query broker: a retainer pool of workers, a FIFO queue of pending
//! queries and payment bookkeeping.
//!
//! The broker is a plain state machine. Every call takes the broker clock
//! (seconds) explicitly, so the caller owns the single time authority and
//! all mutations go through one `&mut Broker`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::BrokerError;

pub type WorkerId = u64;
pub type QueryId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrokerConfig {
    /// Seconds an assignment may stay unanswered before reassignment.
    pub deadline: f64,
    pub price_per_query: f64,
    pub retainer_bonus: f64,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            deadline: 30.0,
            price_per_query: 0.01,
            retainer_bonus: 1.00,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum WorkerState {
    Idle { since: f64 },
    Assigned { query: QueryId },
    Departed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSession {
    pub id: WorkerId,
    pub join_time: f64,
    pub state: WorkerState,
    /// Answers accepted into a game.
    pub completed: u64,
    /// Answers paid for, including stale ones.
    pub paid_answers: u64,
    pub payment: f64,
}

/// What a worker is shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<String>,
    pub highlight_index: usize,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub id: QueryId,
    pub episode: usize,
    /// Index of the query's entry in the episode's game state.
    pub entry: usize,
    pub prompt: Prompt,
    pub issue_time: f64,
    pub assignment: Option<WorkerId>,
    pub assigned_at: Option<f64>,
    pub deadline: Option<f64>,
    pub retries: u32,
    /// Workers this query was taken away from.
    pub previous_workers: Vec<WorkerId>,
}

impl PendingQuery {
    pub fn position(&self) -> usize {
        self.prompt.highlight_index
    }
}

/// A query handed to a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub worker: WorkerId,
    pub query: QueryId,
    pub prompt: Prompt,
    pub deadline: f64,
}

/// An accepted answer, timed by the broker clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrowdResponse {
    pub query: QueryId,
    pub worker: WorkerId,
    pub episode: usize,
    pub entry: usize,
    pub position: usize,
    pub label: usize,
    pub issue_time: f64,
    pub arrival: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BrokerStatus {
    pub pool_size: usize,
    pub idle_workers: usize,
    pub queue_depth: usize,
    pub open_queries: usize,
    pub answered: u64,
    pub stale_answers: u64,
    pub timeouts: u64,
    pub max_retries: u32,
    pub total_payment: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Broker {
    config: BrokerConfig,
    workers: BTreeMap<WorkerId, WorkerSession>,
    open: BTreeMap<QueryId, PendingQuery>,
    queue: VecDeque<QueryId>,
    /// Queries that are answered or belong to a closed episode.
    closed: BTreeSet<QueryId>,
    next_worker: WorkerId,
    next_query: QueryId,
    answered: u64,
    stale: u64,
    timeouts: u64,
    paused: bool,
}

impl Broker {
    pub fn new(config: BrokerConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    /// While paused nothing is handed out; queries stay queued.
    pub fn set_paused(&mut self, paused: bool) {
        self.paused = paused;
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn worker(&self, id: WorkerId) -> Option<&WorkerSession> {
        self.workers.get(&id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerSession> {
        self.workers.values()
    }

    pub fn query(&self, id: QueryId) -> Option<&PendingQuery> {
        self.open.get(&id)
    }

    /// Queued query ids, head first.
    pub fn queue(&self) -> impl Iterator<Item = QueryId> + '_ {
        self.queue.iter().copied()
    }

    /// A new worker joins the pool and is paid the retainer bonus. Returns
    /// its id and the assignment it picks up from the queue, if any.
    pub fn join(&mut self, now: f64) -> (WorkerId, Vec<Assignment>) {
        let id = self.next_worker;
        self.next_worker += 1;
        self.workers.insert(
            id,
            WorkerSession {
                id,
                join_time: now,
                state: WorkerState::Idle { since: now },
                completed: 0,
                paid_answers: 0,
                payment: self.config.retainer_bonus,
            },
        );
        (id, self.drain_queue(now))
    }

    /// The worker leaves. An assigned query goes back to the head of the
    /// queue and may be picked up at once by another idle worker.
    pub fn depart(&mut self, worker: WorkerId, now: f64) -> Result<Vec<Assignment>, BrokerError> {
        let session = self
            .workers
            .get_mut(&worker)
            .ok_or(BrokerError::UnknownWorker(worker))?;
        let previous = std::mem::replace(&mut session.state, WorkerState::Departed);
        if let WorkerState::Assigned { query } = previous {
            self.unassign(query, worker, true);
        }
        Ok(self.drain_queue(now))
    }

    /// Registers a new query and dispatches it.
    pub fn submit(
        &mut self,
        episode: usize,
        entry: usize,
        prompt: Prompt,
        now: f64,
    ) -> (QueryId, Option<Assignment>) {
        let id = self.next_query;
        self.next_query += 1;
        self.open.insert(
            id,
            PendingQuery {
                id,
                episode,
                entry,
                prompt,
                issue_time: now,
                assignment: None,
                assigned_at: None,
                deadline: None,
                retries: 0,
                previous_workers: Vec::new(),
            },
        );
        self.queue.push_back(id);
        let assignment = self.drain_queue(now).into_iter().next();
        (id, assignment)
    }

    /// Hands the queue head to the longest-idle worker (lowest id on
    /// ties), if there are both.
    pub fn dispatch(&mut self, now: f64) -> Option<Assignment> {
        if self.paused {
            return None;
        }
        let worker = self
            .workers
            .values()
            .filter_map(|w| match w.state {
                WorkerState::Idle { since } => Some((since, w.id)),
                _ => None,
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))?
            .1;
        let query = self.queue.pop_front()?;
        let q = self.open.get_mut(&query).expect("queued queries are open");
        let deadline = now + self.config.deadline;
        q.assignment = Some(worker);
        q.assigned_at = Some(now);
        q.deadline = Some(deadline);
        self.workers
            .get_mut(&worker)
            .expect("idle worker exists")
            .state = WorkerState::Assigned { query };
        Some(Assignment {
            worker,
            query,
            prompt: q.prompt.clone(),
            deadline,
        })
    }

    fn drain_queue(&mut self, now: f64) -> Vec<Assignment> {
        std::iter::from_fn(|| self.dispatch(now)).collect()
    }

    fn unassign(&mut self, query: QueryId, worker: WorkerId, requeue: bool) {
        if let Some(q) = self.open.get_mut(&query) {
            q.assignment = None;
            q.assigned_at = None;
            q.deadline = None;
            q.previous_workers.push(worker);
            if requeue {
                self.queue.push_front(query);
            }
        }
    }

    fn pay(&mut self, worker: WorkerId) {
        let price = self.config.price_per_query;
        if let Some(w) = self.workers.get_mut(&worker) {
            w.paid_answers += 1;
            w.payment += price;
        }
    }

    fn set_idle(&mut self, worker: WorkerId, now: f64) {
        if let Some(w) = self.workers.get_mut(&worker) {
            if w.state != WorkerState::Departed {
                w.state = WorkerState::Idle { since: now };
            }
        }
    }

    /// Accepts an answer. Stale answers (duplicates, answers to closed
    /// queries, answers after a timeout) are paid and discarded; in every
    /// case where the worker held the query it becomes idle again, and the
    /// returned assignments hand out queued work.
    pub fn receive_answer(
        &mut self,
        query: QueryId,
        worker: WorkerId,
        label: usize,
        now: f64,
    ) -> (Result<CrowdResponse, BrokerError>, Vec<Assignment>) {
        let result = self.accept(query, worker, label, now);
        (result, self.drain_queue(now))
    }

    fn accept(
        &mut self,
        query: QueryId,
        worker: WorkerId,
        label: usize,
        now: f64,
    ) -> Result<CrowdResponse, BrokerError> {
        if !self.workers.contains_key(&worker) {
            return Err(BrokerError::UnknownWorker(worker));
        }
        let holds = self.workers[&worker].state == WorkerState::Assigned { query };
        if self.closed.contains(&query) {
            if holds {
                self.set_idle(worker, now);
            }
            self.pay(worker);
            self.stale += 1;
            return Err(BrokerError::StaleAnswer(query));
        }
        let q = self
            .open
            .get(&query)
            .ok_or(BrokerError::UnknownQuery(query))?;
        if q.assignment != Some(worker) {
            if q.previous_workers.contains(&worker) {
                self.pay(worker);
                self.stale += 1;
                return Err(BrokerError::StaleAnswer(query));
            }
            return Err(BrokerError::NotAssigned { query, worker });
        }
        let q = self.open.remove(&query).expect("checked above");
        self.closed.insert(query);
        self.answered += 1;
        self.pay(worker);
        self.workers
            .get_mut(&worker)
            .expect("checked above")
            .completed += 1;
        self.set_idle(worker, now);
        Ok(CrowdResponse {
            query,
            worker,
            episode: q.episode,
            entry: q.entry,
            position: q.position(),
            label,
            issue_time: q.issue_time,
            // The broker clock never runs backwards, but keep t > s strict.
            arrival: if now > q.issue_time {
                now
            } else {
                q.issue_time.next_up()
            },
        })
    }

    /// Closes every open query of `episode`. Queued ones are dropped;
    /// assigned workers keep their task until they answer (stale, paid) or
    /// time out.
    pub fn close_episode(&mut self, episode: usize) -> Vec<QueryId> {
        let ids: Vec<QueryId> = self
            .open
            .values()
            .filter(|q| q.episode == episode)
            .map(|q| q.id)
            .collect();
        for id in &ids {
            self.open.remove(id);
            self.closed.insert(*id);
        }
        self.queue.retain(|id| !ids.contains(id));
        ids
    }

    /// Reassigns every assignment older than the deadline. The timed-out
    /// worker becomes idle (it is still connected) and the query goes back
    /// to the head of the queue with its retry count incremented.
    pub fn timeout_scan(&mut self, now: f64) -> Vec<Assignment> {
        let expired: Vec<(QueryId, WorkerId)> = self
            .workers
            .values()
            .filter_map(|w| match w.state {
                WorkerState::Assigned { query } => Some((query, w.id)),
                _ => None,
            })
            .filter(|(query, _)| match self.open.get(query) {
                Some(q) => q.deadline.is_some_and(|d| now >= d),
                // Closed queries: only the stale holder is left to free.
                None => true,
            })
            .collect();
        // Newest first: each is pushed to the queue head, so the oldest ends
        // up in front.
        let mut expired = expired;
        expired.sort_by_key(|&(q, _)| std::cmp::Reverse(q));
        for (query, worker) in expired {
            if let Some(q) = self.open.get_mut(&query) {
                q.retries += 1;
                self.timeouts += 1;
                self.unassign(query, worker, true);
                self.set_idle(worker, now);
            } else {
                self.set_idle(worker, now);
            }
        }
        self.drain_queue(now)
    }

    pub fn status(&self) -> BrokerStatus {
        let active = || {
            self.workers
                .values()
                .filter(|w| w.state != WorkerState::Departed)
        };
        BrokerStatus {
            pool_size: active().count(),
            idle_workers: active()
                .filter(|w| matches!(w.state, WorkerState::Idle { .. }))
                .count(),
            queue_depth: self.queue.len(),
            open_queries: self.open.len(),
            answered: self.answered,
            stale_answers: self.stale,
            timeouts: self.timeouts,
            max_retries: self.open.values().map(|q| q.retries).max().unwrap_or(0),
            total_payment: self.workers.values().map(|w| w.payment).sum(),
        }
    }
}
