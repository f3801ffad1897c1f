//! Live broker server.
//!
//! One event-loop task owns the broker, the model and the running episode;
//! websocket sessions and HTTP handlers talk to it over channels, so every
//! mutation is ordered by receipt at that single point. The loop reads the
//! broker clock from one `Instant`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};

use rand_chacha::ChaCha8Rng;

use otj_core::crf::CrfModel;
use otj_core::environment::{CrowdMode, EnvironmentModel};
use otj_core::game::Action;
use otj_core::harness::export::{write_jsonl, EPISODES_FILE};
use otj_core::harness::{
    compute_metrics, export_results, planner_rng, run::stream_order, Dataset, Episode,
    EpisodeRecord, RunConfig, TrajectoryEvent,
};
use otj_core::policy::Policy;
use otj_core::service::{Assignment, Broker, BrokerConfig, CrowdResponse, Prompt, WorkerId};
use otj_core::BrokerError;

use crate::args::ServeArgs;
use crate::commands::{background, load_data, output_dir, resolve_config};
use crate::error::CliError;
use crate::protocol::{decode, encode, ClientMessage, ServerMessage, PROTOCOL_VERSION};

/// Everything the server needs besides a listener.
#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub config: RunConfig,
    pub dataset: Dataset,
    pub token: String,
    pub deadline: f64,
    pub autostart: bool,
    pub out_dir: PathBuf,
}

/// What a finished server leaves behind.
#[derive(Debug, Clone)]
pub struct ServeReport {
    pub records: Vec<EpisodeRecord>,
    pub episodes_file: PathBuf,
}

enum Event {
    Connected {
        tx: mpsc::UnboundedSender<ServerMessage>,
        reply: oneshot::Sender<WorkerId>,
    },
    FromWorker {
        worker: WorkerId,
        message: ClientMessage,
    },
    Disconnected {
        worker: WorkerId,
    },
    Status(oneshot::Sender<Value>),
    Metrics(oneshot::Sender<Value>),
    Marginals(usize, oneshot::Sender<Option<Value>>),
    Start(oneshot::Sender<Value>),
    Stop(oneshot::Sender<Value>),
}

#[derive(Clone)]
struct AppState {
    events: mpsc::UnboundedSender<Event>,
    token: String,
    stop: watch::Receiver<bool>,
}

struct LiveEpisode {
    episode: Episode,
    example: usize,
    /// Broker time at which the episode started; game time is relative.
    start: f64,
    rng: ChaCha8Rng,
    buffered: Vec<CrowdResponse>,
    waiting: bool,
}

struct Live {
    options: ServeOptions,
    policy: Policy,
    env: EnvironmentModel,
    model: CrfModel,
    version: u64,
    broker: Broker,
    clock: Instant,
    order: Vec<usize>,
    next: usize,
    current: Option<LiveEpisode>,
    running: bool,
    finished: bool,
    records: Vec<EpisodeRecord>,
    trajectory: Vec<TrajectoryEvent>,
    episodes_out: BufWriter<File>,
    workers: HashMap<WorkerId, mpsc::UnboundedSender<ServerMessage>>,
    final_marginals: HashMap<usize, Value>,
}

impl Live {
    fn new(options: ServeOptions) -> Result<Self, CliError> {
        let labels = options.dataset.label_set.len();
        let config = &options.config;
        let env = EnvironmentModel {
            response: config.response_model(labels)?,
            latency: config.latency_model()?,
            mode: CrowdMode::Generative,
        };
        std::fs::create_dir_all(&options.out_dir)
            .map_err(|e| CliError::Other(format!("{}: {e}", options.out_dir.display())))?;
        let path = options.out_dir.join(EPISODES_FILE);
        let file =
            File::create(&path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        let mut broker = Broker::new(BrokerConfig {
            deadline: options.deadline,
            ..BrokerConfig::default()
        });
        broker.set_paused(true);
        Ok(Self {
            policy: config.policy(),
            model: CrfModel::new(options.dataset.label_set.clone()),
            order: stream_order(&options.dataset, config),
            env,
            version: 0,
            broker,
            clock: Instant::now(),
            next: 0,
            current: None,
            running: false,
            finished: false,
            records: Vec::new(),
            trajectory: Vec::new(),
            episodes_out: BufWriter::new(file),
            workers: HashMap::new(),
            final_marginals: HashMap::new(),
            options,
        })
    }

    fn now(&self) -> f64 {
        self.clock.elapsed().as_secs_f64()
    }

    fn labels(&self) -> Vec<String> {
        self.options.dataset.label_set.names().to_vec()
    }

    fn send(&self, worker: WorkerId, message: ServerMessage) {
        if let Some(tx) = self.workers.get(&worker) {
            let _ = tx.send(message);
        }
    }

    fn deliver(&self, assignments: Vec<Assignment>) {
        let now = self.now();
        for a in assignments {
            self.send(
                a.worker,
                ServerMessage::Task {
                    query_id: a.query,
                    tokens: a.prompt.tokens,
                    highlight_index: a.prompt.highlight_index,
                    labels: a.prompt.labels,
                    deadline_seconds: (a.deadline - now).max(0.0),
                },
            );
        }
    }

    fn set_running(&mut self, running: bool) {
        self.running = running && !self.finished;
        self.broker.set_paused(!self.running);
        if self.running {
            let assignments = std::iter::from_fn(|| self.broker.dispatch(self.now())).collect();
            self.deliver(assignments);
            self.pump();
        }
    }

    fn on_event(&mut self, event: Event) {
        match event {
            Event::Connected { tx, reply } => {
                let (id, assignments) = self.broker.join(self.now());
                let _ = tx.send(ServerMessage::Welcome {
                    worker_id: id,
                    labels: self.labels(),
                });
                self.workers.insert(id, tx);
                let _ = reply.send(id);
                self.deliver(assignments);
            }
            Event::FromWorker { worker, message } => self.on_worker_message(worker, message),
            Event::Disconnected { worker } => {
                self.workers.remove(&worker);
                if let Ok(assignments) = self.broker.depart(worker, self.now()) {
                    self.deliver(assignments);
                }
            }
            Event::Status(reply) => {
                let _ = reply.send(self.status());
            }
            Event::Metrics(reply) => {
                let _ = reply.send(self.metrics());
            }
            Event::Marginals(episode, reply) => {
                let _ = reply.send(self.marginals(episode));
            }
            Event::Start(reply) => {
                self.set_running(true);
                let _ = reply.send(self.status());
            }
            Event::Stop(reply) => {
                self.set_running(false);
                let _ = reply.send(self.status());
            }
        }
    }

    fn on_worker_message(&mut self, worker: WorkerId, message: ClientMessage) {
        match message {
            ClientMessage::Ping => self.send(worker, ServerMessage::Pong),
            ClientMessage::Join { .. } => self.send(
                worker,
                ServerMessage::Error {
                    reason: "already joined".into(),
                },
            ),
            ClientMessage::Goodbye => {
                if let Ok(assignments) = self.broker.depart(worker, self.now()) {
                    self.deliver(assignments);
                }
            }
            ClientMessage::Answer { query_id, label } => {
                let Some(label) = self.options.dataset.label_set.index_of(&label) else {
                    self.send(
                        worker,
                        ServerMessage::Error {
                            reason: format!("unknown label {label:?}"),
                        },
                    );
                    return;
                };
                let (result, assignments) =
                    self.broker
                        .receive_answer(query_id, worker, label, self.now());
                match result {
                    Ok(response) => {
                        self.send(
                            worker,
                            ServerMessage::Ack {
                                query_id,
                                accepted: true,
                            },
                        );
                        if let Some(live) = self
                            .current
                            .as_mut()
                            .filter(|c| c.episode.id() == response.episode)
                        {
                            live.buffered.push(response);
                        }
                    }
                    Err(BrokerError::StaleAnswer(_)) => self.send(
                        worker,
                        ServerMessage::Ack {
                            query_id,
                            accepted: false,
                        },
                    ),
                    Err(e) => self.send(
                        worker,
                        ServerMessage::Error {
                            reason: e.to_string(),
                        },
                    ),
                }
                self.deliver(assignments);
                self.pump();
            }
        }
    }

    fn on_tick(&mut self) {
        let assignments = self.broker.timeout_scan(self.now());
        self.deliver(assignments);
        self.pump();
    }

    /// Plays the running episode forward until it has to wait for the crowd.
    fn pump(&mut self) {
        while self.running {
            if self.current.is_none() && !self.start_next() {
                return;
            }
            let now = self.now();
            let live = self.current.as_mut().expect("started above");
            if live.waiting {
                if live.buffered.is_empty() {
                    return;
                }
                let r = live.buffered.remove(0);
                let state = live.episode.state();
                let issue = state.entries()[r.entry].issue_time;
                let mut arrival = (r.arrival - live.start).max(state.now());
                if arrival <= issue {
                    arrival = issue.next_up();
                }
                live.episode
                    .apply_response(r.entry, r.label, arrival, &self.options.dataset.label_set)
                    .expect("broker answers match in-flight entries");
                live.waiting = false;
                continue;
            }
            let _ = live.episode.advance_clock(now - live.start);
            let action = live.episode.decide(&self.policy, &mut live.rng);
            // Planning takes wall time; issue the query at the moment it leaves.
            let now = self.clock.elapsed().as_secs_f64();
            let _ = live.episode.advance_clock(now - live.start);
            let entry = live
                .episode
                .apply_action(action)
                .expect("policies choose legal actions");
            match action {
                Action::Query(position) => {
                    let prompt = Prompt {
                        tokens: live.episode.input().tokens().to_vec(),
                        highlight_index: position,
                        labels: self.options.dataset.label_set.names().to_vec(),
                    };
                    let episode = live.episode.id();
                    let (_, assignment) = self.broker.submit(episode, entry, prompt, now);
                    self.deliver(assignment.into_iter().collect());
                }
                Action::Wait => live.waiting = true,
                Action::Return => self.finish_episode(),
            }
        }
    }

    fn start_next(&mut self) -> bool {
        let Some(&example) = self.order.get(self.next) else {
            self.finished = true;
            self.running = false;
            self.broker.set_paused(true);
            self.write_exports();
            return false;
        };
        let episode_id = self.next;
        self.next += 1;
        let ex = &self.options.dataset.examples[example];
        self.current = Some(LiveEpisode {
            episode: Episode::new(
                episode_id,
                ex.id,
                ex.input.clone(),
                &self.model,
                &self.env,
                self.options.config.utility,
            ),
            example,
            start: self.now(),
            rng: planner_rng(self.options.config.seed, episode_id),
            buffered: Vec::new(),
            waiting: false,
        });
        true
    }

    fn finish_episode(&mut self) {
        let live = self.current.take().expect("an episode is running");
        let id = live.episode.id();
        self.final_marginals
            .insert(id, marginals_view(&live.episode, &self.labels(), true));
        self.broker.close_episode(id);
        let example = &self.options.dataset.examples[live.example];
        let finished = live.episode.finish(
            self.options.config.policy,
            &self.options.dataset.label_set,
            &example.gold,
            self.version,
        );
        if let Some(target) = &finished.target {
            if self
                .model
                .adagrad_update_target(&example.input, target, &self.options.config.adagrad)
                .is_ok()
            {
                self.version += 1;
            }
        }
        let _ = write_jsonl(
            &mut self.episodes_out,
            std::slice::from_ref(&finished.record),
        );
        let _ = self.episodes_out.flush();
        self.records.push(finished.record);
        self.trajectory.extend(finished.events);
    }

    fn write_exports(&mut self) {
        let _ = self.episodes_out.flush();
        let labels = self.labels();
        let config = &self.options.config;
        let summary = compute_metrics(
            &self.records,
            &labels,
            background(config, &labels),
            config.window,
        );
        if let Err(e) = export_results(
            &self.records,
            &self.trajectory,
            &summary,
            &self.options.out_dir,
        ) {
            eprintln!("otj: export failed: {e}");
        }
    }

    fn status(&self) -> Value {
        let b = self.broker.status();
        json!({
            "v": PROTOCOL_VERSION,
            "running": self.running,
            "finished": self.finished,
            "episode": self.current.as_ref().map(|c| c.episode.id()),
            "episodes_done": self.records.len(),
            "total_episodes": self.order.len(),
            "pool_size": b.pool_size,
            "idle_workers": b.idle_workers,
            "queue_depth": b.queue_depth,
            "open_queries": b.open_queries,
            "answered": b.answered,
            "stale_answers": b.stale_answers,
            "timeouts": b.timeouts,
            "max_retries": b.max_retries,
            "cumulative_payment": b.total_payment,
        })
    }

    fn metrics(&self) -> Value {
        let labels = self.labels();
        let config = &self.options.config;
        let summary = compute_metrics(
            &self.records,
            &labels,
            background(config, &labels),
            config.window,
        );
        let mut v = serde_json::to_value(summary).expect("summary serializes");
        v["v"] = json!(PROTOCOL_VERSION);
        v
    }

    fn marginals(&self, episode: usize) -> Option<Value> {
        match &self.current {
            Some(live) if live.episode.id() == episode => {
                Some(marginals_view(&live.episode, &self.labels(), false))
            }
            _ => self.final_marginals.get(&episode).cloned(),
        }
    }
}

fn marginals_view(episode: &Episode, labels: &[String], finished: bool) -> Value {
    let posterior = episode.posterior();
    json!({
        "v": PROTOCOL_VERSION,
        "episode": episode.id(),
        "finished": finished,
        "tokens": episode.input().tokens(),
        "labels": labels,
        "marginals": posterior.marginals.to_rows(),
        "map": posterior.map_labels,
        "responses": episode.state().received().len(),
    })
}

async fn event_loop(
    mut live: Live,
    mut events: mpsc::UnboundedReceiver<Event>,
    mut stop: watch::Receiver<bool>,
) -> Live {
    let mut tick = tokio::time::interval(Duration::from_millis(250));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        tokio::select! {
            biased;
            _ = stop.changed() => break,
            event = events.recv() => match event {
                Some(event) => live.on_event(event),
                None => break,
            },
            _ = tick.tick() => live.on_tick(),
        }
    }
    if !live.finished {
        live.write_exports();
    }
    live.workers.clear();
    live
}

fn authorized(state: &AppState, headers: &HeaderMap, query: &HashMap<String, String>) -> bool {
    let bearer = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    bearer == Some(state.token.as_str()) || query.get("token") == Some(&state.token)
}

async fn ask<T>(state: &AppState, make: impl FnOnce(oneshot::Sender<T>) -> Event) -> Option<T> {
    let (tx, rx) = oneshot::channel();
    state.events.send(make(tx)).ok()?;
    rx.await.ok()
}

fn unauthorized() -> Response {
    (
        StatusCode::UNAUTHORIZED,
        Json(json!({"v": PROTOCOL_VERSION, "error": "missing or wrong token"})),
    )
        .into_response()
}

fn unavailable() -> Response {
    (
        StatusCode::SERVICE_UNAVAILABLE,
        Json(json!({"v": PROTOCOL_VERSION, "error": "server is shutting down"})),
    )
        .into_response()
}

macro_rules! operator_endpoint {
    ($name:ident, $variant:ident) => {
        async fn $name(
            State(state): State<AppState>,
            headers: HeaderMap,
            Query(query): Query<HashMap<String, String>>,
        ) -> Response {
            if !authorized(&state, &headers, &query) {
                return unauthorized();
            }
            match ask(&state, Event::$variant).await {
                Some(v) => Json(v).into_response(),
                None => unavailable(),
            }
        }
    };
}

operator_endpoint!(get_status, Status);
operator_endpoint!(get_metrics, Metrics);
operator_endpoint!(post_start, Start);
operator_endpoint!(post_stop, Stop);

async fn get_marginals(
    State(state): State<AppState>,
    UrlPath(episode): UrlPath<usize>,
    headers: HeaderMap,
    Query(query): Query<HashMap<String, String>>,
) -> Response {
    if !authorized(&state, &headers, &query) {
        return unauthorized();
    }
    match ask(&state, |tx| Event::Marginals(episode, tx)).await {
        Some(Some(v)) => Json(v).into_response(),
        Some(None) => (
            StatusCode::NOT_FOUND,
            Json(json!({"v": PROTOCOL_VERSION, "error": format!("no marginals for episode {episode}")})),
        )
            .into_response(),
        None => unavailable(),
    }
}

async fn ws_upgrade(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| worker_session(socket, state))
}

async fn refuse(mut socket: WebSocket, reason: &str) {
    let _ = socket
        .send(Message::Text(
            encode(ServerMessage::Error {
                reason: reason.into(),
            })
            .into(),
        ))
        .await;
    let _ = socket
        .send(Message::Close(Some(CloseFrame {
            code: 1008,
            reason: reason.into(),
        })))
        .await;
}

async fn worker_session(mut socket: WebSocket, state: AppState) {
    let first = tokio::time::timeout(Duration::from_secs(30), socket.recv()).await;
    let join = match first {
        Ok(Some(Ok(Message::Text(text)))) => decode(&text),
        _ => Err("expected a join message".to_owned()),
    };
    match join {
        Ok(ClientMessage::Join { token, .. }) if token == state.token => {}
        Ok(ClientMessage::Join { .. }) => return refuse(socket, "invalid token").await,
        Ok(_) => return refuse(socket, "expected a join message").await,
        Err(reason) => return refuse(socket, &reason).await,
    }

    let (tx, mut outbox) = mpsc::unbounded_channel();
    let Some(worker) = ask(&state, |reply| Event::Connected {
        tx: tx.clone(),
        reply,
    })
    .await
    else {
        return refuse(socket, "server is shutting down").await;
    };
    let (mut sink, mut stream) = socket.split();
    let mut stop = state.stop.clone();
    let writer = tokio::spawn(async move {
        while let Some(message) = outbox.recv().await {
            if sink
                .send(Message::Text(encode(message).into()))
                .await
                .is_err()
            {
                break;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });

    loop {
        let frame = tokio::select! {
            _ = stop.changed() => break,
            frame = stream.next() => frame,
        };
        match frame {
            Some(Ok(Message::Text(text))) => match decode(&text) {
                Ok(ClientMessage::Goodbye) => {
                    let _ = state.events.send(Event::FromWorker {
                        worker,
                        message: ClientMessage::Goodbye,
                    });
                    break;
                }
                Ok(message) => {
                    if state
                        .events
                        .send(Event::FromWorker { worker, message })
                        .is_err()
                    {
                        break;
                    }
                }
                Err(reason) => {
                    let _ = tx.send(ServerMessage::Error { reason });
                }
            },
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
            Some(Ok(_)) => {}
        }
    }
    let _ = state.events.send(Event::Disconnected { worker });
    drop(tx);
    let _ = tokio::time::timeout(Duration::from_secs(1), writer).await;
}

fn router(
    events: mpsc::UnboundedSender<Event>,
    token: String,
    stop: watch::Receiver<bool>,
) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/status", get(get_status))
        .route("/metrics", get(get_metrics))
        .route("/marginals/{episode}", get(get_marginals))
        .route("/stream/start", post(post_start))
        .route("/stream/stop", post(post_stop))
        .with_state(AppState {
            events,
            token,
            stop,
        })
}

pub async fn bind(host: &str, port: u16) -> Result<TcpListener, CliError> {
    let addr = format!("{host}:{port}");
    TcpListener::bind(&addr)
        .await
        .map_err(|source| CliError::Bind { addr, source })
}

/// Serves until `shutdown` resolves, then flushes and exports.
pub async fn run_server(
    listener: TcpListener,
    options: ServeOptions,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<ServeReport, CliError> {
    let autostart = options.autostart;
    let episodes_file = options.out_dir.join(EPISODES_FILE);
    let mut live = Live::new(options)?;
    if autostart {
        live.set_running(true);
    }
    let (events_tx, events_rx) = mpsc::unbounded_channel();
    let (stop_tx, stop_rx) = watch::channel(false);
    let app = router(events_tx, live.options.token.clone(), stop_rx.clone());
    let looper = tokio::spawn(event_loop(live, events_rx, stop_rx));
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = stop_tx.send(true);
        })
        .await
        .map_err(|e| CliError::Other(e.to_string()))?;
    let live = looper.await.map_err(|e| CliError::Other(e.to_string()))?;
    Ok(ServeReport {
        records: live.records,
        episodes_file,
    })
}

pub fn serve_options(args: &ServeArgs) -> Result<ServeOptions, CliError> {
    let dataset = load_data(&args.run)?;
    let config = resolve_config(&args.run)?;
    if !(args.deadline > 0.0) {
        return Err(CliError::Config("--deadline must be positive".into()));
    }
    Ok(ServeOptions {
        out_dir: output_dir(&config),
        config,
        dataset,
        token: args.token.clone(),
        deadline: args.deadline,
        autostart: args.autostart,
    })
}

pub fn serve_blocking(args: ServeArgs) -> Result<(), CliError> {
    let options = serve_options(&args)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    runtime.block_on(async move {
        let listener = bind(&args.host, args.port).await?;
        let addr: SocketAddr = listener
            .local_addr()
            .map_err(|e| CliError::Other(e.to_string()))?;
        eprintln!("otj: serving on http://{addr} (worker socket at /ws)");
        let report = run_server(listener, options, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        eprintln!(
            "otj: stopped after {} episodes; records in {}",
            report.records.len(),
            report.episodes_file.display()
        );
        Ok(())
    })
}
