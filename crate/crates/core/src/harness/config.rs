use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::crf::AdaGradConfig;
use crate::environment::{LatencyModel, ResponseModel};
use crate::error::HarnessError;
use crate::game::UtilityParams;
use crate::policy::{Policy, PolicyConfig, PolicyKind, ThresholdConfig};

/// Everything needed to reproduce a streaming run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub policy: PolicyKind,
    pub utility: UtilityParams,
    pub accuracy: f64,
    pub latency_mean: f64,
    pub latency_std_dev: f64,
    pub latency_floor: f64,
    pub adagrad: AdaGradConfig,
    pub mcts: PolicyConfig,
    pub threshold: ThresholdConfig,
    pub seed: u64,
    /// `None` keeps dataset order.
    pub shuffle_seed: Option<u64>,
    pub window: usize,
    pub background: String,
    pub pool_fallback: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Lense,
            utility: UtilityParams::default(),
            accuracy: ResponseModel::DEFAULT_ACCURACY,
            latency_mean: LatencyModel::DEFAULT_MEAN,
            latency_std_dev: LatencyModel::DEFAULT_STD_DEV,
            latency_floor: LatencyModel::DEFAULT_FLOOR,
            adagrad: AdaGradConfig::default(),
            mcts: PolicyConfig::default(),
            threshold: ThresholdConfig::default(),
            seed: 0,
            shuffle_seed: None,
            window: 50,
            background: "NONE".to_owned(),
            pool_fallback: false,
            output_dir: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "policy",
    "seed",
    "stream.shuffle_seed",
    "utility.cost_per_query",
    "utility.cost_per_second",
    "env.accuracy",
    "env.latency_mean",
    "env.latency_std_dev",
    "env.latency_floor",
    "crf.step_size",
    "crf.l2",
    "mcts.budget",
    "mcts.c",
    "mcts.max_depth",
    "mcts.widening",
    "mcts.max_queries_per_position",
    "threshold.target",
    "threshold.factor",
    "metrics.window",
    "metrics.background",
    "pool.fallback",
    "output",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn policy(&self) -> Policy {
        Policy {
            kind: self.policy,
            mcts: self.mcts,
            threshold: self.threshold,
        }
    }

    pub fn response_model(&self, num_labels: usize) -> Result<ResponseModel, HarnessError> {
        Ok(ResponseModel::new(self.accuracy, num_labels)?)
    }

    pub fn latency_model(&self) -> Result<LatencyModel, HarnessError> {
        Ok(LatencyModel::new(
            self.latency_mean,
            self.latency_std_dev,
            self.latency_floor,
        )?)
    }

    /// Sets one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let value = value.trim();
        match key.trim() {
            "policy" => self.policy = value.parse().map_err(HarnessError::Config)?,
            "seed" => self.seed = parse(key, value)?,
            "stream.shuffle_seed" => {
                self.shuffle_seed = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "utility.cost_per_query" => self.utility.cost_per_query = parse(key, value)?,
            "utility.cost_per_second" => self.utility.cost_per_second = parse(key, value)?,
            "env.accuracy" => self.accuracy = parse(key, value)?,
            "env.latency_mean" => self.latency_mean = parse(key, value)?,
            "env.latency_std_dev" => self.latency_std_dev = parse(key, value)?,
            "env.latency_floor" => self.latency_floor = parse(key, value)?,
            "crf.step_size" => self.adagrad.step_size = parse(key, value)?,
            "crf.l2" => self.adagrad.l2 = parse(key, value)?,
            "mcts.budget" => self.mcts.rollout_budget = parse(key, value)?,
            "mcts.c" => self.mcts.uct_constant = parse(key, value)?,
            "mcts.max_depth" => self.mcts.max_depth = parse(key, value)?,
            "mcts.widening" => self.mcts.widening = parse(key, value)?,
            "mcts.max_queries_per_position" => {
                self.mcts.max_queries_per_position = parse(key, value)?
            }
            "threshold.target" => self.threshold.confidence_target = parse(key, value)?,
            "threshold.factor" => self.threshold.uncertainty_factor = parse(key, value)?,
            "metrics.window" => self.window = parse(key, value)?,
            "metrics.background" => self.background = value.to_owned(),
            "pool.fallback" => self.pool_fallback = parse(key, value)?,
            "output" => self.output_dir = Some(PathBuf::from(value)),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Applies a flat `key = value` document; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), HarnessError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            self.set(key, value)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config = Self::default();
        config.apply_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if !(self.utility.cost_per_query >= 0.0 && self.utility.cost_per_second >= 0.0) {
            return bad("utility costs must be non-negative".into());
        }
        ResponseModel::new(self.accuracy, 2)?;
        self.latency_model()?;
        if !(self.adagrad.step_size > 0.0 && self.adagrad.l2 >= 0.0) {
            return bad("crf.step_size must be positive and crf.l2 non-negative".into());
        }
        if self.mcts.rollout_budget == 0 || !(self.mcts.uct_constant >= 0.0) {
            return bad("mcts.budget must be >= 1 and mcts.c >= 0".into());
        }
        if self.mcts.max_queries_per_position == 0 {
            return bad("mcts.max_queries_per_position must be >= 1".into());
        }
        let t = &self.threshold;
        if !(t.confidence_target > 0.0 && t.confidence_target < 1.0) {
            return bad("threshold.target must lie in (0, 1)".into());
        }
        if !(t.uncertainty_factor > 0.0 && t.uncertainty_factor < 1.0) {
            return bad("threshold.factor must lie in (0, 1)".into());
        }
        if self.window == 0 {
            return bad("metrics.window must be >= 1".into());
        }
        Ok(())
    }

    /// Flat `key = value` rendering; parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("policy", self.policy.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "stream.shuffle_seed",
            self.shuffle_seed.map_or("none".into(), |v| v.to_string()),
        );
        kv(
            "utility.cost_per_query",
            self.utility.cost_per_query.to_string(),
        );
        kv(
            "utility.cost_per_second",
            self.utility.cost_per_second.to_string(),
        );
        kv("env.accuracy", self.accuracy.to_string());
        kv("env.latency_mean", self.latency_mean.to_string());
        kv("env.latency_std_dev", self.latency_std_dev.to_string());
        kv("env.latency_floor", self.latency_floor.to_string());
        kv("crf.step_size", self.adagrad.step_size.to_string());
        kv("crf.l2", self.adagrad.l2.to_string());
        kv("mcts.budget", self.mcts.rollout_budget.to_string());
        kv("mcts.c", self.mcts.uct_constant.to_string());
        kv("mcts.max_depth", self.mcts.max_depth.to_string());
        kv("mcts.widening", self.mcts.widening.to_string());
        kv(
            "mcts.max_queries_per_position",
            self.mcts.max_queries_per_position.to_string(),
        );
        kv(
            "threshold.target",
            self.threshold.confidence_target.to_string(),
        );
        kv(
            "threshold.factor",
            self.threshold.uncertainty_factor.to_string(),
        );
        kv("metrics.window", self.window.to_string());
        kv("metrics.background", self.background.clone());
        kv("pool.fallback", self.pool_fallback.to_string());
        if let Some(out) = &self.output_dir {
            kv("output", out.display().to_string());
        }
        s
    }
}
