//! On-the-job learning engine.
//!
//! A structured predictor that asks a (simulated or live) crowd about
//! individual output positions while it is still uncertain, chooses between
//! querying, waiting and answering by tree search over a stochastic game,
//! and learns online from the answers it collects.

pub mod crf;
pub mod environment;
pub mod error;
pub mod game;
pub mod harness;
pub mod policy;
pub mod service;

pub use error::{BrokerError, CrfError, EnvError, GameError, HarnessError};
