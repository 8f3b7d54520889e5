//! Conditional flow matching with condition-aware reparameterization of the
//! source and target distributions, plus the tooling to train, sample,
//! evaluate and diagnose mode collapse on small synthetic problems.

pub mod checkpoint;
pub mod collapse;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod net;
pub mod objective;
pub mod optim;
pub mod params;
pub mod plot;
pub mod reparam;
pub mod runner;
pub mod sampler;
pub mod schedule;
pub mod suite;

pub use error::{Error, Result};
pub use config::ExperimentConfig;
pub use exec::Exec;
pub use model::Model;
pub use reparam::CarVariant;
pub use schedule::Schedule;
