//! Deep feedforward spiking networks with learnable transmission delays.

pub mod config;
pub mod data;
pub mod delays;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod network;
pub mod neuron;
pub mod rng;
pub mod spikes;
pub mod train;

pub use config::{Config, DelayMechanism, ModelConfig, RegConfig, SchedulerKind, TrainConfig};
pub use error::{Error, Result};
pub use rng::{seeded_rng, SeededRng};
pub use spikes::SpikeTrain;
