use thiserror::Error;

/// Faults raised by the library. Configuration violations are reported as
/// data by [`crate::config::validate_config`] and only become an [`Error`]
/// when a caller insists on a valid config.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite input current at neuron {neuron}")]
    NonFiniteCurrent { neuron: usize },

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite logits")]
    NonFiniteLogits,

    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("cannot fold batch norm: channel {channel} of layer {layer} has zero variance")]
    ZeroVariance { layer: usize, channel: usize },

    #[error("queue overflow in layer {layer} at step {step}: capacity {capacity}")]
    QueueOverflow {
        layer: usize,
        step: usize,
        capacity: usize,
    },

    #[error("malformed event file at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint parse error: {0}")]
    Checkpoint(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::Shape {
        context: context.to_string(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
