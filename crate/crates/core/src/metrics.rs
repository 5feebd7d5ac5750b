//! Spike counts, synaptic operations and the analytic buffer-size model.
//!
//! The buffer model charges every delay layer `H * s` bits of neuron state
//! plus `C * d_max` bits of delay buffering, where the coefficient `C`
//! depends on the tying scheme and on whether buffers are per neuron
//! (unshared) or pooled across the layer (shared):
//!
//! | mechanism | unshared    | shared            |
//! |-----------|-------------|-------------------|
//! | synaptic  | `H^2 rho_n` | `m H^2 rho_p`     |
//! | axonal    | `H rho_n`   | `m H rho_p`       |
//! | dendritic | `v H rho_n` | `(v + m) H rho_p` |
//!
//! with `m = ceil(log2 H)` address bits unless overridden.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::DelayMechanism;
use crate::network::{ForwardRecord, Model};

/// Buffering strategy for delayed events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Buffering {
    /// One ring buffer per neuron (or per connection for synaptic delays).
    Unshared,
    /// One address-tagged queue per layer.
    Shared,
}

impl Buffering {
    pub const ALL: [Buffering; 2] = [Buffering::Unshared, Buffering::Shared];

    pub fn name(self) -> &'static str {
        match self {
            Buffering::Unshared => "unshared",
            Buffering::Shared => "shared",
        }
    }
}

impl fmt::Display for Buffering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Buffering {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unshared" => Ok(Self::Unshared),
            "shared" => Ok(Self::Shared),
            other => Err(format!("unknown buffering strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferModelInputs {
    pub layers: usize,
    pub hidden: usize,
    pub d_max: usize,
    pub mechanism: DelayMechanism,
    pub strategy: Buffering,
    /// Neuron-state bits.
    pub s: u32,
    /// Weight-value bits.
    pub v: u32,
    /// Address bits; `None` means `ceil(log2 H)`.
    pub m: Option<u32>,
    pub rho_n: f64,
    pub rho_p: f64,
}

impl BufferModelInputs {
    pub fn new(layers: usize, hidden: usize, d_max: usize, mechanism: DelayMechanism, strategy: Buffering) -> Self {
        Self {
            layers,
            hidden,
            d_max,
            mechanism,
            strategy,
            s: 16,
            v: 16,
            m: None,
            rho_n: 1.0,
            rho_p: 0.2,
        }
    }
}

/// `ceil(log2 n)` for `n >= 1`.
pub fn address_bits(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Effective buffering coefficient for a `pre -> post` layer.
///
/// Source-addressed mechanisms (synaptic, axonal) size addresses by `pre`;
/// the dendritic mechanism addresses targets and uses `post`.
pub fn buffering_coefficient(pre: usize, post: usize, inp: &BufferModelInputs) -> f64 {
    let (pre_f, post_f) = (pre as f64, post as f64);
    let v = inp.v as f64;
    let m = |n: usize| inp.m.unwrap_or_else(|| address_bits(n)) as f64;
    match (inp.mechanism, inp.strategy) {
        (DelayMechanism::None, _) => 0.0,
        (DelayMechanism::Synaptic, Buffering::Unshared) => pre_f * post_f * inp.rho_n,
        (DelayMechanism::Synaptic, Buffering::Shared) => m(pre) * pre_f * post_f * inp.rho_p,
        (DelayMechanism::Axonal, Buffering::Unshared) => pre_f * inp.rho_n,
        (DelayMechanism::Axonal, Buffering::Shared) => m(pre) * pre_f * inp.rho_p,
        (DelayMechanism::Dendritic, Buffering::Unshared) => v * post_f * inp.rho_n,
        (DelayMechanism::Dendritic, Buffering::Shared) => (v + m(post)) * post_f * inp.rho_p,
    }
}

/// Bits of one layer: state term plus delay-buffer term, rounded up.
pub fn layer_buffer_bits(pre: usize, post: usize, inp: &BufferModelInputs) -> u64 {
    let bits = (post as f64) * inp.s as f64 + buffering_coefficient(pre, post, inp) * inp.d_max as f64;
    // Guards against 13824.000000000002 rounding up to 13825.
    (bits - 1e-9).ceil().max(0.0) as u64
}

/// Buffer size in bits of `L` uniform layers of width `H`.
pub fn buffer_bits(inp: &BufferModelInputs) -> u64 {
    (0..inp.layers).map(|_| layer_buffer_bits(inp.hidden, inp.hidden, inp)).sum()
}

/// Buffer size for an explicit topology of `(pre, post)` layer widths.
pub fn topology_buffer_bits(widths: &[(usize, usize)], inp: &BufferModelInputs) -> u64 {
    widths.iter().map(|&(pre, post)| layer_buffer_bits(pre, post, inp)).sum()
}

/// Buffer size of a model's own topology; the first layer's presynaptic
/// width is the input channel count.
pub fn model_buffer_bits(model: &Model, strategy: Buffering, base: &BufferModelInputs) -> u64 {
    let inp = BufferModelInputs {
        mechanism: model.mechanism(),
        strategy,
        d_max: model.config.d_max,
        ..*base
    };
    topology_buffer_bits(&model.config.layer_widths(), &inp)
}

/// Hidden-layer spikes in a record; the readout does not spike.
pub fn count_spikes(record: &ForwardRecord) -> u64 {
    record.total_spikes().round() as u64
}

/// Spikes times the unmasked fan-out each one traverses: into the next hidden
/// layer, or into the readout for the last hidden layer.
pub fn count_sops(record: &ForwardRecord, model: &Model) -> u64 {
    let classes = model.config.classes as u64;
    let mut total = 0u64;
    for (l, spikes) in record.spikes.iter().enumerate() {
        let fanout: Vec<u64> = match model.layers.get(l + 1) {
            Some(next) => next.fanout().into_iter().map(|f| f as u64).collect(),
            None => vec![classes; model.config.hidden],
        };
        for row in spikes.rows() {
            for (j, &s) in row.iter().enumerate() {
                if s != 0.0 {
                    total += fanout[j];
                }
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total_spikes: u64,
    pub sops: u64,
    pub buffer_bits: u64,
    pub accuracy: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "total_spikes,sops,buffer_bits,accuracy";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.total_spikes, self.sops, self.buffer_bits, self.accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Bundles spikes, SOPs, buffer bits and accuracy for one evaluated batch.
pub fn report(
    record: &ForwardRecord,
    model: &Model,
    buffer: &BufferModelInputs,
    labels: &[usize],
) -> MetricsReport {
    let correct = record
        .logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    MetricsReport {
        total_spikes: count_spikes(record),
        sops: count_sops(record, model),
        buffer_bits: model_buffer_bits(model, buffer.strategy, buffer),
        accuracy: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
    }
}

/// Index of the first maximum.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
