//! Event-driven inference with integer delays.
//!
//! [`compile`] turns a trained [`Model`] into an [`EventModel`]: delays are
//! rounded, batch norm is folded into weights and biases, and masked
//! connections are dropped from the adjacency lists. [`run`] then simulates
//! one input stream step by step, routing spikes through either per-neuron
//! ring buffers ([`Buffering::Unshared`]) or one calendar queue per layer
//! ([`Buffering::Shared`]).
//!
//! Within a step, layers are processed in order. Each layer first pushes the
//! spikes its source population emitted this step, then delivers every event
//! that is due, then updates its neurons. A delay of zero therefore reaches
//! its target in the same step, as in the dense formulation. Occupancy is
//! sampled after delivery, so it counts only events held for a later step.
//!
//! Currents are accumulated over sources in ascending index order, both here
//! and in [`EventModel::dense_forward`], so the two agree bit for bit.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::DelayMechanism;
use crate::delays::discretize;
use crate::error::{shape_err, Error, Result};
use crate::metrics::Buffering;
use crate::network::{Model, BN_EPS};
use crate::neuron::{lif_step, readout_integrate, LifParams, LifState, SpikeMode};
use crate::spikes::SpikeTrain;

/// One hidden layer ready for event-driven execution.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLayer {
    /// `None` layers run with every delay at zero.
    pub mechanism: DelayMechanism,
    pub pre: usize,
    pub post: usize,
    /// Ring length; 1 for delay-free layers.
    pub slots: usize,
    /// Integer delays in the tying layout of `mechanism`.
    pub delays: Vec<usize>,
    /// Batch-norm-folded weights, `post x pre`, zero where masked.
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
    /// Unmasked outgoing edges `(target, weight)` of every source, by target.
    pub fanout: Vec<Vec<(usize, f64)>>,
}

impl EventLayer {
    /// Delay of the connection `pre_j -> post_i`.
    pub fn delay(&self, i: usize, j: usize) -> usize {
        match self.mechanism {
            DelayMechanism::Synaptic => self.delays[i * self.pre + j],
            DelayMechanism::Axonal => self.delays[j],
            DelayMechanism::Dendritic => self.delays[i],
            DelayMechanism::None => 0,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.fanout.iter().map(Vec::len).sum()
    }

    /// Largest number of events the layer can hold at once.
    pub fn worst_case_entries(&self) -> usize {
        let per_step = match self.mechanism {
            DelayMechanism::Synaptic => self.edge_count(),
            DelayMechanism::Axonal | DelayMechanism::None => self.pre,
            DelayMechanism::Dendritic => self.post,
        };
        per_step * self.slots
    }
}

/// Inference-ready network.
#[derive(Debug, Clone, PartialEq)]
pub struct EventModel {
    pub input_channels: usize,
    pub classes: usize,
    pub d_max: usize,
    pub lif: LifParams,
    pub readout_beta: f64,
    pub layers: Vec<EventLayer>,
    /// `classes x hidden`.
    pub readout_weights: Array2<f64>,
    pub readout_bias: Vec<f64>,
}

/// Rounds delays, folds batch norm and builds adjacency lists.
pub fn compile(model: &Model) -> Result<EventModel> {
    let cfg = &model.config;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let (scale, bias) = match &layer.bn {
            None => (vec![1.0; layer.post], vec![0.0; layer.post]),
            Some(bn) => {
                if let Some(channel) = bn.running_var.iter().position(|&v| v == 0.0) {
                    return Err(Error::ZeroVariance { layer: l, channel });
                }
                let scale: Vec<f64> = (0..layer.post)
                    .map(|c| bn.gamma[c] / (bn.running_var[c] + BN_EPS).sqrt())
                    .collect();
                let bias = (0..layer.post)
                    .map(|c| bn.beta[c] - scale[c] * bn.running_mean[c])
                    .collect();
                (scale, bias)
            }
        };
        let mut weights = layer.weights.clone();
        for (i, mut row) in weights.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|w| w * scale[i]);
        }
        weights.zip_mut_with(&layer.weight_mask, |w, &m| {
            if m == 0.0 {
                *w = 0.0;
            }
        });
        let fanout = (0..layer.pre)
            .map(|j| {
                (0..layer.post)
                    .filter(|&i| layer.weight_mask[[i, j]] != 0.0)
                    .map(|i| (i, weights[[i, j]]))
                    .collect()
            })
            .collect();
        let (mechanism, delays, slots) = match &layer.delays {
            Some(d) => (d.mechanism, discretize(d), cfg.d_max),
            None => (DelayMechanism::None, Vec::new(), 1),
        };
        layers.push(EventLayer {
            mechanism,
            pre: layer.pre,
            post: layer.post,
            slots,
            delays,
            weights,
            bias,
            fanout,
        });
    }
    Ok(EventModel {
        input_channels: cfg.input_channels,
        classes: cfg.classes,
        d_max: cfg.d_max,
        lif: model.lif_params(),
        readout_beta: cfg.readout_decay(),
        layers,
        readout_weights: model.readout.weights.clone(),
        readout_bias: model.readout.bias.to_vec(),
    })
}

/// Output of the dense reference evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseRun {
    pub spikes: Vec<SpikeTrain>,
    /// LIF input currents per layer, `[t * post + i]`.
    pub currents: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Output of an event-driven run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineRun {
    pub spikes: Vec<SpikeTrain>,
    pub logits: Vec<f64>,
    pub occupancy: Vec<LayerOccupancy>,
}

/// Buffer usage of one layer over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOccupancy {
    pub strategy: Buffering,
    pub mechanism: DelayMechanism,
    /// Neurons in the layer's spiking (source) population.
    pub neurons: usize,
    pub slots: usize,
    /// Occupied slots or queue entries carried past each step, i.e. after
    /// that step's pushes and deliveries.
    pub per_step: Vec<usize>,
    /// Spikes the layer emitted at each step.
    pub emitted: Vec<usize>,
}

impl EventModel {
    fn check_input(&self, x: &SpikeTrain) -> Result<()> {
        if x.channels() != self.input_channels {
            return Err(shape_err("event engine input", self.input_channels, x.channels()));
        }
        Ok(())
    }

    fn readout(&self, last: &SpikeTrain) -> Vec<f64> {
        let steps = last.steps();
        let mut currents = vec![0.0; steps * self.classes];
        for t in 0..steps {
            let row = last.step(t);
            for c in 0..self.classes {
                let mut acc = 0.0;
                for (j, &s) in row.iter().enumerate() {
                    if s != 0 {
                        acc += self.readout_weights[[c, j]];
                    }
                }
                currents[t * self.classes + c] = acc + self.readout_bias[c];
            }
        }
        readout_integrate(&currents, steps, self.classes, self.readout_beta).logits
    }

    /// Time-domain reference: one-hot delay kernels written as explicit
    /// shifts, evaluated layer by layer over the whole sequence.
    pub fn dense_forward(&self, x: &SpikeTrain) -> Result<DenseRun> {
        self.check_input(x)?;
        let steps = x.steps();
        let mut input = x.clone();
        let mut spikes = Vec::with_capacity(self.layers.len());
        let mut currents = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut cur = vec![0.0; steps * layer.post];
            if layer.mechanism == DelayMechanism::Dendritic {
                let mut mixed = vec![0.0; steps * layer.post];
                for t in 0..steps {
                    let row = input.step(t);
                    for i in 0..layer.post {
                        let mut acc = 0.0;
                        for (j, &s) in row.iter().enumerate() {
                            if s != 0 {
                                acc += layer.weights[[i, j]];
                            }
                        }
                        mixed[t * layer.post + i] = acc;
                    }
                }
                for t in 0..steps {
                    for i in 0..layer.post {
                        let d = layer.delays[i];
                        let z = if t >= d { mixed[(t - d) * layer.post + i] } else { 0.0 };
                        cur[t * layer.post + i] = z + layer.bias[i];
                    }
                }
            } else {
                for t in 0..steps {
                    for i in 0..layer.post {
                        let mut acc = 0.0;
                        for j in 0..layer.pre {
                            let d = layer.delay(i, j);
                            if t >= d && input.get(t - d, j) {
                                acc += layer.weights[[i, j]];
                            }
                        }
                        cur[t * layer.post + i] = acc + layer.bias[i];
                    }
                }
            }
            let mut state = LifState::new(layer.post);
            let mut out = SpikeTrain::silent(steps, layer.post)?;
            for t in 0..steps {
                let s = lif_step(&mut state, &cur[t * layer.post..(t + 1) * layer.post], self.lif, SpikeMode::Hard)?;
                for (i, &v) in s.iter().enumerate() {
                    out.set(t, i, v != 0.0);
                }
            }
            currents.push(cur);
            spikes.push(out.clone());
            input = out;
        }
        let logits = self.readout(&input);
        Ok(DenseRun {
            spikes,
            currents,
            logits,
        })
    }
}

/// Engine settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    pub strategy: Buffering,
    /// Shared-queue capacity per layer; the analytic worst case when `None`.
    pub capacity: Option<usize>,
}

impl EngineOptions {
    pub fn new(strategy: Buffering) -> Self {
        Self { strategy, capacity: None }
    }
}

/// One queued event in a shared calendar queue.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    /// Source neuron (axonal, synaptic) or target neuron (dendritic).
    address: usize,
    /// Index into the source's fan-out list (synaptic only).
    edge: usize,
    /// Accumulated weighted input (dendritic only).
    value: f64,
}

#[derive(Debug, Clone)]
enum Buffers {
    /// One bit-ring per source neuron.
    Axonal(Vec<Vec<bool>>),
    /// One bit-ring per outgoing edge of every source neuron.
    Synaptic(Vec<Vec<Vec<bool>>>),
    /// One ring of accumulated values per target neuron.
    Dendritic(Vec<Vec<Option<f64>>>),
    /// Calendar queue: bucket `due mod slots`.
    Shared {
        buckets: Vec<Vec<Entry>>,
        len: usize,
        capacity: usize,
    },
}

impl Buffers {
    fn new(layer: &EventLayer, opts: EngineOptions) -> Self {
        let n = layer.slots;
        match (opts.strategy, layer.mechanism) {
            (Buffering::Shared, _) => Buffers::Shared {
                buckets: vec![Vec::new(); n],
                len: 0,
                capacity: opts.capacity.unwrap_or_else(|| layer.worst_case_entries()),
            },
            (Buffering::Unshared, DelayMechanism::Synaptic) => Buffers::Synaptic(
                layer.fanout.iter().map(|edges| vec![vec![false; n]; edges.len()]).collect(),
            ),
            (Buffering::Unshared, DelayMechanism::Dendritic) => {
                Buffers::Dendritic(vec![vec![None; n]; layer.post])
            }
            (Buffering::Unshared, _) => Buffers::Axonal(vec![vec![false; n]; layer.pre]),
        }
    }

    fn occupied(&self) -> usize {
        match self {
            Buffers::Axonal(r) => r.iter().flatten().filter(|&&b| b).count(),
            Buffers::Synaptic(r) => r.iter().flatten().flatten().filter(|&&b| b).count(),
            Buffers::Dendritic(r) => r.iter().flatten().filter(|v| v.is_some()).count(),
            Buffers::Shared { len, .. } => *len,
        }
    }
}

fn push_shared(
    buckets: &mut [Vec<Entry>],
    len: &mut usize,
    capacity: usize,
    due: usize,
    entry: Entry,
    layer: usize,
    step: usize,
) -> Result<()> {
    if *len >= capacity {
        return Err(Error::QueueOverflow { layer, step, capacity });
    }
    let n = buckets.len();
    buckets[due % n].push(entry);
    *len += 1;
    Ok(())
}

/// Pushes the spikes of `src` emitted at step `t` into the layer's buffers.
fn push(layer: &EventLayer, buf: &mut Buffers, src: &[u8], t: usize, l: usize) -> Result<()> {
    let n = layer.slots;
    match buf {
        Buffers::Axonal(rings) => {
            for (j, &s) in src.iter().enumerate() {
                if s != 0 {
                    let d = layer.delay(0, j);
                    debug_assert_eq!(rings[j].len(), n);
                    rings[j][(t + d) % n] = true;
                }
            }
        }
        Buffers::Synaptic(rings) => {
            for (j, &s) in src.iter().enumerate() {
                if s != 0 {
                    for (e, &(i, _)) in layer.fanout[j].iter().enumerate() {
                        rings[j][e][(t + layer.delay(i, j)) % n] = true;
                    }
                }
            }
        }
        Buffers::Dendritic(rings) => {
            let sums = mix(layer, src);
            for (i, z) in sums.into_iter().enumerate() {
                if let Some(z) = z {
                    let slot = &mut rings[i][(t + layer.delays[i]) % n];
                    debug_assert!(slot.is_none());
                    *slot = Some(z);
                }
            }
        }
        Buffers::Shared { buckets, len, capacity } => match layer.mechanism {
            DelayMechanism::Dendritic => {
                for (i, z) in mix(layer, src).into_iter().enumerate() {
                    if let Some(value) = z {
                        let entry = Entry { address: i, edge: 0, value };
                        push_shared(buckets, len, *capacity, t + layer.delays[i], entry, l, t)?;
                    }
                }
            }
            DelayMechanism::Synaptic => {
                for (j, &s) in src.iter().enumerate() {
                    if s != 0 {
                        for (e, &(i, _)) in layer.fanout[j].iter().enumerate() {
                            let entry = Entry { address: j, edge: e, value: 0.0 };
                            push_shared(buckets, len, *capacity, t + layer.delay(i, j), entry, l, t)?;
                        }
                    }
                }
            }
            DelayMechanism::Axonal | DelayMechanism::None => {
                for (j, &s) in src.iter().enumerate() {
                    if s != 0 {
                        let entry = Entry { address: j, edge: 0, value: 0.0 };
                        push_shared(buckets, len, *capacity, t + layer.delay(0, j), entry, l, t)?;
                    }
                }
            }
        },
    }
    Ok(())
}

/// Weighted sum per target over the spiking sources; `None` when no source
/// with an edge to the target spiked.
fn mix(layer: &EventLayer, src: &[u8]) -> Vec<Option<f64>> {
    let mut sums: Vec<Option<f64>> = vec![None; layer.post];
    for (j, &s) in src.iter().enumerate() {
        if s != 0 {
            for &(i, w) in &layer.fanout[j] {
                *sums[i].get_or_insert(0.0) += w;
            }
        }
    }
    sums
}

/// Delivers every event due at step `t` into `current` (pre-bias).
fn deliver(layer: &EventLayer, buf: &mut Buffers, t: usize, current: &mut [f64]) {
    let n = layer.slots;
    let slot = t % n;
    match buf {
        Buffers::Axonal(rings) => {
            for (j, ring) in rings.iter_mut().enumerate() {
                if std::mem::take(&mut ring[slot]) {
                    for &(i, w) in &layer.fanout[j] {
                        current[i] += w;
                    }
                }
            }
        }
        Buffers::Synaptic(rings) => {
            for (j, edges) in rings.iter_mut().enumerate() {
                for (e, ring) in edges.iter_mut().enumerate() {
                    if std::mem::take(&mut ring[slot]) {
                        let (i, w) = layer.fanout[j][e];
                        current[i] += w;
                    }
                }
            }
        }
        Buffers::Dendritic(rings) => {
            for (i, ring) in rings.iter_mut().enumerate() {
                if let Some(z) = ring[slot].take() {
                    current[i] += z;
                }
            }
        }
        Buffers::Shared { buckets, len, .. } => {
            let mut due = std::mem::take(&mut buckets[slot]);
            *len -= due.len();
            due.sort_by_key(|e| (e.address, e.edge));
            for e in due {
                match layer.mechanism {
                    DelayMechanism::Dendritic => current[e.address] += e.value,
                    DelayMechanism::Synaptic => {
                        let (i, w) = layer.fanout[e.address][e.edge];
                        current[i] += w;
                    }
                    DelayMechanism::Axonal | DelayMechanism::None => {
                        for &(i, w) in &layer.fanout[e.address] {
                            current[i] += w;
                        }
                    }
                }
            }
        }
    }
}

/// Simulates one input stream through the compiled network.
pub fn run(em: &EventModel, x: &SpikeTrain, opts: EngineOptions) -> Result<EngineRun> {
    em.check_input(x)?;
    let steps = x.steps();
    let mut buffers: Vec<Buffers> = em.layers.iter().map(|l| Buffers::new(l, opts)).collect();
    let mut states: Vec<LifState> = em.layers.iter().map(|l| LifState::new(l.post)).collect();
    let mut spikes = em
        .layers
        .iter()
        .map(|l| SpikeTrain::silent(steps, l.post))
        .collect::<Result<Vec<_>>>()?;
    let mut occupancy: Vec<LayerOccupancy> = em
        .layers
        .iter()
        .map(|l| LayerOccupancy {
            strategy: opts.strategy,
            mechanism: l.mechanism,
            neurons: l.pre,
            slots: l.slots,
            per_step: Vec::with_capacity(steps),
            emitted: Vec::with_capacity(steps),
        })
        .collect();

    for t in 0..steps {
        for (l, layer) in em.layers.iter().enumerate() {
            let src: Vec<u8> = if l == 0 { x.step(t).to_vec() } else { spikes[l - 1].step(t).to_vec() };
            push(layer, &mut buffers[l], &src, t, l)?;
            let mut current = vec![0.0; layer.post];
            deliver(layer, &mut buffers[l], t, &mut current);
            let occ = &mut occupancy[l];
            occ.per_step.push(buffers[l].occupied());
            occ.emitted.push(src.iter().map(|&s| s as usize).sum());

            for (c, b) in current.iter_mut().zip(&layer.bias) {
                *c += b;
            }
            let out = lif_step(&mut states[l], &current, em.lif, SpikeMode::Hard)?;
            for (i, &s) in out.iter().enumerate() {
                spikes[l].set(t, i, s != 0.0);
            }
        }
    }
    let logits = match spikes.last() {
        Some(last) => em.readout(last),
        None => em.readout(x),
    };
    Ok(EngineRun {
        spikes,
        logits,
        occupancy,
    })
}

/// Aggregated buffer usage of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySummary {
    pub layer: usize,
    pub strategy: Buffering,
    pub mechanism: DelayMechanism,
    pub peak: usize,
    pub mean: f64,
    /// Source spikes per step divided by the source population size,
    /// averaged over the run.
    pub rho_per_step: f64,
    /// Largest count of source spikes in any window of `d_max` steps,
    /// divided by `d_max` and the population size.
    pub rho_window_peak: f64,
}

impl OccupancySummary {
    pub const CSV_HEADER: &'static str =
        "layer,strategy,mechanism,peak,mean,rho_per_step,rho_window_peak";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.layer,
            self.strategy,
            self.mechanism,
            self.peak,
            self.mean,
            self.rho_per_step,
            self.rho_window_peak
        )
    }
}

/// Per-layer peak and mean occupancy and the empirical population rate.
pub fn occupancy_report(occupancy: &[LayerOccupancy]) -> Vec<OccupancySummary> {
    occupancy
        .iter()
        .enumerate()
        .map(|(layer, o)| {
            let steps = o.per_step.len();
            let peak = o.per_step.iter().copied().max().unwrap_or(0);
            let mean = if steps == 0 {
                0.0
            } else {
                o.per_step.iter().sum::<usize>() as f64 / steps as f64
            };
            let h = o.neurons.max(1) as f64;
            let total: usize = o.emitted.iter().sum();
            let rho_per_step = if steps == 0 { 0.0 } else { total as f64 / (steps as f64 * h) };
            let w = o.slots.max(1);
            let mut best = 0usize;
            let mut acc = 0usize;
            for (t, &e) in o.emitted.iter().enumerate() {
                acc += e;
                if t >= w {
                    acc -= o.emitted[t - w];
                }
                best = best.max(acc);
            }
            OccupancySummary {
                layer,
                strategy: o.strategy,
                mechanism: o.mechanism,
                peak,
                mean,
                rho_per_step,
                rho_window_peak: best as f64 / (w as f64 * h),
            }
        })
        .collect()
}
