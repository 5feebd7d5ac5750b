//! Layer assembly, forward pass and backpropagation through time.
//!
//! A hidden layer is `delay -> masked linear -> batch norm -> LIF -> dropout`
//! for synaptic, axonal and delay-free layers. Dendritic layers mix first and
//! delay each target channel afterwards; since all inputs of a target share
//! one delay, this equals delaying every input before mixing.
//!
//! The readout is a dense linear layer followed by a leaky integrator whose
//! time-averaged potential gives the logits.
//!
//! All activations are time-major `(steps, batch, channels)`.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::config::{DelayMechanism, ModelConfig};
use crate::delays::{
    clamp_delays, delay_count, depthwise_conv, depthwise_conv_backward, synaptic_conv,
    synaptic_conv_backward, to_matrix, DelayParameterSet, KernelBank,
};
use crate::error::{shape_err, Error, Result};
use crate::neuron::{lif_backward, lif_forward, readout_backward, readout_integrate, LifParams, LifTrace, SpikeMode};
use crate::rng::SeededRng;
use crate::spikes::SpikeTrain;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Checkpoint layout version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParameters {
    pub pre: usize,
    pub post: usize,
    /// `post x pre`; masked entries are exactly zero.
    pub weights: Array2<f64>,
    /// 1.0 keeps a connection, 0.0 removes it.
    pub weight_mask: Array2<f64>,
    pub bn: Option<BatchNorm>,
    pub delays: Option<DelayParameterSet>,
}

impl LayerParameters {
    pub fn mechanism(&self) -> DelayMechanism {
        self.delays.as_ref().map_or(DelayMechanism::None, |d| d.mechanism)
    }

    pub fn reapply_mask(&mut self) {
        self.weights.zip_mut_with(&self.weight_mask, |w, &m| *w *= m);
    }

    /// Number of unmasked outgoing connections of each source neuron.
    pub fn fanout(&self) -> Vec<usize> {
        (0..self.pre)
            .map(|j| self.weight_mask.column(j).iter().filter(|&&m| m != 0.0).count())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParameters {
    /// `classes x hidden`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<LayerParameters>,
    pub readout: ReadoutParameters,
}

/// Which kernels the delay stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelChoice {
    /// Gaussian kernels at the real-valued positions and current sigma.
    Gaussian,
    /// One-hot kernels at the rounded positions (inference).
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: SpikeMode,
    /// Batch statistics and dropout when true; frozen statistics otherwise.
    pub training: bool,
    pub kernels: KernelChoice,
}

impl ForwardOptions {
    pub const TRAIN: Self = Self {
        mode: SpikeMode::Hard,
        training: true,
        kernels: KernelChoice::Gaussian,
    };
    pub const EVAL: Self = Self {
        mode: SpikeMode::Hard,
        training: false,
        kernels: KernelChoice::Discrete,
    };
}

/// What a forward pass observed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    /// Spike output of every hidden layer, `(steps, batch, hidden)`, before
    /// dropout.
    pub spikes: Vec<Array3<f64>>,
    /// LIF input currents of every hidden layer.
    pub currents: Vec<Array3<f64>>,
    /// Spikes per neuron per sample sequence, `(batch, hidden)`.
    pub rates: Vec<Array2<f64>>,
    /// `(batch, classes)`.
    pub logits: Array2<f64>,
}

impl ForwardRecord {
    pub fn total_spikes(&self) -> f64 {
        self.spikes.iter().map(|s| s.sum()).sum()
    }
}

/// Per-layer values kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Array3<f64>,
    /// Delayed input (axonal) or mixed signal (dendritic).
    mid: Option<Array3<f64>>,
    bank: Option<KernelBank>,
    lag_k: Option<Array2<f64>>,
    x_hat: Option<Array3<f64>>,
    inv_std: Option<Array1<f64>>,
    lif: LifTrace,
    dropout: Option<Array3<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    last_hidden: Array3<f64>,
    options: ForwardOptions,
    /// Batch statistics per layer, for updating running estimates.
    pub batch_stats: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bn_gamma: Option<Array1<f64>>,
    pub bn_beta: Option<Array1<f64>>,
    pub delays: Option<Vec<f64>>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub readout_weights: Array2<f64>,
    pub readout_bias: Array1<f64>,
}

/// Optimizer parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Weights,
    Delays,
    /// Scheduled, never stepped by the optimizer.
    Sigma,
}

/// Mutable view of one parameter tensor.
pub struct ParamMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub values: &'a mut [f64],
}

/// Draws a fixed mask with exactly `floor(n * fraction)` zeros placed
/// uniformly at random.
pub fn fixed_mask(n: usize, fraction: f64, rng: &mut SeededRng) -> Vec<bool> {
    let zeros = ((n as f64) * fraction).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut mask = vec![true; n];
    for &i in &idx[..zeros.min(n)] {
        mask[i] = false;
    }
    mask
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut SeededRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.uniform_range(-bound, bound))
}

/// Draws weights, masks and delays from `rng`. Each layer uses its own
/// substream so changing one layer's shape leaves the others untouched.
pub fn init_parameters(cfg: &ModelConfig, rng: &SeededRng) -> Model {
    let mut layers = Vec::with_capacity(cfg.layers);
    for (l, (pre, post)) in cfg.layer_widths().into_iter().enumerate() {
        let mut r = rng.substream(l as u64);
        let bound = 1.0 / (pre as f64).sqrt();
        let mut weights = uniform_matrix(post, pre, bound, &mut r);
        let mask = fixed_mask(pre * post, cfg.weight_sparsity, &mut r);
        let weight_mask =
            Array2::from_shape_vec((post, pre), mask.iter().map(|&m| m as u8 as f64).collect()).unwrap();
        weights.zip_mut_with(&weight_mask, |w, &m| *w *= m);
        let delays = cfg.delay_mechanism.has_delays().then(|| {
            let n = delay_count(cfg.delay_mechanism, pre, post);
            let dmask = fixed_mask(n, cfg.delay_sparsity, &mut r);
            DelayParameterSet::init(cfg.delay_mechanism, pre, post, cfg.d_max, cfg.sigma_start(), dmask, &mut r)
        });
        layers.push(LayerParameters {
            pre,
            post,
            weights,
            weight_mask,
            bn: cfg.batch_norm.then(|| BatchNorm::new(post)),
            delays,
        });
    }
    let mut r = rng.substream(u64::from(u32::MAX));
    let bound = 1.0 / (cfg.hidden as f64).sqrt();
    let readout = ReadoutParameters {
        weights: uniform_matrix(cfg.classes, cfg.hidden, bound, &mut r),
        bias: Array1::zeros(cfg.classes),
    };
    Model {
        config: cfg.clone(),
        layers,
        readout,
    }
}

/// Stacks equally shaped spike trains into a `(steps, batch, channels)` array.
pub fn batch_input(samples: &[&SpikeTrain]) -> Result<Array3<f64>> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (steps, channels) = (first.steps(), first.channels());
    let mut x = Array3::<f64>::zeros((steps, samples.len(), channels));
    for (b, s) in samples.iter().enumerate() {
        if s.steps() != steps || s.channels() != channels {
            return Err(shape_err(
                "batch_input",
                format!("{steps}x{channels}"),
                format!("{}x{}", s.steps(), s.channels()),
            ));
        }
        for (t, c) in s.events() {
            x[[t, b, c]] = 1.0;
        }
    }
    Ok(x)
}

fn linear(x: ArrayView3<f64>, w: &Array2<f64>) -> Array3<f64> {
    let (steps, batch, pre) = x.dim();
    let m = to_matrix(x, steps * batch, pre);
    m.dot(&w.t()).as_standard_layout().into_owned().into_shape_with_order((steps, batch, w.nrows())).unwrap()
}

fn linear_backward(x: ArrayView3<f64>, w: &Array2<f64>, dy: ArrayView3<f64>) -> (Array3<f64>, Array2<f64>) {
    let (steps, batch, pre) = x.dim();
    let post = w.nrows();
    let xm = to_matrix(x, steps * batch, pre);
    let gm = to_matrix(dy, steps * batch, post);
    let dw = gm.t().dot(&xm);
    let dx = gm.dot(w).as_standard_layout().into_owned().into_shape_with_order((steps, batch, pre)).unwrap();
    (dx, dw)
}

impl Model {
    pub fn lif_params(&self) -> LifParams {
        LifParams {
            beta: self.config.beta,
            threshold: self.config.threshold,
            slope: self.config.surrogate_slope,
        }
    }

    pub fn mechanism(&self) -> DelayMechanism {
        self.config.delay_mechanism
    }

    /// Sets the shared Gaussian width of every delay layer.
    pub fn set_sigma(&mut self, sigma: f64) {
        for l in &mut self.layers {
            if let Some(d) = &mut l.delays {
                d.sigma = sigma;
            }
        }
    }

    /// Re-zeroes masked weights and projects delays into their window.
    pub fn enforce_constraints(&mut self) {
        for l in &mut self.layers {
            l.reapply_mask();
            if let Some(d) = &mut l.delays {
                clamp_delays(d);
            }
        }
    }

    /// Runs one hidden layer. Returns `(output after dropout, cache)`.
    fn layer_forward_cached(
        &self,
        layer: &LayerParameters,
        x: Array3<f64>,
        opts: ForwardOptions,
        rng: Option<&mut SeededRng>,
    ) -> Result<(Array3<f64>, Array3<f64>, LayerCache, Option<(Array1<f64>, Array1<f64>)>)> {
        let (steps, batch, width) = x.dim();
        if width != layer.pre {
            return Err(shape_err("layer_forward input channels", layer.pre, width));
        }
        let bank = match (&layer.delays, opts.kernels) {
            (None, _) => None,
            (Some(d), KernelChoice::Gaussian) => Some(d.kernel_bank()?),
            (Some(d), KernelChoice::Discrete) => Some(d.discrete_bank()),
        };
        let lag_k = bank.as_ref().map(KernelBank::lag_major);
        let (y, mid) = match layer.mechanism() {
            DelayMechanism::None => (linear(x.view(), &layer.weights), None),
            DelayMechanism::Axonal => {
                let z = depthwise_conv(x.view(), lag_k.as_ref().unwrap().view());
                (linear(z.view(), &layer.weights), Some(z))
            }
            DelayMechanism::Dendritic => {
                let z = linear(x.view(), &layer.weights);
                (depthwise_conv(z.view(), lag_k.as_ref().unwrap().view()), Some(z))
            }
            DelayMechanism::Synaptic => (
                synaptic_conv(x.view(), layer.weights.view(), lag_k.as_ref().unwrap().view()),
                None,
            ),
        };

        let post = layer.post;
        let (current, x_hat, inv_std, stats) = match &layer.bn {
            None => (y, None, None, None),
            Some(bn) => {
                let flat = y.view().into_shape_with_order((steps * batch, post)).unwrap();
                let (mean, var) = if opts.training {
                    let mean = flat.mean_axis(Axis(0)).unwrap();
                    let var = flat.var_axis(Axis(0), 0.0);
                    (mean, var)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let mut x_hat = y.clone();
                for mut row in x_hat.lanes_mut(Axis(2)) {
                    for c in 0..post {
                        row[c] = (row[c] - mean[c]) * inv_std[c];
                    }
                }
                let mut out = x_hat.clone();
                for mut row in out.lanes_mut(Axis(2)) {
                    for c in 0..post {
                        row[c] = bn.gamma[c] * row[c] + bn.beta[c];
                    }
                }
                let stats = opts.training.then(|| {
                    let n = (steps * batch) as f64;
                    let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
                    (mean, unbiased)
                });
                (out, Some(x_hat), Some(inv_std), stats)
            }
        };

        let lif = lif_forward(
            current.as_slice().unwrap(),
            steps,
            batch * post,
            self.lif_params(),
            opts.mode,
        );
        let spikes = Array3::from_shape_vec((steps, batch, post), lif.spikes.clone()).unwrap();
        let p = self.config.dropout_p;
        let (out, dropout) = match rng {
            Some(r) if opts.training && p > 0.0 => {
                let scale = 1.0 / (1.0 - p);
                let mask = Array3::from_shape_simple_fn(spikes.raw_dim(), || {
                    if r.bernoulli(p) {
                        0.0
                    } else {
                        scale
                    }
                });
                (&spikes * &mask, Some(mask))
            }
            _ => (spikes, None),
        };
        let cache = LayerCache {
            input: x,
            mid,
            bank,
            lag_k,
            x_hat,
            inv_std,
            lif,
            dropout,
        };
        Ok((out, current, cache, stats))
    }

    /// Full forward pass over a `(steps, batch, input_channels)` batch.
    ///
    /// `rng` drives dropout; without it no dropout is applied.
    pub fn forward(
        &self,
        x: &Array3<f64>,
        opts: ForwardOptions,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<(ForwardRecord, ForwardCache)> {
        let (steps, batch, width) = x.dim();
        if width != self.config.input_channels {
            return Err(shape_err("network_forward input", self.config.input_channels, width));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut record_spikes = Vec::with_capacity(self.layers.len());
        let mut record_currents = Vec::with_capacity(self.layers.len());
        let mut rates = Vec::with_capacity(self.layers.len());
        let mut batch_stats = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, current, cache, stats) =
                self.layer_forward_cached(layer, h, opts, rng.as_deref_mut())?;
            let spikes =
                Array3::from_shape_vec((steps, batch, layer.post), cache.lif.spikes.clone()).unwrap();
            rates.push(spikes.sum_axis(Axis(0)));
            record_spikes.push(spikes);
            record_currents.push(current);
            caches.push(cache);
            batch_stats.push(stats);
            h = out;
        }
        let classes = self.config.classes;
        let mut cur = linear(h.view(), &self.readout.weights);
        for mut row in cur.lanes_mut(Axis(2)) {
            row += &self.readout.bias;
        }
        // Integrate per sample; the readout is defined on (steps, classes).
        let mut logits = Array2::<f64>::zeros((batch, classes));
        for b in 0..batch {
            let c: Vec<f64> = cur.index_axis(Axis(1), b).iter().copied().collect();
            let r = readout_integrate(&c, steps, classes, self.config.readout_decay());
            logits.row_mut(b).assign(&Array1::from(r.logits));
        }
        let record = ForwardRecord {
            spikes: record_spikes,
            currents: record_currents,
            rates,
            logits,
        };
        let cache = ForwardCache {
            layers: caches,
            last_hidden: h,
            options: opts,
            batch_stats,
        };
        Ok((record, cache))
    }

    /// Convenience: forward a batch of spike trains.
    pub fn forward_trains(&self, samples: &[&SpikeTrain], opts: ForwardOptions) -> Result<ForwardRecord> {
        let x = batch_input(samples)?;
        Ok(self.forward(&x, opts, None)?.0)
    }

    /// Backpropagates `d_logits` `(batch, classes)` and optional gradients on
    /// each layer's spike output (pre-dropout), e.g. from a rate regularizer.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &Array2<f64>,
        d_spikes: Option<&[Array3<f64>]>,
    ) -> Gradients {
        let (steps, batch, hidden) = cache.last_hidden.dim();
        let classes = self.config.classes;
        let mut d_cur = Array3::<f64>::zeros((steps, batch, classes));
        for b in 0..batch {
            let g = readout_backward(d_logits.row(b).as_slice().unwrap(), steps, self.config.readout_decay());
            d_cur
                .index_axis_mut(Axis(1), b)
                .assign(&Array2::from_shape_vec((steps, classes), g).unwrap());
        }
        let readout_bias = d_cur.sum_axis(Axis(0)).sum_axis(Axis(0));
        let (mut d_h, readout_weights) = linear_backward(cache.last_hidden.view(), &self.readout.weights, d_cur.view());
        debug_assert_eq!(d_h.dim().2, hidden);

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (l, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let post = layer.post;
            let mut d_spk = match &lc.dropout {
                Some(mask) => &d_h * mask,
                None => d_h,
            };
            if let Some(extra) = d_spikes {
                d_spk += &extra[l];
            }
            let d_current_flat = lif_backward(&lc.lif, d_spk.as_slice().unwrap(), self.lif_params());
            let d_current = Array3::from_shape_vec((steps, batch, post), d_current_flat).unwrap();

            let (d_y, bn_gamma, bn_beta) = match (&layer.bn, &lc.x_hat, &lc.inv_std) {
                (Some(bn), Some(x_hat), Some(inv_std)) => {
                    let n = (steps * batch) as f64;
                    let dg = (&d_current * x_hat).sum_axis(Axis(0)).sum_axis(Axis(0));
                    let db = d_current.sum_axis(Axis(0)).sum_axis(Axis(0));
                    let mut d_y = d_current.clone();
                    for (mut row, xrow) in d_y.lanes_mut(Axis(2)).into_iter().zip(x_hat.lanes(Axis(2))) {
                        for c in 0..post {
                            let scale = bn.gamma[c] * inv_std[c];
                            row[c] = if cache.options.training {
                                scale * (row[c] - db[c] / n - xrow[c] * dg[c] / n)
                            } else {
                                scale * row[c]
                            };
                        }
                    }
                    (d_y, Some(dg), Some(db))
                }
                _ => (d_current, None, None),
            };

            let mut delays_grad = None;
            let mut sigma_grad = None;
            let (d_x, mut d_w) = match layer.mechanism() {
                DelayMechanism::None => linear_backward(lc.input.view(), &layer.weights, d_y.view()),
                DelayMechanism::Axonal => {
                    let z = lc.mid.as_ref().unwrap();
                    let (d_z, d_w) = linear_backward(z.view(), &layer.weights, d_y.view());
                    let (d_x, d_k) = depthwise_conv_backward(lc.input.view(), lc.lag_k.as_ref().unwrap().view(), d_z.view());
                    if let Some(bank) = lc.bank.as_ref().filter(|b| b.d_delay.is_some()) {
                        let (gd, gs) = bank.chain(&d_k);
                        delays_grad = Some(gd);
                        sigma_grad = Some(gs);
                    }
                    (d_x, d_w)
                }
                DelayMechanism::Dendritic => {
                    let z = lc.mid.as_ref().unwrap();
                    let (d_z, d_k) = depthwise_conv_backward(z.view(), lc.lag_k.as_ref().unwrap().view(), d_y.view());
                    if let Some(bank) = lc.bank.as_ref().filter(|b| b.d_delay.is_some()) {
                        let (gd, gs) = bank.chain(&d_k);
                        delays_grad = Some(gd);
                        sigma_grad = Some(gs);
                    }
                    linear_backward(lc.input.view(), &layer.weights, d_z.view())
                }
                DelayMechanism::Synaptic => {
                    let (d_x, d_w, d_k) = synaptic_conv_backward(
                        lc.input.view(),
                        layer.weights.view(),
                        lc.lag_k.as_ref().unwrap().view(),
                        d_y.view(),
                    );
                    if let Some(bank) = lc.bank.as_ref().filter(|b| b.d_delay.is_some()) {
                        let (gd, gs) = bank.chain(&d_k);
                        delays_grad = Some(gd);
                        sigma_grad = Some(gs);
                    }
                    (d_x, d_w)
                }
            };
            d_w.zip_mut_with(&layer.weight_mask, |g, &m| *g *= m);
            if let (Some(g), Some(d)) = (&mut delays_grad, &layer.delays) {
                for (g, &keep) in g.iter_mut().zip(&d.mask) {
                    if !keep {
                        *g = 0.0;
                    }
                }
            }
            layer_grads.push(LayerGrads {
                weights: d_w,
                bn_gamma,
                bn_beta,
                delays: delays_grad,
                sigma: sigma_grad,
            });
            d_h = d_x;
        }
        layer_grads.reverse();
        Gradients {
            layers: layer_grads,
            readout_weights,
            readout_bias,
        }
    }

    /// Folds observed batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (layer, stats) in self.layers.iter_mut().zip(&cache.batch_stats) {
            if let (Some(bn), Some((mean, var))) = (&mut layer.bn, stats) {
                bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + mean * BN_MOMENTUM;
                bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + var * BN_MOMENTUM;
            }
        }
    }

    /// Every parameter tensor in a fixed order, with its optimizer group.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push(ParamMut {
                name: format!("layer{l}.weights"),
                group: ParamGroup::Weights,
                values: layer.weights.as_slice_mut().unwrap(),
            });
            if let Some(bn) = &mut layer.bn {
                out.push(ParamMut {
                    name: format!("layer{l}.bn_gamma"),
                    group: ParamGroup::Weights,
                    values: bn.gamma.as_slice_mut().unwrap(),
                });
                out.push(ParamMut {
                    name: format!("layer{l}.bn_beta"),
                    group: ParamGroup::Weights,
                    values: bn.beta.as_slice_mut().unwrap(),
                });
            }
            if let Some(d) = &mut layer.delays {
                out.push(ParamMut {
                    name: format!("layer{l}.delays"),
                    group: ParamGroup::Delays,
                    values: &mut d.positions,
                });
                out.push(ParamMut {
                    name: format!("layer{l}.sigma"),
                    group: ParamGroup::Sigma,
                    values: std::slice::from_mut(&mut d.sigma),
                });
            }
        }
        out.push(ParamMut {
            name: "readout.weights".into(),
            group: ParamGroup::Weights,
            values: self.readout.weights.as_slice_mut().unwrap(),
        });
        out.push(ParamMut {
            name: "readout.bias".into(),
            group: ParamGroup::Weights,
            values: self.readout.bias.as_slice_mut().unwrap(),
        });
        out
    }

    /// Writes the checkpoint as versioned JSON.
    pub fn to_checkpoint(&self) -> String {
        let ck = CheckpointRef {
            format_version: FORMAT_VERSION,
            model: self,
        };
        serde_json::to_string(&ck).expect("model serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        ck.model.check_shapes()?;
        Ok(ck.model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |what: &str, e: String, a: String| Err(Error::Checkpoint(format!("{what}: expected {e}, got {a}")));
        let widths = self.config.layer_widths();
        if widths.len() != self.layers.len() {
            return bad("layer count", widths.len().to_string(), self.layers.len().to_string());
        }
        for (l, ((pre, post), layer)) in widths.iter().zip(&self.layers).enumerate() {
            if layer.weights.dim() != (*post, *pre) || layer.weight_mask.dim() != (*post, *pre) {
                return bad(&format!("layer {l} weights"), format!("{post}x{pre}"), format!("{:?}", layer.weights.dim()));
            }
            if let Some(d) = &layer.delays {
                let n = delay_count(d.mechanism, *pre, *post);
                if d.positions.len() != n || d.mask.len() != n {
                    return bad(&format!("layer {l} delays"), n.to_string(), d.positions.len().to_string());
                }
            }
            if layer.mechanism() != self.config.delay_mechanism {
                return bad(&format!("layer {l} mechanism"), self.config.delay_mechanism.to_string(), layer.mechanism().to_string());
            }
        }
        if self.readout.weights.dim() != (self.config.classes, self.config.hidden) {
            return bad("readout", format!("{}x{}", self.config.classes, self.config.hidden), format!("{:?}", self.readout.weights.dim()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format_version: u32,
    model: &'a Model,
}

#[derive(Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: Model,
}

impl Gradients {
    /// Gradient tensors in the same order as [`Model::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in &self.layers {
            out.push(g.weights.as_slice().unwrap());
            if let (Some(gg), Some(gb)) = (&g.bn_gamma, &g.bn_beta) {
                out.push(gg.as_slice().unwrap());
                out.push(gb.as_slice().unwrap());
            }
            if let (Some(d), Some(s)) = (&g.delays, &g.sigma) {
                out.push(d);
                out.push(std::slice::from_ref(s));
            }
        }
        out.push(self.readout_weights.as_slice().unwrap());
        out.push(self.readout_bias.as_slice().unwrap());
        out
    }
}
