//! Mini-batch BPTT training with two Adam parameter groups.
//!
//! Weights (linear layers, batch-norm affine, readout) and delay positions
//! are separate groups with independent learning rates and schedules. The
//! Gaussian width is not learned: it follows [`sigma_schedule`] per epoch.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::config::{RegConfig, SchedulerKind, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{argmax, count_sops, count_spikes};
use crate::network::{batch_input, ForwardOptions, Gradients, Model, ParamGroup};
use crate::rng::seeded_rng;

/// Softmax cross-entropy of one sample. Returns `(loss, dloss/dlogits)`.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let loss = z.ln() + max - logits[label];
    let mut grad: Vec<f64> = exp.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Batch-mean cross-entropy with its gradient.
pub fn batch_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let batch = labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (b, &y) in labels.iter().enumerate() {
        let (l, g) = cross_entropy_loss(logits.row(b).as_slice().unwrap(), y)?;
        total += l;
        for (dst, v) in grad.row_mut(b).iter_mut().zip(g) {
            *dst = v / batch;
        }
    }
    Ok((total / batch, grad))
}

/// Firing-rate penalty `r * (R_quiet + R_burst)` over per-layer rate vectors,
/// and its subgradient with respect to each rate (0 at the kinks).
pub fn firing_rate_reg(rates: &[Vec<f64>], reg: &RegConfig) -> (f64, Vec<Vec<f64>>) {
    let mut quiet = 0.0;
    let mut burst = 0.0;
    let grads = rates
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|&f| {
                    if f < reg.alpha_min {
                        quiet += reg.alpha_min - f;
                        -reg.r
                    } else if f > reg.alpha_max {
                        burst += f - reg.alpha_max;
                        reg.r
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    (reg.r * (quiet + burst), grads)
}

/// Gaussian width for `epoch`: linear from `d_max / 2` down to 0.5 over the
/// first `anneal_fraction` of training, then constant.
pub fn sigma_schedule(epoch: f64, total_epochs: usize, d_max: usize, anneal_fraction: f64) -> f64 {
    sigma_schedule_from(d_max as f64 / 2.0, epoch, total_epochs, anneal_fraction)
}

/// [`sigma_schedule`] with an explicit starting width.
pub fn sigma_schedule_from(start: f64, epoch: f64, total_epochs: usize, anneal_fraction: f64) -> f64 {
    const END: f64 = 0.5;
    let anneal_epochs = anneal_fraction * total_epochs as f64;
    if anneal_epochs <= 0.0 || epoch >= anneal_epochs {
        return END;
    }
    start + (END - start) * (epoch / anneal_epochs)
}

/// Learning-rate schedule with the one-cycle shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub kind: SchedulerKind,
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup: f64,
    pub start_div: f64,
    pub final_div: f64,
}

impl LrSchedule {
    pub fn new(kind: SchedulerKind, base_lr: f64, total_steps: usize) -> Self {
        Self {
            kind,
            base_lr,
            total_steps,
            warmup: 0.3,
            start_div: 25.0,
            final_div: 100.0,
        }
    }

    fn from_config(kind: SchedulerKind, base_lr: f64, total_steps: usize, tcfg: &TrainConfig) -> Self {
        Self {
            warmup: tcfg.one_cycle_warmup,
            start_div: tcfg.one_cycle_start_div,
            final_div: tcfg.one_cycle_final_div,
            ..Self::new(kind, base_lr, total_steps)
        }
    }

    /// Rate at `step`; `step == total_steps` evaluates the terminal value.
    pub fn at(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let step = (step as f64).min(total);
        match self.kind {
            SchedulerKind::None => self.base_lr,
            SchedulerKind::Cosine => self.base_lr * 0.5 * (1.0 + (PI * step / total).cos()),
            SchedulerKind::OneCycle => {
                // Whole-step warmup so the peak lands exactly on a step.
                let warm = (self.warmup * total).round();
                let start = self.base_lr / self.start_div;
                let end = self.base_lr / self.final_div;
                if step < warm {
                    let f = step / warm;
                    start * (1.0 - f) + self.base_lr * f
                } else {
                    let progress = (step - warm) / (total - warm).max(1.0);
                    let w = 0.5 * (1.0 + (PI * progress).cos());
                    end * (1.0 - w) + self.base_lr * w
                }
            }
        }
    }
}

/// Rate of `kind` at `step` of `total_steps`, default one-cycle shape.
pub fn lr_schedule(kind: SchedulerKind, step: usize, total_steps: usize, base_lr: f64) -> f64 {
    LrSchedule::new(kind, base_lr, total_steps).at(step)
}

/// Adam moments, one slot per parameter tensor of [`Model::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub groups: Vec<ParamGroup>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimState {
    pub fn new(model: &mut Model) -> Self {
        let params = model.params_mut();
        Self {
            first: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            groups: params.iter().map(|p| p.group).collect(),
            step: 0,
        }
    }
}

/// One Adam update of the weight and delay groups, followed by mask
/// re-application and delay clamping.
pub fn adam_step(model: &mut Model, grads: &Gradients, state: &mut OptimState, lr_weights: f64, lr_delays: f64) -> Result<()> {
    let gslices = grads.slices();
    {
        let params = model.params_mut();
        for (p, g) in params.iter().zip(&gslices) {
            if p.group != ParamGroup::Sigma && g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { name: p.name.clone() });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (idx, (p, g)) in model.params_mut().into_iter().zip(&gslices).enumerate() {
        let lr = match p.group {
            ParamGroup::Weights => lr_weights,
            ParamGroup::Delays => lr_delays,
            ParamGroup::Sigma => continue,
        };
        let m = &mut state.first[idx];
        let v = &mut state.second[idx];
        for i in 0..p.values.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    model.enforce_constraints();
    Ok(())
}

/// One row of the metrics history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    /// Mean hidden-layer spikes per sample.
    pub spikes: f64,
    /// Mean synaptic operations per sample.
    pub sops: f64,
    pub sigma: f64,
    pub lr_w: f64,
    pub lr_d: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,split,loss,accuracy,spikes,sops,sigma,lr_w,lr_d";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.split, self.loss, self.accuracy, self.spikes, self.sops, self.sigma, self.lr_w, self.lr_d
        )
    }
}

/// Renders a history as CSV with [`METRICS_CSV_HEADER`].
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for row in history {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Evaluation summary over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub spikes: f64,
    pub sops: f64,
}

/// Inference-mode evaluation: discretized delays and frozen statistics.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    evaluate_with(model, data, batch_size, ForwardOptions::EVAL)
}

pub fn evaluate_with(model: &Model, data: &Dataset, batch_size: usize, opts: ForwardOptions) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut spikes = 0u64;
    let mut sops = 0u64;
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(batch_size.max(1)) {
        let trains: Vec<_> = chunk.iter().map(|&i| &data.samples[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let (rec, _) = model.forward(&batch_input(&trains)?, opts, None)?;
        let (l, _) = batch_cross_entropy(&rec.logits, &labels)?;
        loss += l * labels.len() as f64;
        correct += rec
            .logits
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(r, &y)| argmax(r.iter().copied()) == y)
            .count();
        spikes += count_spikes(&rec);
        sops += count_sops(&rec, model);
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        spikes: spikes as f64 / n,
        sops: sops as f64 / n,
    })
}

/// Regularizer gradient broadcast onto every spike of the batch. Rates are
/// batch means of per-sample spike counts.
fn reg_terms(rates: &[Array2<f64>], steps: usize, reg: &RegConfig) -> (f64, Vec<Array3<f64>>) {
    let mean_rates: Vec<Vec<f64>> = rates
        .iter()
        .map(|r| r.mean_axis(Axis(0)).unwrap().to_vec())
        .collect();
    let (penalty, grads) = firing_rate_reg(&mean_rates, reg);
    let spike_grads = rates
        .iter()
        .zip(grads)
        .map(|(r, g)| {
            let (batch, hidden) = r.dim();
            let scale = 1.0 / batch as f64;
            Array3::from_shape_fn((steps, batch, hidden), |(_, _, i)| g[i] * scale)
        })
        .collect();
    (penalty, spike_grads)
}

/// Trains in place. Returns one `train` row per epoch plus a `test` row per
/// epoch when `test` is given.
pub fn train(model: &mut Model, train_set: &Dataset, test: Option<&Dataset>, tcfg: &TrainConfig) -> Result<Vec<EpochMetrics>> {
    train_with_hook(model, train_set, test, tcfg, |_, _| {})
}

/// [`train`] with a callback after every optimizer step, `(epoch, model)`.
pub fn train_with_hook(
    model: &mut Model,
    train_set: &Dataset,
    test: Option<&Dataset>,
    tcfg: &TrainConfig,
    mut hook: impl FnMut(usize, &Model),
) -> Result<Vec<EpochMetrics>> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let violations = crate::config::validate_config(&model.config, tcfg);
    if !violations.is_empty() {
        return Err(Error::InvalidConfig(violations));
    }
    let n = train_set.len();
    let batch_size = tcfg.batch_size.min(n);
    let batches_per_epoch = n.div_ceil(batch_size);
    let total_steps = batches_per_epoch * tcfg.epochs;
    let lr_w = LrSchedule::from_config(tcfg.weight_scheduler, tcfg.lr_weights, total_steps, tcfg);
    let lr_d = LrSchedule::from_config(tcfg.delay_scheduler, tcfg.lr_delays, total_steps, tcfg);
    let root = seeded_rng(model.config.seed);
    let mut shuffle_rng = root.substream(1 << 20);
    let mut dropout_rng = root.substream((1 << 20) + 1);
    let mut state = OptimState::new(model);
    let sigma_start = model.config.sigma_start();
    let mut history = Vec::new();
    let mut step = 0usize;

    for epoch in 0..tcfg.epochs {
        let sigma = sigma_schedule_from(sigma_start, epoch as f64, tcfg.epochs, tcfg.sigma_anneal_fraction);
        model.set_sigma(sigma);
        let mut order: Vec<usize> = (0..n).collect();
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut correct, mut spikes, mut sops) = (0.0, 0usize, 0u64, 0u64);
        let (mut last_lr_w, mut last_lr_d) = (lr_w.at(step), lr_d.at(step));
        for chunk in order.chunks(batch_size) {
            let trains: Vec<_> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let x = batch_input(&trains)?;
            let (rec, cache) = model.forward(&x, ForwardOptions::TRAIN, Some(&mut dropout_rng))?;
            let (ce, d_logits) = batch_cross_entropy(&rec.logits, &labels).map_err(|_| Error::Diverged {
                epoch,
                step,
                loss: f64::NAN,
            })?;
            let (loss, d_spikes) = match &tcfg.reg {
                Some(reg) if reg.r > 0.0 => {
                    let (penalty, g) = reg_terms(&rec.rates, x.dim().0, reg);
                    (ce + penalty, Some(g))
                }
                _ => (ce, None),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            let grads = model.backward(&cache, &d_logits, d_spikes.as_deref());
            last_lr_w = lr_w.at(step);
            last_lr_d = lr_d.at(step);
            adam_step(model, &grads, &mut state, last_lr_w, last_lr_d)?;
            model.update_running_stats(&cache);
            hook(epoch, model);

            loss_sum += loss * labels.len() as f64;
            correct += rec
                .logits
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(r, &y)| argmax(r.iter().copied()) == y)
                .count();
            spikes += count_spikes(&rec);
            sops += count_sops(&rec, model);
            step += 1;
        }
        let nf = n as f64;
        history.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss: loss_sum / nf,
            accuracy: correct as f64 / nf,
            spikes: spikes as f64 / nf,
            sops: sops as f64 / nf,
            sigma,
            lr_w: last_lr_w,
            lr_d: last_lr_d,
        });
        if let Some(test) = test {
            let ev = evaluate(model, test, batch_size)?;
            history.push(EpochMetrics {
                epoch,
                split: "test".into(),
                loss: ev.loss,
                accuracy: ev.accuracy,
                spikes: ev.spikes,
                sops: ev.sops,
                sigma,
                lr_w: last_lr_w,
                lr_d: last_lr_d,
            });
        }
    }
    Ok(history)
}
