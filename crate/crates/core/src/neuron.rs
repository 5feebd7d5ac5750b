//! Discrete-time leaky integrate-and-fire dynamics and the leaky-integrator
//! readout.
//!
//! One step of a LIF neuron is
//!
//! ```text
//! U' = beta * U + I
//! S  = spike(U' - U_th)
//! U' = (1 - S) * U'
//! ```
//!
//! where `spike` is a Heaviside step in [`SpikeMode::Hard`] and the ATan
//! primitive [`softspike`] in [`SpikeMode::Soft`]. Both modes share
//! [`surrogate_grad`] in the backward pass.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeMode {
    /// Binary spikes, surrogate gradient in backward.
    Hard,
    /// Smooth spikes in `(0, 1)`; forward and backward are exactly consistent.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    pub beta: f64,
    pub threshold: f64,
    pub slope: f64,
}

/// Membrane potentials of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub potential: Vec<f64>,
}

impl LifState {
    pub fn new(neurons: usize) -> Self {
        Self {
            potential: vec![0.0; neurons],
        }
    }
}

/// ATan spike primitive: `atan((pi/2) a u) / pi + 1/2`.
#[inline]
pub fn softspike(u: f64, slope: f64) -> f64 {
    (FRAC_PI_2 * slope * u).atan() / PI + 0.5
}

/// Exact derivative of [`softspike`]; also the hard-mode surrogate.
#[inline]
pub fn surrogate_grad(u: f64, slope: f64) -> f64 {
    let z = FRAC_PI_2 * slope * u;
    slope / (2.0 * (1.0 + z * z))
}

#[inline]
fn fire(u: f64, threshold: f64, slope: f64, mode: SpikeMode) -> f64 {
    match mode {
        SpikeMode::Hard => {
            if u >= threshold {
                1.0
            } else {
                0.0
            }
        }
        SpikeMode::Soft => softspike(u - threshold, slope),
    }
}

/// Advances every neuron by one step in place and returns the spike output.
pub fn lif_step(
    state: &mut LifState,
    current: &[f64],
    params: LifParams,
    mode: SpikeMode,
) -> Result<Vec<f64>> {
    if current.len() != state.potential.len() {
        return Err(shape_err("lif_step", state.potential.len(), current.len()));
    }
    if let Some(neuron) = current.iter().position(|i| !i.is_finite()) {
        return Err(Error::NonFiniteCurrent { neuron });
    }
    let mut spikes = vec![0.0; current.len()];
    for ((u, &i), s) in state.potential.iter_mut().zip(current).zip(&mut spikes) {
        let pre = params.beta * *u + i;
        *s = fire(pre, params.threshold, params.slope, mode);
        *u = (1.0 - *s) * pre;
    }
    Ok(spikes)
}

/// Forward record of a LIF population run over time, needed for BPTT.
#[derive(Debug, Clone)]
pub struct LifTrace {
    pub steps: usize,
    pub neurons: usize,
    /// Potential after integration and before reset, `[t * neurons + n]`.
    pub pre: Vec<f64>,
    /// Spike output, same layout.
    pub spikes: Vec<f64>,
}

/// Runs a population over `steps` steps of time-major currents.
pub fn lif_forward(
    currents: &[f64],
    steps: usize,
    neurons: usize,
    params: LifParams,
    mode: SpikeMode,
) -> LifTrace {
    debug_assert_eq!(currents.len(), steps * neurons);
    let mut pre = vec![0.0; steps * neurons];
    let mut spikes = vec![0.0; steps * neurons];
    let mut u = vec![0.0; neurons];
    for t in 0..steps {
        let row = t * neurons..(t + 1) * neurons;
        for (((u, &i), p), s) in u
            .iter_mut()
            .zip(&currents[row.clone()])
            .zip(&mut pre[row.clone()])
            .zip(&mut spikes[row])
        {
            let v = params.beta * *u + i;
            *p = v;
            *s = fire(v, params.threshold, params.slope, mode);
            *u = (1.0 - *s) * v;
        }
    }
    LifTrace {
        steps,
        neurons,
        pre,
        spikes,
    }
}

/// Backpropagates `d_spikes` through a recorded LIF run, returning the
/// gradient with respect to the input currents.
///
/// The reset factor `(1 - S)` carries gradient. Spike derivatives use
/// [`surrogate_grad`] in both modes.
pub fn lif_backward(trace: &LifTrace, d_spikes: &[f64], params: LifParams) -> Vec<f64> {
    let n = trace.neurons;
    let mut d_current = vec![0.0; trace.steps * n];
    // Gradient arriving at the post-reset potential from step t + 1.
    let mut d_post = vec![0.0; n];
    for t in (0..trace.steps).rev() {
        let row = t * n..(t + 1) * n;
        for ((((dp, &pre), &s), &ds_ext), di) in d_post
            .iter_mut()
            .zip(&trace.pre[row.clone()])
            .zip(&trace.spikes[row.clone()])
            .zip(&d_spikes[row.clone()])
            .zip(&mut d_current[row])
        {
            let ds = ds_ext - *dp * pre;
            let d_pre = *dp * (1.0 - s) + ds * surrogate_grad(pre - params.threshold, params.slope);
            *di = d_pre;
            *dp = params.beta * d_pre;
        }
    }
    d_current
}

/// Leaky-integrator readout output.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    /// Potential after integrating step `t`, `[t * classes + k]`.
    pub trace: Vec<f64>,
    /// Time-averaged potential per class.
    pub logits: Vec<f64>,
}

/// `V(t+1) = beta_out V(t) + I(t)` from `V(0) = 0`, no threshold, logits are
/// the mean of the trace.
pub fn readout_integrate(currents: &[f64], steps: usize, classes: usize, beta_out: f64) -> Readout {
    debug_assert_eq!(currents.len(), steps * classes);
    let mut trace = vec![0.0; steps * classes];
    let mut v = vec![0.0; classes];
    let mut sum = vec![0.0; classes];
    for t in 0..steps {
        for k in 0..classes {
            v[k] = beta_out * v[k] + currents[t * classes + k];
            trace[t * classes + k] = v[k];
            sum[k] += v[k];
        }
    }
    let logits = sum.into_iter().map(|s| s / steps as f64).collect();
    Readout { trace, logits }
}

/// Gradient of the readout logits with respect to the input currents.
pub fn readout_backward(d_logits: &[f64], steps: usize, beta_out: f64) -> Vec<f64> {
    let classes = d_logits.len();
    let mut d_current = vec![0.0; steps * classes];
    let mut carry = vec![0.0; classes];
    for t in (0..steps).rev() {
        for k in 0..classes {
            carry[k] = d_logits[k] / steps as f64 + beta_out * carry[k];
            d_current[t * classes + k] = carry[k];
        }
    }
    d_current
}
