//! Gaussian delay kernels and the convolutional delayed-current formulation.
//!
//! A real-valued delay `d` in `[0, d_max - 1]` is encoded by a length-`d_max`
//! kernel whose Gaussian bump is centered at index `d_max - 1 - d`. Kernel
//! index `u` corresponds to a lag of `d_max - 1 - u` steps, so convolving a
//! signal with the kernel of an integer delay `d` (as `sigma -> 0`) shifts it by
//! exactly `d` steps. Kernels are normalized to unit mass.
//!
//! Signals are time-major `(steps, batch, channels)` arrays.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::config::DelayMechanism;
use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::spikes::SpikeTrain;

/// Learnable delay positions for one layer under one tying scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayParameterSet {
    pub mechanism: DelayMechanism,
    pub pre: usize,
    pub post: usize,
    pub d_max: usize,
    pub sigma: f64,
    /// Positions laid out `[i * pre + j]` (synaptic), `[j]` (axonal) or `[i]`
    /// (dendritic).
    pub positions: Vec<f64>,
    /// `false` marks a delay pinned to zero and excluded from training.
    pub mask: Vec<bool>,
}

/// Number of delay parameters a tying scheme needs for a `pre -> post` layer.
pub fn delay_count(mechanism: DelayMechanism, pre: usize, post: usize) -> usize {
    match mechanism {
        DelayMechanism::Synaptic => pre * post,
        DelayMechanism::Axonal => pre,
        DelayMechanism::Dendritic => post,
        DelayMechanism::None => 0,
    }
}

impl DelayParameterSet {
    /// Uniform initialization in `[0, d_max - 1]`; entries where `mask` is
    /// `false` start (and stay) at zero.
    pub fn init(
        mechanism: DelayMechanism,
        pre: usize,
        post: usize,
        d_max: usize,
        sigma: f64,
        mask: Vec<bool>,
        rng: &mut SeededRng,
    ) -> Self {
        let n = delay_count(mechanism, pre, post);
        assert_eq!(mask.len(), n, "delay mask length");
        let hi = (d_max - 1) as f64;
        let positions = mask
            .iter()
            .map(|&keep| {
                let d = rng.uniform_range(0.0, hi);
                if keep {
                    d
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            mechanism,
            pre,
            post,
            d_max,
            sigma,
            positions,
            mask,
        }
    }

    /// Builds a set with fixed positions and a full mask.
    pub fn with_positions(
        mechanism: DelayMechanism,
        pre: usize,
        post: usize,
        d_max: usize,
        sigma: f64,
        positions: Vec<f64>,
    ) -> Result<Self> {
        let n = delay_count(mechanism, pre, post);
        if positions.len() != n {
            return Err(shape_err("DelayParameterSet positions", n, positions.len()));
        }
        Ok(Self {
            mechanism,
            pre,
            post,
            d_max,
            sigma,
            mask: vec![true; n],
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Delay that applies to the connection `pre_j -> post_i`.
    pub fn connection_delay(&self, i: usize, j: usize) -> f64 {
        self.positions[self.param_index(i, j)]
    }

    pub fn param_index(&self, i: usize, j: usize) -> usize {
        match self.mechanism {
            DelayMechanism::Synaptic => i * self.pre + j,
            DelayMechanism::Axonal => j,
            DelayMechanism::Dendritic => i,
            DelayMechanism::None => unreachable!("no delay parameters"),
        }
    }

    /// Gaussian kernels at the current positions and sigma.
    pub fn kernel_bank(&self) -> Result<KernelBank> {
        KernelBank::gaussian(&self.positions, self.sigma, self.d_max)
    }

    /// One-hot kernels at the discretized positions.
    pub fn discrete_bank(&self) -> KernelBank {
        KernelBank::one_hot(&discretize(self), self.d_max)
    }
}

/// Projects every position into `[0, d_max - 1]` and re-zeroes masked entries.
pub fn clamp_delays(params: &mut DelayParameterSet) {
    let hi = (params.d_max - 1) as f64;
    for (d, &keep) in params.positions.iter_mut().zip(&params.mask) {
        *d = if keep { d.clamp(0.0, hi) } else { 0.0 };
    }
}

/// Rounds every position half-up to an integer in `[0, d_max - 1]`; masked
/// entries become 0.
pub fn discretize(params: &DelayParameterSet) -> Vec<usize> {
    let hi = params.d_max - 1;
    params
        .positions
        .iter()
        .zip(&params.mask)
        .map(|(&d, &keep)| {
            if !keep {
                return 0;
            }
            let r = (d + 0.5).floor();
            if r <= 0.0 {
                0
            } else {
                (r as usize).min(hi)
            }
        })
        .collect()
}

/// Normalized Gaussian kernel for delay `d`, width `sigma`, length `d_max`.
pub fn gaussian_delay_kernel(d: f64, sigma: f64, d_max: usize) -> Result<Vec<f64>> {
    Ok(kernel_with_grad(d, sigma, d_max)?.kernel)
}

/// A kernel together with its derivatives with respect to `d` and `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    pub kernel: Vec<f64>,
    pub d_delay: Vec<f64>,
    pub d_sigma: Vec<f64>,
}

pub fn kernel_with_grad(d: f64, sigma: f64, d_max: usize) -> Result<KernelGrad> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    let center = (d_max as f64) - 1.0 - d;
    let var = sigma * sigma;
    let sq: Vec<f64> = (0..d_max).map(|u| (u as f64 - center).powi(2)).collect();
    // Shifting by the smallest distance keeps at least one entry at exp(0),
    // so tiny sigmas never underflow the whole kernel.
    let min_sq = sq.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = sq.iter().map(|&q| (-(q - min_sq) / (2.0 * var)).exp()).collect();
    let z: f64 = raw.iter().sum();
    let kernel: Vec<f64> = raw.iter().map(|g| g / z).collect();

    // d log g_u / d d = -(u - c) / sigma^2,  d log g_u / d sigma = (u - c)^2 / sigma^3
    let a: Vec<f64> = (0..d_max).map(|u| -(u as f64 - center) / var).collect();
    let b: Vec<f64> = sq.iter().map(|&q| q / (var * sigma)).collect();
    let a_mean: f64 = kernel.iter().zip(&a).map(|(k, a)| k * a).sum();
    let b_mean: f64 = kernel.iter().zip(&b).map(|(k, b)| k * b).sum();
    let d_delay = kernel.iter().zip(&a).map(|(k, a)| k * (a - a_mean)).collect();
    let d_sigma = kernel.iter().zip(&b).map(|(k, b)| k * (b - b_mean)).collect();
    Ok(KernelGrad {
        kernel,
        d_delay,
        d_sigma,
    })
}

/// One length-`d_max` kernel per delay parameter, laid out like the positions.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub d_max: usize,
    /// `[p * d_max + u]`.
    pub kernels: Vec<f64>,
    pub d_delay: Option<Vec<f64>>,
    pub d_sigma: Option<Vec<f64>>,
}

impl KernelBank {
    pub fn gaussian(positions: &[f64], sigma: f64, d_max: usize) -> Result<Self> {
        let n = positions.len();
        let mut kernels = Vec::with_capacity(n * d_max);
        let mut d_delay = Vec::with_capacity(n * d_max);
        let mut d_sigma = Vec::with_capacity(n * d_max);
        for &d in positions {
            let kg = kernel_with_grad(d, sigma, d_max)?;
            kernels.extend(kg.kernel);
            d_delay.extend(kg.d_delay);
            d_sigma.extend(kg.d_sigma);
        }
        Ok(Self {
            d_max,
            kernels,
            d_delay: Some(d_delay),
            d_sigma: Some(d_sigma),
        })
    }

    /// Exact shift kernels for integer delays.
    pub fn one_hot(delays: &[usize], d_max: usize) -> Self {
        let mut kernels = vec![0.0; delays.len() * d_max];
        for (p, &d) in delays.iter().enumerate() {
            assert!(d < d_max, "delay {d} outside window {d_max}");
            kernels[p * d_max + d_max - 1 - d] = 1.0;
        }
        Self {
            d_max,
            kernels,
            d_delay: None,
            d_sigma: None,
        }
    }

    pub fn len(&self) -> usize {
        self.kernels.len() / self.d_max
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernel(&self, p: usize) -> &[f64] {
        &self.kernels[p * self.d_max..(p + 1) * self.d_max]
    }

    /// Kernel weight per lag: `out[lag][p] = k_p[d_max - 1 - lag]`.
    pub fn lag_major(&self) -> Array2<f64> {
        let n = self.len();
        let dm = self.d_max;
        Array2::from_shape_fn((dm, n), |(lag, p)| self.kernels[p * dm + dm - 1 - lag])
    }

    /// Chains `dL/dk` (lag-major) through the kernel parameterization, giving
    /// per-position delay gradients and the summed sigma gradient.
    pub fn chain(&self, d_lag: &Array2<f64>) -> (Vec<f64>, f64) {
        let dm = self.d_max;
        let n = self.len();
        let dd = self.d_delay.as_ref().expect("gaussian bank");
        let ds = self.d_sigma.as_ref().expect("gaussian bank");
        let mut g_delay = vec![0.0; n];
        let mut g_sigma = 0.0;
        for p in 0..n {
            for u in 0..dm {
                let gk = d_lag[[dm - 1 - u, p]];
                g_delay[p] += gk * dd[p * dm + u];
                g_sigma += gk * ds[p * dm + u];
            }
        }
        (g_delay, g_sigma)
    }
}

/// Depthwise causal convolution: `y[t, b, c] = sum_lag k_c[lag] x[t - lag, b, c]`.
pub fn depthwise_conv(x: ArrayView3<f64>, lag_k: ArrayView2<f64>) -> Array3<f64> {
    let (steps, _, channels) = x.dim();
    assert_eq!(lag_k.ncols(), channels);
    let mut y = Array3::<f64>::zeros(x.raw_dim());
    for (lag, k) in lag_k.axis_iter(Axis(0)).enumerate().take(steps) {
        let mut dst = y.slice_mut(s![lag.., .., ..]);
        let src = x.slice(s![..steps - lag, .., ..]);
        for (mut yrow, xrow) in dst
            .lanes_mut(Axis(2))
            .into_iter()
            .zip(src.lanes(Axis(2)))
        {
            for ((yv, &xv), &kv) in yrow.iter_mut().zip(xrow.iter()).zip(k.iter()) {
                *yv += kv * xv;
            }
        }
    }
    y
}

/// Backward of [`depthwise_conv`]: returns `(dL/dx, dL/dk)` with `dL/dk`
/// lag-major.
pub fn depthwise_conv_backward(
    x: ArrayView3<f64>,
    lag_k: ArrayView2<f64>,
    dy: ArrayView3<f64>,
) -> (Array3<f64>, Array2<f64>) {
    let (steps, _, _) = x.dim();
    let mut dx = Array3::<f64>::zeros(x.raw_dim());
    let mut dk = Array2::<f64>::zeros(lag_k.raw_dim());
    for (lag, k) in lag_k.axis_iter(Axis(0)).enumerate().take(steps) {
        let mut dk_row = dk.row_mut(lag);
        let g = dy.slice(s![lag.., .., ..]);
        let src = x.slice(s![..steps - lag, .., ..]);
        let mut dst = dx.slice_mut(s![..steps - lag, .., ..]);
        for ((grow, xrow), mut drow) in g
            .lanes(Axis(2))
            .into_iter()
            .zip(src.lanes(Axis(2)))
            .zip(dst.lanes_mut(Axis(2)))
        {
            for c in 0..grow.len() {
                drow[c] += k[c] * grow[c];
                dk_row[c] += grow[c] * xrow[c];
            }
        }
    }
    (dx, dk)
}

/// Joint per-connection delay and weighting:
/// `y[t, b, i] = sum_j sum_lag w_ij k_ij[lag] x[t - lag, b, j]`.
///
/// `lag_k` is lag-major with columns indexed `i * pre + j`.
pub fn synaptic_conv(x: ArrayView3<f64>, w: ArrayView2<f64>, lag_k: ArrayView2<f64>) -> Array3<f64> {
    let (steps, batch, pre) = x.dim();
    let post = w.nrows();
    let mut y = Array3::<f64>::zeros((steps, batch, post));
    for lag in 0..lag_k.nrows().min(steps) {
        let eff = lag_weights(w, lag_k.row(lag).as_slice().unwrap());
        let src = x.slice(s![..steps - lag, .., ..]);
        let src2 = to_matrix(src, (steps - lag) * batch, pre);
        let prod = src2.dot(&eff.t());
        let mut dst = y.slice_mut(s![lag.., .., ..]);
        let prod3 = prod.as_standard_layout().into_owned().into_shape_with_order((steps - lag, batch, post)).unwrap();
        dst += &prod3;
    }
    y
}

/// Backward of [`synaptic_conv`]: returns `(dL/dx, dL/dw, dL/dk lag-major)`.
pub fn synaptic_conv_backward(
    x: ArrayView3<f64>,
    w: ArrayView2<f64>,
    lag_k: ArrayView2<f64>,
    dy: ArrayView3<f64>,
) -> (Array3<f64>, Array2<f64>, Array2<f64>) {
    let (steps, batch, pre) = x.dim();
    let post = w.nrows();
    let mut dx = Array3::<f64>::zeros(x.raw_dim());
    let mut dw = Array2::<f64>::zeros(w.raw_dim());
    let mut dk = Array2::<f64>::zeros(lag_k.raw_dim());
    for lag in 0..lag_k.nrows().min(steps) {
        let k = lag_k.row(lag);
        let eff = lag_weights(w, k.as_slice().unwrap());
        let src = to_matrix(x.slice(s![..steps - lag, .., ..]), (steps - lag) * batch, pre);
        let g = to_matrix(dy.slice(s![lag.., .., ..]), (steps - lag) * batch, post);
        let d_eff = g.t().dot(&src);
        let dsrc = g.dot(&eff);
        let mut dst = dx.slice_mut(s![..steps - lag, .., ..]);
        dst += &dsrc.as_standard_layout().into_owned().into_shape_with_order((steps - lag, batch, pre)).unwrap();
        let mut dk_row = dk.row_mut(lag);
        for ((idx, &de), &wv) in d_eff.iter().enumerate().zip(w.iter()) {
            dw.as_slice_mut().unwrap()[idx] += de * k[idx];
            dk_row[idx] += de * wv;
        }
    }
    (dx, dw, dk)
}

fn lag_weights(w: ArrayView2<f64>, k: &[f64]) -> Array2<f64> {
    let mut eff = w.to_owned();
    for (e, &kv) in eff.iter_mut().zip(k) {
        *e *= kv;
    }
    eff
}

pub(crate) fn to_matrix(x: ArrayView3<f64>, rows: usize, cols: usize) -> Array2<f64> {
    if let Ok(v) = x.to_shape((rows, cols)) {
        v.into_owned()
    } else {
        x.to_owned().into_shape_with_order((rows, cols)).unwrap()
    }
}

/// Evaluates the delay stage on a single spike train.
///
/// Axonal and dendritic mechanisms apply one kernel per channel. The synaptic
/// mechanism needs the `post x pre` weight matrix because delaying and
/// weighting are performed jointly; its output has one column per target.
pub fn apply_delay_conv(
    spikes: &SpikeTrain,
    bank: &KernelBank,
    mechanism: DelayMechanism,
    weights: Option<ArrayView2<f64>>,
) -> Result<Array2<f64>> {
    let steps = spikes.steps();
    let channels = spikes.channels();
    let x = Array3::from_shape_vec((steps, 1, channels), spikes.to_f64()).unwrap();
    let lag_k = bank.lag_major();
    let y = match mechanism {
        DelayMechanism::Axonal | DelayMechanism::Dendritic => {
            if bank.len() != channels {
                return Err(shape_err("apply_delay_conv", channels, bank.len()));
            }
            depthwise_conv(x.view(), lag_k.view())
        }
        DelayMechanism::Synaptic => {
            let w = weights.ok_or_else(|| Error::Data("synaptic delays need weights".into()))?;
            if w.ncols() != channels {
                return Err(shape_err("apply_delay_conv weights", channels, w.ncols()));
            }
            if bank.len() != w.len() {
                return Err(shape_err("apply_delay_conv kernels", w.len(), bank.len()));
            }
            synaptic_conv(x.view(), w, lag_k.view())
        }
        DelayMechanism::None => x,
    };
    let cols = y.dim().2;
    Ok(y.into_shape_with_order((steps, cols)).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn kernel_matches_hand_evaluation() {
        let k = gaussian_delay_kernel(1.0, 0.5, 5).unwrap();
        let raw = [(-18.0f64).exp(), (-8.0f64).exp(), (-2.0f64).exp(), 1.0, (-2.0f64).exp()];
        let z: f64 = raw.iter().sum();
        for (a, r) in k.iter().zip(raw) {
            assert!((a - r / z).abs() < 1e-15);
        }
        let peak = k.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 3);
    }

    #[test]
    fn narrow_kernel_is_one_hot() {
        for d in 0..7 {
            let k = gaussian_delay_kernel(d as f64, 1e-3, 7).unwrap();
            for (u, &v) in k.iter().enumerate() {
                assert_eq!(v, if u == 6 - d { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn non_positive_sigma_is_rejected() {
        assert!(matches!(gaussian_delay_kernel(1.0, 0.0, 5), Err(Error::InvalidSigma(_))));
        assert!(gaussian_delay_kernel(1.0, -1.0, 5).is_err());
    }

    #[test]
    fn kernel_gradients_match_central_differences() {
        let (d, sigma, dm, h) = (6.3, 2.0, 15, 1e-6);
        let kg = kernel_with_grad(d, sigma, dm).unwrap();
        let kp = gaussian_delay_kernel(d + h, sigma, dm).unwrap();
        let km = gaussian_delay_kernel(d - h, sigma, dm).unwrap();
        let sp = gaussian_delay_kernel(d, sigma + h, dm).unwrap();
        let sm = gaussian_delay_kernel(d, sigma - h, dm).unwrap();
        for u in 0..dm {
            let fd = (kp[u] - km[u]) / (2.0 * h);
            let rel = (fd - kg.d_delay[u]).abs() / fd.abs().max(kg.d_delay[u].abs()).max(1e-12);
            assert!(rel < 1e-5, "u={u} fd={fd} an={}", kg.d_delay[u]);
            let fs = (sp[u] - sm[u]) / (2.0 * h);
            let rel = (fs - kg.d_sigma[u]).abs() / fs.abs().max(kg.d_sigma[u].abs()).max(1e-12);
            assert!(rel < 1e-5, "u={u} fs={fs} an={}", kg.d_sigma[u]);
        }
    }

    fn pulse(steps: usize, at: usize) -> SpikeTrain {
        SpikeTrain::from_events(steps, 1, [(at, 0)]).unwrap()
    }

    #[test]
    fn one_hot_kernel_shifts_pulse() {
        let bank = KernelBank::one_hot(&[3], 8);
        let y = apply_delay_conv(&pulse(10, 2), &bank, DelayMechanism::Axonal, None).unwrap();
        for t in 0..10 {
            assert_eq!(y[[t, 0]], if t == 5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn zero_delay_is_identity() {
        let mut rng = seeded_rng(3);
        let events: Vec<(usize, usize)> = (0..40)
            .filter(|_| rng.bernoulli(0.3))
            .map(|i| (i / 4, i % 4))
            .collect();
        let train = SpikeTrain::from_events(10, 4, events).unwrap();
        let bank = KernelBank::one_hot(&[0; 4], 6);
        let y = apply_delay_conv(&train, &bank, DelayMechanism::Dendritic, None).unwrap();
        for t in 0..10 {
            for c in 0..4 {
                assert_eq!(y[[t, c]], train.get(t, c) as u8 as f64);
            }
        }
    }

    #[test]
    fn gaussian_response_is_reversed_kernel() {
        let bank = KernelBank::gaussian(&[2.0], 0.5, 5).unwrap();
        let k = bank.kernel(0).to_vec();
        let y = apply_delay_conv(&pulse(12, 1), &bank, DelayMechanism::Axonal, None).unwrap();
        let resp: Vec<f64> = (1..6).map(|t| y[[t, 0]]).collect();
        for lag in 0..5 {
            assert!((resp[lag] - k[4 - lag]).abs() < 1e-15);
        }
        let peak = resp.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 2);
        assert!((y.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let bank = KernelBank::one_hot(&[0, 1], 4);
        let train = SpikeTrain::silent(5, 3).unwrap();
        let err = apply_delay_conv(&train, &bank, DelayMechanism::Axonal, None).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    fn set(positions: Vec<f64>, mask: Vec<bool>, d_max: usize) -> DelayParameterSet {
        let n = positions.len();
        DelayParameterSet {
            mechanism: DelayMechanism::Axonal,
            pre: n,
            post: 1,
            d_max,
            sigma: 1.0,
            positions,
            mask,
        }
    }

    #[test]
    fn discretize_rounds_half_up_and_respects_mask() {
        let p = set(vec![1.4, 2.5, 7.2, 0.49, 9.0], vec![true, true, false, true, true], 10);
        assert_eq!(discretize(&p), vec![1, 3, 0, 0, 9]);
    }

    #[test]
    fn clamp_projects_into_window() {
        let dm = 10;
        let mut p = set(vec![-0.3, dm as f64 - 0.5, dm as f64 + 2.0, 4.0], vec![true, true, true, false], dm);
        clamp_delays(&mut p);
        assert_eq!(p.positions, vec![0.0, dm as f64 - 1.0, dm as f64 - 1.0, 0.0]);
    }

    #[test]
    fn interior_point_is_unchanged_by_clamp() {
        let mut p = set(vec![3.7], vec![true], 10);
        clamp_delays(&mut p);
        assert_eq!(p.positions, vec![3.7]);
    }
}
