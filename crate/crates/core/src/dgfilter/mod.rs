//! Depth-guided dynamic-depthwise-dilated local convolution.
//!
//! Given an image feature map `I` and a depth-derived feature map `D` of the
//! same shape, the local filter at every pixel and channel is the `k × k`
//! window of `D` around that pixel. The filtering result is
//!
//! ```text
//! I' = I ⊙ (1/k²) · Σ_{(gi,gj)} shift(D, (gi, gj))
//! ```
//!
//! and the dilated, adaptive variant mixes `d` dilation rates per channel
//! with softmax weights predicted from `I` itself:
//!
//! ```text
//! I' = 1/(d·k·k) · I ⊙ Σ_w A_w(I) · Σ_{(gi,gj)} shift(D, (gi·w, gj·w))
//! ```
//!
//! One module application runs: channel shift-pooling of `I`, adaptive
//! dilation weights on the pooled map, then the dilated filtering above.
//!
//! Both filtering paths are exposed. [`Mode::Naive`] walks every pixel's
//! window; [`Mode::Fast`] accumulates whole shifted planes. They sum window
//! taps in the same order, so they agree to the last bit in practice.

mod backward;
pub mod bench;
pub mod gradcheck;

pub use backward::{d4lcn_backward, D4lcnGrads};

use rand::{RngExt, SeedableRng};
use rand_xoshiro::SplitMix64;
use thiserror::Error;

use crate::tensor::{ShiftVector, Tensor, TensorError};

pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_MAX_DILATION: usize = 3;
pub const DEFAULT_SHIFT_POOL: usize = 2;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("kernel size must be odd and >= 1, got {0}")]
    EvenKernel(usize),
    #[error("dilation rate must be >= 1")]
    ZeroDilation,
    #[error("shift-pool count {n_f} outside 1..={channels}")]
    PoolCount { n_f: usize, channels: usize },
    #[error("input has {found} channels, parameters expect {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("spatial extent {h}x{w} is smaller than the {d}x{d} pooling grid")]
    SpatialTooSmall { h: usize, w: usize, d: usize },
    #[error("inconsistent parameters: {0}")]
    InvalidParams(String),
}

/// Which filtering path to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Naive,
    Fast,
}

fn check_kernel(k: usize) -> Result<(), FilterError> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(FilterError::EvenKernel(k));
    }
    Ok(())
}

/// Sum of the `k × k` window of `depth` at dilation `rate`, for every pixel.
pub(crate) fn window_sum(depth: &Tensor, k: usize, rate: usize) -> Tensor {
    let mut acc = depth.zeros_like();
    for g in ShiftVector::grid(k) {
        acc.add_shifted(depth, g.scaled(rate), 1.0);
    }
    acc
}

/// Per-pixel window sum, walking the taps in the same order as [`window_sum`].
fn naive_window_at(depth: &Tensor, n: usize, c: usize, y: usize, x: usize, k: usize, rate: usize) -> f64 {
    let r = (k / 2) as isize;
    let rate = rate as isize;
    let (h, w) = (depth.height() as isize, depth.width() as isize);
    let mut s = 0.0;
    for gi in -r..=r {
        for gj in -r..=r {
            let sy = y as isize - gi * rate;
            let sx = x as isize - gj * rate;
            if sy >= 0 && sy < h && sx >= 0 && sx < w {
                s += depth.at(n, c, sy as usize, sx as usize);
            }
        }
    }
    s
}

/// Depthwise local filtering with a single dilation rate.
pub fn dlcn_forward_dilated(
    input: &Tensor,
    depth: &Tensor,
    k: usize,
    rate: usize,
    mode: Mode,
) -> Result<Tensor, FilterError> {
    check_kernel(k)?;
    if rate == 0 {
        return Err(FilterError::ZeroDilation);
    }
    input.check_same_dims(depth)?;
    let scale = 1.0 / (k * k) as f64;
    let mut out = input.zeros_like();
    match mode {
        Mode::Fast => {
            let acc = window_sum(depth, k, rate);
            for ((o, &i), &a) in out.data_mut().iter_mut().zip(input.data()).zip(acc.data()) {
                *o = i * a * scale;
            }
        }
        Mode::Naive => {
            let [n, c, h, w] = input.dims();
            for ni in 0..n {
                for ci in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let a = naive_window_at(depth, ni, ci, y, x, k, rate);
                            *out.at_mut(ni, ci, y, x) = input.at(ni, ci, y, x) * a * scale;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Depthwise local filtering: `I ⊙ (1/k²)·Σ_g shift(D, g)`.
pub fn dlcn_forward(input: &Tensor, depth: &Tensor, k: usize, mode: Mode) -> Result<Tensor, FilterError> {
    dlcn_forward_dilated(input, depth, k, 1, mode)
}

/// Element-wise mean of `input` and its cyclic channel rotations by `1..n_f`.
pub fn shift_pool(input: &Tensor, n_f: usize) -> Result<Tensor, FilterError> {
    let channels = input.channels();
    if n_f == 0 || n_f > channels {
        return Err(FilterError::PoolCount { n_f, channels });
    }
    if n_f == 1 {
        return Ok(input.clone());
    }
    let mut sum = input.clone();
    for s in 1..n_f {
        let rotated = input.channel_rotate(s as isize);
        for (a, b) in sum.data_mut().iter_mut().zip(rotated.data()) {
            *a += b;
        }
    }
    let nf = n_f as f64;
    sum.data_mut().iter_mut().for_each(|v| *v /= nf);
    Ok(sum)
}

/// Operator hyperparameters plus the learnable convolution of the adaptive
/// dilation function.
#[derive(Debug, Clone, PartialEq)]
pub struct DGFilterParams {
    pub k: usize,
    pub d: usize,
    pub n_f: usize,
    pub channels: usize,
    /// Extents `(d·c, c, d, d)`. Output row `ch·d + w` is the logit of
    /// dilation rate `w + 1` for channel `ch`.
    pub conv_weights: Tensor,
    /// `d·c` biases.
    pub conv_bias: Vec<f64>,
}

impl DGFilterParams {
    /// Weights uniform in `±1/(d·√c)` from a seeded stream, zero bias.
    pub fn new(channels: usize, k: usize, d: usize, n_f: usize, seed: u64) -> Result<Self, FilterError> {
        let mut p = Self::zeroed(channels, k, d, n_f)?;
        let bound = 1.0 / (d as f64 * (channels as f64).sqrt());
        let mut rng = SplitMix64::seed_from_u64(seed);
        for v in p.conv_weights.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Ok(p)
    }

    pub fn zeroed(channels: usize, k: usize, d: usize, n_f: usize) -> Result<Self, FilterError> {
        check_kernel(k)?;
        if d == 0 {
            return Err(FilterError::ZeroDilation);
        }
        if channels == 0 {
            return Err(FilterError::InvalidParams("channel count must be >= 1".into()));
        }
        if n_f == 0 || n_f > channels {
            return Err(FilterError::PoolCount { n_f, channels });
        }
        Ok(Self {
            k,
            d,
            n_f,
            channels,
            conv_weights: Tensor::zeros([d * channels, channels, d, d]),
            conv_bias: vec![0.0; d * channels],
        })
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        check_kernel(self.k)?;
        if self.d == 0 {
            return Err(FilterError::ZeroDilation);
        }
        if self.n_f == 0 || self.n_f > self.channels {
            return Err(FilterError::PoolCount { n_f: self.n_f, channels: self.channels });
        }
        let want = [self.d * self.channels, self.channels, self.d, self.d];
        if self.conv_weights.dims() != want {
            return Err(FilterError::InvalidParams(format!(
                "conv_weights extents {:?}, expected {want:?}",
                self.conv_weights.dims()
            )));
        }
        if self.conv_bias.len() != self.d * self.channels {
            return Err(FilterError::InvalidParams(format!(
                "conv_bias has {} values, expected {}",
                self.conv_bias.len(),
                self.d * self.channels
            )));
        }
        Ok(())
    }

    /// Index of the logit for channel `ch`, dilation index `w` (rate `w + 1`).
    #[inline]
    pub fn logit_index(&self, ch: usize, w: usize) -> usize {
        ch * self.d + w
    }
}

/// Softmax mixing weights over dilation rates, extents `(n, c, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationWeights {
    n: usize,
    c: usize,
    d: usize,
    values: Vec<f64>,
}

impl DilationWeights {
    pub fn new(n: usize, c: usize, d: usize, values: Vec<f64>) -> Result<Self, FilterError> {
        if values.len() != n * c * d || n == 0 || c == 0 || d == 0 {
            return Err(FilterError::InvalidParams(format!(
                "{} dilation weights for extents ({n}, {c}, {d})",
                values.len()
            )));
        }
        Ok(Self { n, c, d, values })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.c, self.d)
    }

    /// Weight of dilation rate `w + 1` for batch item `n`, channel `c`.
    #[inline]
    pub fn at(&self, n: usize, c: usize, w: usize) -> f64 {
        self.values[(n * self.c + c) * self.d + w]
    }

    pub fn row(&self, n: usize, c: usize) -> &[f64] {
        let s = (n * self.c + c) * self.d;
        &self.values[s..s + self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(n, c, d, 1)` tensor for the `DTEN` format.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([self.n, self.c, self.d, 1], self.values.clone()).expect("extents checked at construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, FilterError> {
        let [n, c, d, one] = t.dims();
        if one != 1 {
            return Err(FilterError::InvalidParams(format!("dilation weights tensor has width {one}, expected 1")));
        }
        Self::new(n, c, d, t.data().to_vec())
    }
}

/// Adaptive max pool of each plane onto a `d × d` grid. Bucket `i` along an
/// axis of length `len` covers `floor(i·len/d) .. floor((i+1)·len/d)`.
#[derive(Debug, Clone)]
pub(crate) struct PooledMax {
    /// `(n, c, d, d)` row-major.
    pub values: Vec<f64>,
    /// Plane offset `y·w + x` of each maximum; first in scan order on ties.
    pub argmax: Vec<usize>,
}

#[inline]
fn bucket(i: usize, len: usize, d: usize) -> (usize, usize) {
    (i * len / d, (i + 1) * len / d)
}

pub(crate) fn adaptive_max_pool(input: &Tensor, d: usize) -> PooledMax {
    let [n, c, h, w] = input.dims();
    let mut values = Vec::with_capacity(n * c * d * d);
    let mut argmax = Vec::with_capacity(n * c * d * d);
    for ni in 0..n {
        for ci in 0..c {
            let plane = input.plane(ni, ci);
            for i in 0..d {
                let (y0, y1) = bucket(i, h, d);
                for j in 0..d {
                    let (x0, x1) = bucket(j, w, d);
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = y0 * w + x0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let v = plane[y * w + x];
                            if v > best {
                                best = v;
                                best_at = y * w + x;
                            }
                        }
                    }
                    values.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    PooledMax { values, argmax }
}

/// Logits `(n, d·c)`: a `d × d` valid convolution of the pooled map.
pub(crate) fn dilation_logits(pooled: &PooledMax, p: &DGFilterParams, n: usize) -> Vec<f64> {
    let row = p.channels * p.d * p.d;
    let w = p.conv_weights.data();
    let mut logits = Vec::with_capacity(n * p.d * p.channels);
    for ni in 0..n {
        let m = &pooled.values[ni * row..(ni + 1) * row];
        for o in 0..p.d * p.channels {
            let wr = &w[o * row..(o + 1) * row];
            let dot: f64 = wr.iter().zip(m).map(|(a, b)| a * b).sum();
            logits.push(p.conv_bias[o] + dot);
        }
    }
    logits
}

fn softmax_rows(logits: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / z));
    }
    out
}

fn check_adaptive_inputs(input: &Tensor, p: &DGFilterParams) -> Result<(), FilterError> {
    p.validate()?;
    if input.channels() != p.channels {
        return Err(FilterError::ChannelMismatch { expected: p.channels, found: input.channels() });
    }
    if input.height() < p.d || input.width() < p.d {
        return Err(FilterError::SpatialTooSmall { h: input.height(), w: input.width(), d: p.d });
    }
    Ok(())
}

/// Adaptive dilation weights: max pool to `d × d`, a `d × d` convolution to
/// `d·c` logits, reshape to `(c, d)` and softmax over the dilation axis.
pub fn adaptive_weights(input: &Tensor, p: &DGFilterParams) -> Result<DilationWeights, FilterError> {
    check_adaptive_inputs(input, p)?;
    let pooled = adaptive_max_pool(input, p.d);
    let logits = dilation_logits(&pooled, p, input.batch());
    DilationWeights::new(input.batch(), p.channels, p.d, softmax_rows(&logits, p.d))
}

#[derive(Debug, Clone)]
pub struct D4lcnOutput {
    pub output: Tensor,
    pub weights: DilationWeights,
}

/// Intermediates shared by the forward and backward passes.
pub(crate) struct ForwardState {
    pub pooled_input: Tensor,
    pub max_pool: PooledMax,
    pub weights: DilationWeights,
    /// Window sums of the depth map, one per dilation rate.
    pub window_sums: Vec<Tensor>,
    /// `Σ_w A_w ⊙ S_w`.
    pub mixed: Tensor,
    pub scale: f64,
}

pub(crate) fn forward_state(input: &Tensor, depth: &Tensor, p: &DGFilterParams) -> Result<ForwardState, FilterError> {
    input.check_same_dims(depth)?;
    check_adaptive_inputs(input, p)?;
    let pooled_input = shift_pool(input, p.n_f)?;
    let max_pool = adaptive_max_pool(&pooled_input, p.d);
    let logits = dilation_logits(&max_pool, p, input.batch());
    let weights = DilationWeights::new(input.batch(), p.channels, p.d, softmax_rows(&logits, p.d))?;
    let window_sums: Vec<Tensor> = (1..=p.d).map(|rate| window_sum(depth, p.k, rate)).collect();
    let mut mixed = depth.zeros_like();
    let [n, c, _, _] = depth.dims();
    for ni in 0..n {
        for ci in 0..c {
            let dst = mixed.plane_mut(ni, ci);
            for (wi, s) in window_sums.iter().enumerate() {
                let a = weights.at(ni, ci, wi);
                for (m, &v) in dst.iter_mut().zip(s.plane(ni, ci)) {
                    *m += a * v;
                }
            }
        }
    }
    let scale = 1.0 / (p.d * p.k * p.k) as f64;
    Ok(ForwardState { pooled_input, max_pool, weights, window_sums, mixed, scale })
}

/// The dilated filtering stage with caller-supplied dilation weights, no
/// shift-pooling and no weight prediction.
pub fn dilated_filter(
    input: &Tensor,
    depth: &Tensor,
    k: usize,
    weights: &DilationWeights,
    mode: Mode,
) -> Result<Tensor, FilterError> {
    input.check_same_dims(depth)?;
    check_kernel(k)?;
    let (wn, wc, d) = weights.dims();
    let [n, c, h, w] = input.dims();
    if (wn, wc) != (n, c) {
        return Err(FilterError::InvalidParams(format!("weights are {wn}x{wc}, input is {n}x{c}")));
    }
    let scale = 1.0 / (d * k * k) as f64;
    let mut output = input.zeros_like();
    match mode {
        Mode::Fast => {
            let sums: Vec<Tensor> = (1..=d).map(|rate| window_sum(depth, k, rate)).collect();
            for ni in 0..n {
                for ci in 0..c {
                    let mut mixed = vec![0.0; h * w];
                    for (wi, s) in sums.iter().enumerate() {
                        let a = weights.at(ni, ci, wi);
                        for (m, &v) in mixed.iter_mut().zip(s.plane(ni, ci)) {
                            *m += a * v;
                        }
                    }
                    let src = input.plane(ni, ci).to_vec();
                    for ((o, i), m) in output.plane_mut(ni, ci).iter_mut().zip(src).zip(mixed) {
                        *o = i * m * scale;
                    }
                }
            }
        }
        Mode::Naive => {
            for ni in 0..n {
                for ci in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let mut mixed = 0.0;
                            for wi in 0..d {
                                mixed += weights.at(ni, ci, wi) * naive_window_at(depth, ni, ci, y, x, k, wi + 1);
                            }
                            *output.at_mut(ni, ci, y, x) = input.at(ni, ci, y, x) * mixed * scale;
                        }
                    }
                }
            }
        }
    }
    Ok(output)
}

/// Full operator on the fast path. Returns the filtered map and the
/// dilation weights used to produce it.
pub fn d4lcn_forward(input: &Tensor, depth: &Tensor, p: &DGFilterParams) -> Result<D4lcnOutput, FilterError> {
    d4lcn_forward_mode(input, depth, p, Mode::Fast)
}

pub fn d4lcn_forward_mode(
    input: &Tensor,
    depth: &Tensor,
    p: &DGFilterParams,
    mode: Mode,
) -> Result<D4lcnOutput, FilterError> {
    match mode {
        Mode::Fast => {
            let st = forward_state(input, depth, p)?;
            let mut output = st.pooled_input.zeros_like();
            for ((o, &i), &m) in output.data_mut().iter_mut().zip(st.pooled_input.data()).zip(st.mixed.data()) {
                *o = i * m * st.scale;
            }
            Ok(D4lcnOutput { output, weights: st.weights })
        }
        Mode::Naive => {
            input.check_same_dims(depth)?;
            check_adaptive_inputs(input, p)?;
            let pooled_input = shift_pool(input, p.n_f)?;
            let weights = adaptive_weights(&pooled_input, p)?;
            let output = dilated_filter(&pooled_input, depth, p.k, &weights, Mode::Naive)?;
            Ok(D4lcnOutput { output, weights })
        }
    }
}

/// Fraction of mass on each dilation rate, averaged over batch items and
/// channels. Uses a running mean so identical rows reproduce exactly.
pub fn dilation_histogram(weights: &DilationWeights) -> Vec<f64> {
    let (n, c, d) = weights.dims();
    let mut mean = vec![0.0; d];
    let mut count = 0.0;
    for ni in 0..n {
        for ci in 0..c {
            count += 1.0;
            for (m, &v) in mean.iter_mut().zip(weights.row(ni, ci)) {
                *m += (v - *m) / count;
            }
        }
    }
    mean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(dims: [usize; 4]) -> Tensor {
        Tensor::filled(dims, 1.0)
    }

    #[test]
    fn k1_is_hadamard_product() {
        let i = Tensor::random_uniform([2, 3, 4, 5], -1.0, 1.0, 1);
        let d = Tensor::random_uniform([2, 3, 4, 5], -1.0, 1.0, 2);
        let prod = i.mul(&d).unwrap();
        for mode in [Mode::Naive, Mode::Fast] {
            assert_eq!(dlcn_forward(&i, &d, 1, mode).unwrap(), prod);
        }
    }

    #[test]
    fn ones_3x3_window_fractions() {
        let out = dlcn_forward(&ones([1, 1, 3, 3]), &ones([1, 1, 3, 3]), 3, Mode::Fast).unwrap();
        // zero-padded window counts: 4 at corners, 6 on edges, 9 in the centre
        let expect = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0].map(|v: f64| v / 9.0);
        for (a, b) in out.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.at(0, 0, 1, 1), 1.0);
    }

    #[test]
    fn zero_depth_annihilates() {
        let i = Tensor::random_uniform([1, 2, 5, 5], -1.0, 1.0, 9);
        let out = dlcn_forward(&i, &Tensor::zeros([1, 2, 5, 5]), 3, Mode::Naive).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dlcn_errors() {
        let a = Tensor::zeros([1, 1, 3, 3]);
        let b = Tensor::zeros([1, 1, 3, 4]);
        assert!(matches!(dlcn_forward(&a, &b, 3, Mode::Fast), Err(FilterError::Tensor(_))));
        assert!(matches!(dlcn_forward(&a, &a, 2, Mode::Fast), Err(FilterError::EvenKernel(2))));
        assert!(matches!(dlcn_forward(&a, &a, 0, Mode::Naive), Err(FilterError::EvenKernel(0))));
    }

    #[test]
    fn shift_pool_cases() {
        let i = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 5.0, 8.0]).unwrap();
        assert_eq!(shift_pool(&i, 1).unwrap(), i);
        let p = shift_pool(&i, 2).unwrap();
        assert_eq!(p.data(), &[3.0, 5.0, 3.0, 5.0]);
        let k = Tensor::filled([1, 5, 2, 2], 1.5);
        for n_f in 1..=5 {
            assert_eq!(shift_pool(&k, n_f).unwrap(), k);
        }
        assert!(matches!(shift_pool(&i, 0), Err(FilterError::PoolCount { .. })));
        assert!(matches!(shift_pool(&i, 3), Err(FilterError::PoolCount { n_f: 3, channels: 2 })));
    }

    #[test]
    fn shift_pool_is_homogeneous() {
        let i = Tensor::random_uniform([2, 6, 4, 4], -2.0, 2.0, 5);
        let a = shift_pool(&i.scale(3.5), 3).unwrap();
        let b = shift_pool(&i, 3).unwrap().scale(3.5);
        assert!(a.max_abs_diff(&b).unwrap() < 1e-13);
    }

    #[test]
    fn zero_params_give_uniform_weights() {
        let p = DGFilterParams::zeroed(4, 3, 3, 1).unwrap();
        let w = adaptive_weights(&Tensor::random_uniform([2, 4, 6, 6], -1.0, 1.0, 0), &p).unwrap();
        assert!(w.values().iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn single_dilation_weight_is_one() {
        let p = DGFilterParams::new(3, 3, 1, 1, 11).unwrap();
        let w = adaptive_weights(&Tensor::random_uniform([1, 3, 4, 4], -1.0, 1.0, 0), &p).unwrap();
        assert!(w.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn biased_logits_softmax() {
        let mut p = DGFilterParams::zeroed(2, 3, 3, 1).unwrap();
        let at = p.logit_index(1, 0);
        p.conv_bias[at] = 10.0;
        let w = adaptive_weights(&Tensor::zeros([1, 2, 3, 3]), &p).unwrap();
        // softmax(10, 0, 0) = (e^10, 1, 1) / (e^10 + 2)
        let z = 10f64.exp() + 2.0;
        assert!((w.at(0, 1, 0) - 10f64.exp() / z).abs() < 1e-15);
        assert!((w.at(0, 1, 0) - 0.99991).abs() < 1e-5);
        assert!((w.at(0, 1, 1) - 4.5e-5).abs() < 1e-6);
        assert_eq!(w.row(0, 0), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn adaptive_weight_errors() {
        let p = DGFilterParams::zeroed(2, 3, 3, 1).unwrap();
        assert!(matches!(
            adaptive_weights(&Tensor::zeros([1, 3, 4, 4]), &p),
            Err(FilterError::ChannelMismatch { expected: 2, found: 3 })
        ));
        assert!(matches!(
            adaptive_weights(&Tensor::zeros([1, 2, 2, 4]), &p),
            Err(FilterError::SpatialTooSmall { .. })
        ));
    }

    #[test]
    fn adaptive_pool_buckets() {
        // 5 rows into 3 buckets: [0,1) [1,3) [3,5)
        assert_eq!(bucket(0, 5, 3), (0, 1));
        assert_eq!(bucket(1, 5, 3), (1, 3));
        assert_eq!(bucket(2, 5, 3), (3, 5));
        let t = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 4.0, 4.0, 2.0]).unwrap();
        let pm = adaptive_max_pool(&t, 1);
        assert_eq!(pm.values, vec![4.0]);
        assert_eq!(pm.argmax, vec![1]);
    }

    #[test]
    fn params_validation() {
        assert!(matches!(DGFilterParams::zeroed(2, 4, 3, 1), Err(FilterError::EvenKernel(4))));
        assert!(matches!(DGFilterParams::zeroed(2, 3, 0, 1), Err(FilterError::ZeroDilation)));
        assert!(matches!(DGFilterParams::zeroed(2, 3, 3, 3), Err(FilterError::PoolCount { .. })));
        let mut p = DGFilterParams::new(4, 3, 3, 2, 0).unwrap();
        let bound = 1.0 / (3.0 * 2.0);
        assert!(p.conv_weights.data().iter().all(|v| v.abs() <= bound));
        p.conv_bias.pop();
        assert!(matches!(p.validate(), Err(FilterError::InvalidParams(_))));
    }

    #[test]
    fn reduces_to_dlcn_when_d_is_one() {
        let i = Tensor::random_uniform([2, 3, 7, 6], -1.0, 1.0, 21);
        let d = Tensor::random_uniform([2, 3, 7, 6], -1.0, 1.0, 22);
        let p = DGFilterParams::new(3, 3, 1, 1, 23).unwrap();
        let out = d4lcn_forward(&i, &d, &p).unwrap().output;
        assert!(out.max_abs_diff(&dlcn_forward(&i, &d, 3, Mode::Fast).unwrap()).unwrap() <= 1e-15);
    }

    #[test]
    fn naive_and_fast_operator_agree() {
        let i = Tensor::random_uniform([2, 4, 9, 8], -1.0, 1.0, 31);
        let d = Tensor::random_uniform([2, 4, 9, 8], -1.0, 1.0, 32);
        let p = DGFilterParams::new(4, 3, 3, 2, 33).unwrap();
        let a = d4lcn_forward_mode(&i, &d, &p, Mode::Naive).unwrap();
        let b = d4lcn_forward_mode(&i, &d, &p, Mode::Fast).unwrap();
        assert!(a.output.max_abs_diff(&b.output).unwrap() <= 1e-12);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn histogram_cases() {
        let uniform = DilationWeights::new(2, 3, 3, vec![1.0 / 3.0; 18]).unwrap();
        assert_eq!(dilation_histogram(&uniform), vec![1.0 / 3.0; 3]);
        let first = DilationWeights::new(1, 2, 3, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(dilation_histogram(&first), vec![1.0, 0.0, 0.0]);
        let split = DilationWeights::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dilation_histogram(&split), vec![0.5, 0.5]);
    }

    #[test]
    fn weights_tensor_round_trip() {
        let w = DilationWeights::new(1, 2, 3, vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8]).unwrap();
        let t = w.to_tensor();
        assert_eq!(t.dims(), [1, 2, 3, 1]);
        assert_eq!(DilationWeights::from_tensor(&t).unwrap(), w);
    }
}
