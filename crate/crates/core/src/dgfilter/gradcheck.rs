//! Central finite-difference check of [`d4lcn_backward`](super::d4lcn_backward).
//!
//! The numeric side only calls the forward pass, so it stays independent of
//! the analytic derivation it is checking.

use crate::tensor::Tensor;

use super::{d4lcn_backward, d4lcn_forward, DGFilterParams, FilterError};

/// Denominator floor so exactly-zero components compare as absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-12;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradGroup {
    Input,
    Depth,
    ConvWeights,
    ConvBias,
}

impl GradGroup {
    pub const ALL: [GradGroup; 4] = [GradGroup::Input, GradGroup::Depth, GradGroup::ConvWeights, GradGroup::ConvBias];

    pub fn name(self) -> &'static str {
        match self {
            GradGroup::Input => "input",
            GradGroup::Depth => "depth",
            GradGroup::ConvWeights => "conv_weights",
            GradGroup::ConvBias => "conv_bias",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: GradGroup,
    pub components: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max)
    }

    pub fn components(&self) -> usize {
        self.groups.iter().map(|g| g.components).sum()
    }
}

/// `Σ upstream ⊙ (f(x+h) − f(x−h)) / 2h` with the outputs differenced
/// element-wise before the (compensated) sum, so unaffected outputs cancel
/// exactly instead of through a large total.
fn central_difference(plus: &Tensor, minus: &Tensor, upstream: &Tensor, step: f64) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for ((a, b), u) in plus.data().iter().zip(minus.data()).zip(upstream.data()) {
        let term = u * (a - b);
        let t = sum + term;
        carry += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    (sum + carry) / (2.0 * step)
}

/// Compares every analytic gradient component against
/// the central difference of `f = Σ upstream ⊙ output`.
pub fn check_gradients(
    input: &Tensor,
    depth: &Tensor,
    p: &DGFilterParams,
    upstream: &Tensor,
    step: f64,
) -> Result<GradCheckReport, FilterError> {
    let analytic = d4lcn_backward(input, depth, p, upstream)?;
    let mut groups = Vec::with_capacity(4);
    for group in GradGroup::ALL {
        let (len, want): (usize, &[f64]) = match group {
            GradGroup::Input => (input.len(), analytic.input.data()),
            GradGroup::Depth => (depth.len(), analytic.depth.data()),
            GradGroup::ConvWeights => (p.conv_weights.len(), analytic.conv_weights.data()),
            GradGroup::ConvBias => (p.conv_bias.len(), &analytic.conv_bias),
        };
        let mut report = GroupReport { group, components: len, max_relative_error: 0.0, worst_index: 0 };
        for (idx, &want) in want.iter().enumerate().take(len) {
            let eval = |delta: f64| -> Result<Tensor, FilterError> {
                let mut i = input.clone();
                let mut d = depth.clone();
                let mut q = p.clone();
                match group {
                    GradGroup::Input => i.data_mut()[idx] += delta,
                    GradGroup::Depth => d.data_mut()[idx] += delta,
                    GradGroup::ConvWeights => q.conv_weights.data_mut()[idx] += delta,
                    GradGroup::ConvBias => q.conv_bias[idx] += delta,
                }
                Ok(d4lcn_forward(&i, &d, &q)?.output)
            };
            let numeric = central_difference(&eval(step)?, &eval(-step)?, upstream, step);
            let err = relative_error(want, numeric);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_index = idx;
            }
        }
        groups.push(report);
    }
    Ok(GradCheckReport { groups })
}

/// One seeded instance: random input, depth, upstream gradient and parameters.
pub fn seeded_instance(
    seed: u64,
    dims: [usize; 4],
    k: usize,
    d: usize,
    n_f: usize,
) -> Result<(Tensor, Tensor, DGFilterParams, Tensor), FilterError> {
    let input = Tensor::random_uniform(dims, -1.0, 1.0, seed);
    let depth = Tensor::random_uniform(dims, 0.0, 2.0, seed.wrapping_add(1));
    let upstream = Tensor::random_uniform(dims, -1.0, 1.0, seed.wrapping_add(2));
    let mut p = DGFilterParams::new(dims[1], k, d, n_f, seed.wrapping_add(3))?;
    // non-zero biases so the softmax is away from uniform
    let bias = Tensor::random_uniform([1, 1, 1, p.conv_bias.len()], -1.0, 1.0, seed.wrapping_add(4));
    p.conv_bias.copy_from_slice(bias.data());
    Ok((input, depth, p, upstream))
}
