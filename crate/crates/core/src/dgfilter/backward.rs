use crate::tensor::{ShiftVector, Tensor};

use super::{forward_state, DGFilterParams, FilterError};

/// Gradients of `Σ upstream ⊙ output` for one operator application.
#[derive(Debug, Clone)]
pub struct D4lcnGrads {
    pub input: Tensor,
    pub depth: Tensor,
    pub conv_weights: Tensor,
    pub conv_bias: Vec<f64>,
}

/// Analytic backward pass of [`super::d4lcn_forward`].
///
/// Max pooling routes its gradient to the recorded argmax (first in scan
/// order on ties), so the result is a subgradient at ties.
pub fn d4lcn_backward(
    input: &Tensor,
    depth: &Tensor,
    p: &DGFilterParams,
    upstream: &Tensor,
) -> Result<D4lcnGrads, FilterError> {
    input.check_same_dims(upstream)?;
    let st = forward_state(input, depth, p)?;
    let [n, c, _, _] = input.dims();
    let d = p.d;

    // out = scale · P ⊙ M
    let mut grad_pooled = input.zeros_like();
    let mut grad_mixed = input.zeros_like();
    for (((gp, gm), (&g, &pv)), &mv) in grad_pooled
        .data_mut()
        .iter_mut()
        .zip(grad_mixed.data_mut().iter_mut())
        .zip(upstream.data().iter().zip(st.pooled_input.data()))
        .zip(st.mixed.data())
    {
        *gp = st.scale * g * mv;
        *gm = st.scale * g * pv;
    }

    // M = Σ_w A_w S_w, S_w = Σ_g shift(D, g·w); the adjoint of a shift is the opposite shift.
    let mut grad_depth = input.zeros_like();
    let mut grad_weights = vec![0.0; n * c * d];
    for (wi, sums) in st.window_sums.iter().enumerate() {
        let mut weighted = input.zeros_like();
        for ni in 0..n {
            for ci in 0..c {
                let a = st.weights.at(ni, ci, wi);
                let gm = grad_mixed.plane(ni, ci);
                grad_weights[(ni * c + ci) * d + wi] = gm.iter().zip(sums.plane(ni, ci)).map(|(x, y)| x * y).sum();
                for (dst, &g) in weighted.plane_mut(ni, ci).iter_mut().zip(gm) {
                    *dst = a * g;
                }
            }
        }
        for g in ShiftVector::grid(p.k) {
            grad_depth.add_shifted(&weighted, -g.scaled(wi + 1), 1.0);
        }
    }

    // softmax over each (n, c) row
    let mut grad_logits = vec![0.0; n * c * d];
    for ni in 0..n {
        for ci in 0..c {
            let a = st.weights.row(ni, ci);
            let base = (ni * c + ci) * d;
            let ga = &grad_weights[base..base + d];
            let dot: f64 = a.iter().zip(ga).map(|(x, y)| x * y).sum();
            for wi in 0..d {
                grad_logits[base + wi] = a[wi] * (ga[wi] - dot);
            }
        }
    }

    // logits[n, o] = b[o] + Σ W[o, :] · pooled_max[n, :]
    let row = c * d * d;
    let wdata = p.conv_weights.data();
    let mut grad_conv = p.conv_weights.zeros_like();
    let mut grad_bias = vec![0.0; d * c];
    let mut grad_max = vec![0.0; n * row];
    for ni in 0..n {
        let m = &st.max_pool.values[ni * row..(ni + 1) * row];
        for o in 0..d * c {
            let gl = grad_logits[ni * d * c + o];
            grad_bias[o] += gl;
            let gw = &mut grad_conv.data_mut()[o * row..(o + 1) * row];
            for (g, &mv) in gw.iter_mut().zip(m) {
                *g += gl * mv;
            }
            let wr = &wdata[o * row..(o + 1) * row];
            for (g, &wv) in grad_max[ni * row..(ni + 1) * row].iter_mut().zip(wr) {
                *g += gl * wv;
            }
        }
    }
    for ni in 0..n {
        for ci in 0..c {
            let cell0 = (ni * c + ci) * d * d;
            let plane = grad_pooled.plane_mut(ni, ci);
            for cell in 0..d * d {
                plane[st.max_pool.argmax[cell0 + cell]] += grad_max[cell0 + cell];
            }
        }
    }

    // P = (1/n_f) Σ_s rotate(I, s)
    let grad_input = if p.n_f == 1 {
        grad_pooled
    } else {
        let mut acc = grad_pooled.clone();
        for s in 1..p.n_f {
            let r = grad_pooled.channel_rotate(-(s as isize));
            for (a, b) in acc.data_mut().iter_mut().zip(r.data()) {
                *a += b;
            }
        }
        let nf = p.n_f as f64;
        acc.data_mut().iter_mut().for_each(|v| *v /= nf);
        acc
    };

    Ok(D4lcnGrads { input: grad_input, depth: grad_depth, conv_weights: grad_conv, conv_bias: grad_bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgfilter::DGFilterParams;

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let i = Tensor::random_uniform([1, 3, 6, 6], -1.0, 1.0, 1);
        let d = Tensor::random_uniform([1, 3, 6, 6], -1.0, 1.0, 2);
        let p = DGFilterParams::new(3, 3, 2, 2, 3).unwrap();
        let g = d4lcn_backward(&i, &d, &p, &i.zeros_like()).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.depth.data().iter().all(|&v| v == 0.0));
        assert!(g.conv_weights.data().iter().all(|&v| v == 0.0));
        assert!(g.conv_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_case_is_product_rule() {
        let i = Tensor::random_uniform([2, 2, 3, 4], -1.0, 1.0, 4);
        let d = Tensor::random_uniform([2, 2, 3, 4], -1.0, 1.0, 5);
        let up = Tensor::random_uniform([2, 2, 3, 4], -1.0, 1.0, 6);
        let p = DGFilterParams::new(2, 1, 1, 1, 7).unwrap();
        let g = d4lcn_backward(&i, &d, &p, &up).unwrap();
        assert!(g.input.max_abs_diff(&up.mul(&d).unwrap()).unwrap() < 1e-15);
        assert!(g.depth.max_abs_diff(&up.mul(&i).unwrap()).unwrap() < 1e-15);
        // a single dilation rate has a constant softmax, so A receives no gradient
        assert!(g.conv_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upstream_shape_is_checked() {
        let i = Tensor::zeros([1, 2, 4, 4]);
        let p = DGFilterParams::zeroed(2, 3, 2, 1).unwrap();
        assert!(matches!(
            d4lcn_backward(&i, &i, &p, &Tensor::zeros([1, 2, 4, 5])),
            Err(FilterError::Tensor(_))
        ));
    }
}
