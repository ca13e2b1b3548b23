//! Detection-head losses on the residual (t-value) space.
//!
//! ```text
//! L = (1 - s_t)^γ · (L_class + L_2d + L_3d + L_corner)
//! ```
//!
//! with `L_class = -ln s_t` and smooth-L1 (β = 1) regression terms. Angle
//! residuals are wrapped before the smooth-L1.

use thiserror::Error;

use crate::codec::OutputVector;
use crate::geometry::wrap_angle;

pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("target-class score {0} outside (0, 1]")]
    ScoreOutOfRange(f64),
    #[error("focusing parameter {0} is negative")]
    NegativeGamma(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("prediction has {pred} class scores, target has {target}")]
    ClassCountMismatch { pred: usize, target: usize },
}

/// What each predicted corner depth is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CornerDepthTarget {
    /// The target's centre depth `tz`, for all eight corners.
    #[default]
    CenterDepth,
    /// The target's own per-corner depth.
    CornerDepths,
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().map(smooth_l1).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Components {
    pub class_loss: f64,
    pub loss_2d: f64,
    pub loss_3d: f64,
    pub loss_corner: f64,
}

impl Components {
    pub fn sum(&self) -> f64 {
        self.class_loss + self.loss_2d + self.loss_3d + self.loss_corner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub class_loss: f64,
    pub loss_2d: f64,
    pub loss_3d: f64,
    pub loss_corner: f64,
    pub focal_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Component-wise sum, for reducing over anchors.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.class_loss += other.class_loss;
        self.loss_2d += other.loss_2d;
        self.loss_3d += other.loss_3d;
        self.loss_corner += other.loss_corner;
        self.focal_weight += other.focal_weight;
        self.total += other.total;
    }
}

fn check_score(s_t: f64) -> Result<(), LossError> {
    if s_t > 0.0 && s_t <= 1.0 {
        Ok(())
    } else {
        Err(LossError::ScoreOutOfRange(s_t))
    }
}

pub fn class_loss(s_t: f64) -> Result<f64, LossError> {
    check_score(s_t)?;
    // -ln(1) is -0.0
    Ok((-s_t.ln()).max(0.0))
}

pub fn focal_weight(s_t: f64, gamma: f64) -> Result<f64, LossError> {
    check_score(s_t)?;
    if gamma.is_nan() || gamma < 0.0 {
        return Err(LossError::NegativeGamma(gamma));
    }
    Ok((1.0 - s_t).powf(gamma))
}

fn finite(v: &OutputVector, what: &'static str) -> Result<(), LossError> {
    if v.to_vec()[..crate::codec::REGRESSION_LEN].iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LossError::NonFinite(what))
    }
}

/// Classification and regression terms for an anchor matched to a target.
///
/// `s_t` is the predicted score of the target class. `L_2d` covers the four
/// 2D residuals; `L_3d` covers `(tz, tw, th, tl, tα)` and the projected
/// centre; `L_corner` is the mean over corners of the `(u, v)` and depth
/// smooth-L1 terms.
pub fn component_losses(
    pred: &OutputVector,
    target: &OutputVector,
    s_t: f64,
    corner_depth: CornerDepthTarget,
) -> Result<Components, LossError> {
    let class_loss = class_loss(s_t)?;
    finite(pred, "prediction")?;
    finite(target, "target")?;
    let loss_2d = smooth_l1_sum((0..4).map(|i| pred.t2d[i] - target.t2d[i]));
    let loss_3d = smooth_l1_sum((0..4).map(|i| pred.t3d[i] - target.t3d[i]))
        + smooth_l1(wrap_angle(pred.t3d[4] - target.t3d[4]))
        + smooth_l1_sum((0..2).map(|i| pred.tp[i] - target.tp[i]));
    let mut corner = 0.0;
    for (p, t) in pred.tc.iter().zip(&target.tc) {
        let z = match corner_depth {
            CornerDepthTarget::CenterDepth => target.t3d[0],
            CornerDepthTarget::CornerDepths => t[2],
        };
        corner += smooth_l1(p[0] - t[0]) + smooth_l1(p[1] - t[1]) + smooth_l1(p[2] - z);
    }
    Ok(Components { class_loss, loss_2d, loss_3d, loss_corner: corner / 8.0 })
}

/// Terms for an anchor with no matched box: classification only, with `s_t`
/// the background score.
pub fn background_components(s_t: f64) -> Result<Components, LossError> {
    Ok(Components { class_loss: class_loss(s_t)?, ..Components::default() })
}

pub fn total_loss(c: Components, s_t: f64, gamma: f64) -> Result<LossBreakdown, LossError> {
    let focal_weight = focal_weight(s_t, gamma)?;
    Ok(LossBreakdown {
        class_loss: c.class_loss,
        loss_2d: c.loss_2d,
        loss_3d: c.loss_3d,
        loss_corner: c.loss_corner,
        focal_weight,
        total: focal_weight * c.sum(),
    })
}
