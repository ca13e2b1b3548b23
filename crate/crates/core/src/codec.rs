//! Residual transform between per-anchor network outputs and boxes.
//!
//! Each anchor's output vector has `35 + n_c` slots in this order:
//!
//! | slots    | field                                           |
//! |----------|-------------------------------------------------|
//! | 0..4     | `t2d = (tx, ty, tw, th)`                        |
//! | 4..6     | `tP = (tx, ty)` projected 3D centre             |
//! | 6..11    | `t3d = (tz, tw, th, tl, tα)`                    |
//! | 11..35   | `tC`: 8 × `(tx, ty, tz)` projected corners      |
//! | 35..     | `n_c` class scores                              |
//!
//! Decoding, with anchor `(Ax, Ay, Aw, Ah)` and prior `(Az, Aw3, Ah3, Al3, Aα)`:
//!
//! ```text
//! x2d = Ax + tx·Aw        w2d = Aw·exp(tw)        z  = Az + tz
//! xP  = Ax + tPx·Aw       w3  = Aw3·exp(tw3)      zm = Az + tCz[m]
//! xm  = Ax + tCx[m]·Aw    ...                     α  = Aα + tα
//! ```
//!
//! (and the same along `y` with `Ay, Ah`). The 3D centre is the
//! back-projection of `(xP, yP)` at depth `z` through the calibration.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::anchors::Anchor;
use crate::geometry::{
    alpha_to_ry, project, project_corners, wrap_angle, Box2D, Box3D, Calibration, GeometryError,
};
use crate::tensor::Tensor;

pub const REGRESSION_LEN: usize = 35;
pub const T2D: usize = 0;
pub const TP: usize = 4;
pub const T3D: usize = 6;
pub const TC: usize = 11;
pub const SCORES: usize = 35;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("anchor has no fitted 3D prior")]
    Unfitted,
    #[error("non-positive size: {0}")]
    NonPositiveSize(&'static str),
    #[error("output vector has {found} values, expected {expected}")]
    BadLength { expected: usize, found: usize },
    #[error("tensor has {found} channels, expected {expected} ({n_a} anchors × {per_anchor})")]
    ChannelMismatch { expected: usize, found: usize, n_a: usize, per_anchor: usize },
    #[error("calibration cannot be inverted for back-projection")]
    SingularCalibration,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A named slot of the output vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Box2d(usize),
    ProjectedCenter(usize),
    Box3d(usize),
    Corner { m: usize, axis: usize },
    Score(usize),
}

/// Field-to-offset map for one anchor's output vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_c: usize,
}

impl Layout {
    pub fn new(n_c: usize) -> Self {
        Self { n_c }
    }

    pub fn len(&self) -> usize {
        REGRESSION_LEN + self.n_c
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Size of the full output map: `h · w · n_a · (35 + n_c)`.
    pub fn total(&self, n_a: usize, h: usize, w: usize) -> usize {
        h * w * n_a * self.len()
    }

    pub fn offset(&self, f: Field) -> usize {
        match f {
            Field::Box2d(i) => T2D + i,
            Field::ProjectedCenter(i) => TP + i,
            Field::Box3d(i) => T3D + i,
            Field::Corner { m, axis } => TC + 3 * m + axis,
            Field::Score(c) => SCORES + c,
        }
    }

    pub fn field(&self, offset: usize) -> Option<Field> {
        Some(match offset {
            o if o < TP => Field::Box2d(o - T2D),
            o if o < T3D => Field::ProjectedCenter(o - TP),
            o if o < TC => Field::Box3d(o - T3D),
            o if o < SCORES => Field::Corner { m: (o - TC) / 3, axis: (o - TC) % 3 },
            o if o < self.len() => Field::Score(o - SCORES),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputVector {
    pub t2d: [f64; 4],
    pub tp: [f64; 2],
    /// `(tz, tw, th, tl, tα)`.
    pub t3d: [f64; 5],
    /// Per corner `(tx, ty, tz)`.
    pub tc: [[f64; 3]; 8],
    pub scores: Vec<f64>,
}

impl OutputVector {
    pub fn zeros(n_c: usize) -> Self {
        Self { t2d: [0.0; 4], tp: [0.0; 2], t3d: [0.0; 5], tc: [[0.0; 3]; 8], scores: vec![0.0; n_c] }
    }

    pub fn from_slice(v: &[f64], n_c: usize) -> Result<Self, CodecError> {
        let expected = REGRESSION_LEN + n_c;
        if v.len() != expected {
            return Err(CodecError::BadLength { expected, found: v.len() });
        }
        let mut out = Self::zeros(n_c);
        out.t2d.copy_from_slice(&v[T2D..TP]);
        out.tp.copy_from_slice(&v[TP..T3D]);
        out.t3d.copy_from_slice(&v[T3D..TC]);
        for (m, c) in out.tc.iter_mut().enumerate() {
            c.copy_from_slice(&v[TC + 3 * m..TC + 3 * m + 3]);
        }
        out.scores.copy_from_slice(&v[SCORES..]);
        Ok(out)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(REGRESSION_LEN + self.scores.len());
        v.extend_from_slice(&self.t2d);
        v.extend_from_slice(&self.tp);
        v.extend_from_slice(&self.t3d);
        self.tc.iter().for_each(|c| v.extend_from_slice(c));
        v.extend_from_slice(&self.scores);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub box2d: Box2D,
    /// Projected 3D centre `(u, v)`.
    pub proj_center: [f64; 2],
    /// Depth used for the back-projection.
    pub depth: f64,
    pub box3d: Box3D,
    /// Per corner `(u, v, depth)`.
    pub corners: [[f64; 3]; 8],
}

fn prior(anchor: &Anchor) -> Result<[f64; 5], CodecError> {
    anchor.a3d.ok_or(CodecError::Unfitted)
}

/// Solves `[u, v, 1]·depth = P·[x, y, z, 1]` for the 3D point.
///
/// An upper-triangular left block (every rectified KITTI camera) is solved
/// by back substitution; anything else goes through the pseudo-inverse.
pub fn back_project(calib: &Calibration, u: f64, v: f64, depth: f64) -> Result<[f64; 3], CodecError> {
    let p = calib.matrix();
    let rhs = Vector3::new(u * depth - p[0][3], v * depth - p[1][3], depth - p[2][3]);
    let k = Matrix3::new(p[0][0], p[0][1], p[0][2], p[1][0], p[1][1], p[1][2], p[2][0], p[2][1], p[2][2]);
    let x = if p[1][0] == 0.0 && p[2][0] == 0.0 && p[2][1] == 0.0 {
        k.solve_upper_triangular(&rhs).ok_or(CodecError::SingularCalibration)?
    } else {
        k.pseudo_inverse(1e-12).map_err(|_| CodecError::SingularCalibration)? * rhs
    };
    Ok([x[0], x[1], x[2]])
}

/// Applies the anchor transform to recover 2D box, projected centre, corners
/// and the 3D box. Class is the arg-max score (first on ties).
pub fn decode(out: &OutputVector, anchor: &Anchor, calib: &Calibration) -> Result<Decoded, CodecError> {
    let [az, aw3, ah3, al3, aalpha] = prior(anchor)?;
    let [ax, ay, aw, ah] = anchor.a2d;
    let box2d = Box2D::new(ax + out.t2d[0] * aw, ay + out.t2d[1] * ah, aw * out.t2d[2].exp(), ah * out.t2d[3].exp());
    let proj_center = [ax + out.tp[0] * aw, ay + out.tp[1] * ah];
    let depth = az + out.t3d[0];
    let dims = [aw3 * out.t3d[1].exp(), ah3 * out.t3d[2].exp(), al3 * out.t3d[3].exp()];
    let alpha = wrap_angle(aalpha + out.t3d[4]);
    let mut corners = [[0.0; 3]; 8];
    for (c, t) in corners.iter_mut().zip(&out.tc) {
        *c = [ax + t[0] * aw, ay + t[1] * ah, az + t[2]];
    }
    let center = back_project(calib, proj_center[0], proj_center[1], depth)?;
    let ry = alpha_to_ry(alpha, center)?;
    let (class_id, score) = out
        .scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    let box3d = Box3D { center, dims, ry, alpha, class_id, score: if out.scores.is_empty() { 0.0 } else { score } };
    Ok(Decoded { box2d, proj_center, depth, box3d, corners })
}

/// Inverse of [`decode`]. The projected centre and corners are computed
/// from `box3d` through `calib`; scores are one-hot on `box3d.class_id`.
pub fn encode(
    box2d: &Box2D,
    box3d: &Box3D,
    anchor: &Anchor,
    calib: &Calibration,
    n_c: usize,
) -> Result<OutputVector, CodecError> {
    let [az, aw3, ah3, al3, aalpha] = prior(anchor)?;
    let [ax, ay, aw, ah] = anchor.a2d;
    if !(aw > 0.0 && ah > 0.0) {
        return Err(CodecError::NonPositiveSize("anchor 2D size"));
    }
    if !(aw3 > 0.0 && ah3 > 0.0 && al3 > 0.0) {
        return Err(CodecError::NonPositiveSize("anchor 3D prior"));
    }
    if !(box2d.w > 0.0 && box2d.h > 0.0) {
        return Err(CodecError::NonPositiveSize("ground-truth 2D box"));
    }
    if box3d.dims.iter().any(|&d| d <= 0.0) {
        return Err(CodecError::NonPositiveSize("ground-truth 3D dimensions"));
    }
    let c = project(calib, box3d.center)?;
    let corners = project_corners(calib, box3d)?;
    let mut out = OutputVector::zeros(n_c);
    out.t2d = [(box2d.cx - ax) / aw, (box2d.cy - ay) / ah, (box2d.w / aw).ln(), (box2d.h / ah).ln()];
    out.tp = [(c.u - ax) / aw, (c.v - ay) / ah];
    out.t3d = [
        c.depth - az,
        (box3d.dims[0] / aw3).ln(),
        (box3d.dims[1] / ah3).ln(),
        (box3d.dims[2] / al3).ln(),
        wrap_angle(box3d.alpha - aalpha),
    ];
    for (t, p) in out.tc.iter_mut().zip(&corners) {
        *t = [(p.u - ax) / aw, (p.v - ay) / ah, p.depth - az];
    }
    if box3d.class_id < n_c {
        out.scores[box3d.class_id] = 1.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub n_c: usize,
    pub stride: usize,
    /// Minimum best-class score for a detection to be emitted.
    pub score_threshold: f64,
    /// Score slot excluded from the arg-max, if any.
    pub background_class: Option<usize>,
}

/// A decoded detection with its grid position.
#[derive(Debug, Clone)]
pub struct GridDetection {
    pub batch: usize,
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
    pub decoded: Decoded,
}

/// Decodes an output map of extents `(n, n_a·(35 + n_c), h, w)`. Channel
/// `a·(35 + n_c) + s` is slot `s` of anchor `a`. Score slots are taken as
/// probabilities as stored.
pub fn decode_map(
    map: &Tensor,
    anchors: &[Anchor],
    calib: &Calibration,
    opts: DecodeOptions,
) -> Result<Vec<GridDetection>, CodecError> {
    let layout = Layout::new(opts.n_c);
    let per = layout.len();
    let [n, c, h, w] = map.dims();
    if c != anchors.len() * per {
        return Err(CodecError::ChannelMismatch {
            expected: anchors.len() * per,
            found: c,
            n_a: anchors.len(),
            per_anchor: per,
        });
    }
    let mut out = Vec::new();
    let mut buf = vec![0.0; per];
    for b in 0..n {
        for row in 0..h {
            for col in 0..w {
                for (ai, anchor) in anchors.iter().enumerate() {
                    for (s, v) in buf.iter_mut().enumerate() {
                        *v = map.at(b, ai * per + s, row, col);
                    }
                    let mut vec = OutputVector::from_slice(&buf, opts.n_c)?;
                    if let Some(bg) = opts.background_class {
                        if bg < vec.scores.len() {
                            vec.scores[bg] = f64::NEG_INFINITY;
                        }
                    }
                    let best = vec.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if best < opts.score_threshold {
                        continue;
                    }
                    let decoded = decode(&vec, &anchor.placed(row, col, opts.stride), calib)?;
                    out.push(GridDetection { batch: b, row, col, anchor: ai, decoded });
                }
            }
        }
    }
    Ok(out)
}
