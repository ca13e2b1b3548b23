//! Camera projection, 3D box corners, pose conversion, IoU, NMS and
//! hill-climbing refinement of the allocentric pose.
//!
//! Conventions:
//! - camera coordinates: `x` right, `y` down, `z` forward, meters;
//! - box dimensions are `(w, h, l)` along the box's local `(x, y, z)` axes;
//! - `ry` rotates about the camera `y` axis, `R_y = [[c, 0, s], [0, 1, 0], [-s, 0, c]]`;
//! - the viewing angle of a point is `θ = atan2(x, z)` and `α = wrap(ry − θ)`;
//! - angles are wrapped to `(−π, π]`;
//! - for the 3D overlap the vertical extent of a box is `[y − h, y]`.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point projects behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("object centre lies on the camera plane (z = 0)")]
    OnCameraPlane,
    #[error("degenerate box footprint")]
    DegenerateFootprint,
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
}

/// Wraps an angle to `(−π, π]`. Angles already in range are returned unchanged.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// 3×4 camera projection matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    p: [[f64; 4]; 3],
}

impl Calibration {
    /// Normalises so that `P[2][2] = 1` and checks the focal lengths.
    pub fn new(p: [[f64; 4]; 3]) -> Result<Self, GeometryError> {
        let s = p[2][2];
        if !s.is_finite() || s == 0.0 {
            return Err(GeometryError::InvalidCalibration(format!("P[2][2] = {s}")));
        }
        let mut p = p;
        if s != 1.0 {
            for row in &mut p {
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
        }
        if !(p[0][0] > 0.0 && p[1][1] > 0.0) {
            return Err(GeometryError::InvalidCalibration(format!(
                "focal lengths must be positive, got {} and {}",
                p[0][0], p[1][1]
            )));
        }
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidCalibration("non-finite entry".into()));
        }
        Ok(Self { p })
    }

    pub fn from_row_major(values: &[f64; 12]) -> Result<Self, GeometryError> {
        let mut p = [[0.0; 4]; 3];
        for (i, v) in values.iter().enumerate() {
            p[i / 4][i % 4] = *v;
        }
        Self::new(p)
    }

    /// Pinhole intrinsics with a zero fourth column.
    pub fn from_intrinsics(focal: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::new([[focal, 0.0, cx, 0.0], [0.0, focal, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    }

    pub fn matrix(&self) -> &[[f64; 4]; 3] {
        &self.p
    }

    pub fn row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (i, v) in self.p.iter().flatten().enumerate() {
            out[i] = *v;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// `[u, v, 1]ᵀ · depth = P · [x, y, z, 1]ᵀ`.
pub fn project(calib: &Calibration, p: [f64; 3]) -> Result<Projection, GeometryError> {
    let m = &calib.p;
    let row = |r: usize| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
    let depth = row(2);
    if depth <= 0.0 || !depth.is_finite() {
        return Err(GeometryError::BehindCamera(depth));
    }
    Ok(Projection { u: row(0) / depth, v: row(1) / depth, depth })
}

/// Viewing angle `atan2(x, z)` of a point in front of the camera plane.
pub fn viewing_angle(center: [f64; 3]) -> Result<f64, GeometryError> {
    if center[2] == 0.0 {
        return Err(GeometryError::OnCameraPlane);
    }
    Ok(center[0].atan2(center[2]))
}

/// Egocentric yaw to allocentric pose: `α = wrap(ry − θ)`.
pub fn ry_to_alpha(ry: f64, center: [f64; 3]) -> Result<f64, GeometryError> {
    Ok(wrap_angle(ry - viewing_angle(center)?))
}

/// Allocentric pose to egocentric yaw: `ry = wrap(α + θ)`.
pub fn alpha_to_ry(alpha: f64, center: [f64; 3]) -> Result<f64, GeometryError> {
    Ok(wrap_angle(alpha + viewing_angle(center)?))
}

/// Axis-aligned 2D box in centre/size form, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2D {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_ltrb(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self { cx: 0.5 * (left + right), cy: 0.5 * (top + bottom), w: right - left, h: bottom - top }
    }

    pub fn left(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn top(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn ltrb(&self) -> [f64; 4] {
        [self.left(), self.top(), self.right(), self.bottom()]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    /// `(x, y, z)` in camera coordinates.
    pub center: [f64; 3],
    /// `(w, h, l)`.
    pub dims: [f64; 3],
    /// Egocentric yaw.
    pub ry: f64,
    /// Allocentric pose, kept equal to `wrap(ry − θ(center))`.
    pub alpha: f64,
    pub class_id: usize,
    pub score: f64,
}

impl Box3D {
    pub fn from_ry(center: [f64; 3], dims: [f64; 3], ry: f64) -> Result<Self, GeometryError> {
        let ry = wrap_angle(ry);
        Ok(Self { center, dims, ry, alpha: ry_to_alpha(ry, center)?, class_id: 0, score: 1.0 })
    }

    pub fn from_alpha(center: [f64; 3], dims: [f64; 3], alpha: f64) -> Result<Self, GeometryError> {
        let alpha = wrap_angle(alpha);
        Ok(Self { center, dims, ry: alpha_to_ry(alpha, center)?, alpha, class_id: 0, score: 1.0 })
    }

    pub fn with_class(mut self, class_id: usize, score: f64) -> Self {
        self.class_id = class_id;
        self.score = score;
        self
    }

    /// Same box with a new allocentric pose; `ry` follows.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self, GeometryError> {
        let mut b = *self;
        b.alpha = wrap_angle(alpha);
        b.ry = alpha_to_ry(b.alpha, b.center)?;
        Ok(b)
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }
}

#[inline]
fn rotate_y(ry: f64, p: [f64; 3]) -> [f64; 3] {
    let (s, c) = ry.sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

/// Sign pattern of corner `m`: bit 2 flips `x`, bit 1 flips `y`, bit 0 flips `z`,
/// so corner 0 is `(+w/2, +h/2, +l/2)` and corner 7 is `(−w/2, −h/2, −l/2)`.
pub fn corner_signs(m: usize) -> [f64; 3] {
    let s = |bit: usize| if m & bit == 0 { 1.0 } else { -1.0 };
    [s(4), s(2), s(1)]
}

/// The eight corners `R_y(ry)·(±w/2, ±h/2, ±l/2) + center`, ordered by [`corner_signs`].
pub fn corners3d(b: &Box3D) -> [[f64; 3]; 8] {
    let [w, h, l] = b.dims;
    let mut out = [[0.0; 3]; 8];
    for (m, corner) in out.iter_mut().enumerate() {
        let s = corner_signs(m);
        let r = rotate_y(b.ry, [s[0] * w / 2.0, s[1] * h / 2.0, s[2] * l / 2.0]);
        *corner = [r[0] + b.center[0], r[1] + b.center[1], r[2] + b.center[2]];
    }
    out
}

pub fn project_corners(calib: &Calibration, b: &Box3D) -> Result<[Projection; 8], GeometryError> {
    let corners = corners3d(b);
    let mut out = [Projection { u: 0.0, v: 0.0, depth: 0.0 }; 8];
    for (o, c) in out.iter_mut().zip(&corners) {
        *o = project(calib, *c)?;
    }
    Ok(out)
}

/// Minimum axis-aligned rectangle around the projected corners.
pub fn enclosing_rect(calib: &Calibration, b: &Box3D) -> Result<Box2D, GeometryError> {
    let pts = project_corners(calib, b)?;
    let (mut l, mut t, mut r, mut btm) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        l = l.min(p.u);
        r = r.max(p.u);
        t = t.min(p.v);
        btm = btm.max(p.v);
    }
    Ok(Box2D::from_ltrb(l, t, r, btm))
}

pub fn iou2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

type Pt = [f64; 2];

/// Bird's-eye footprint in the `(x, z)` plane, counter-clockwise.
pub fn bev_footprint(b: &Box3D) -> [Pt; 4] {
    let [w, _, l] = b.dims;
    let local = [[w / 2.0, l / 2.0], [-w / 2.0, l / 2.0], [-w / 2.0, -l / 2.0], [w / 2.0, -l / 2.0]];
    local.map(|[x, z]| {
        let r = rotate_y(b.ry, [x, 0.0, z]);
        [r[0] + b.center[0], r[2] + b.center[2]]
    })
}

fn signed_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

#[inline]
fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn line_intersection(p: Pt, q: Pt, a: Pt, b: Pt) -> Pt {
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman clipping of `subject` by the convex CCW polygon `clip`.
pub fn clip_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out: Vec<Pt> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    out.push(line_intersection(prev, cur, a, b));
                }
                out.push(cur);
            } else if prev_in {
                out.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    out
}

/// Area of the intersection of two convex polygons.
pub fn convex_intersection_area(a: &[Pt], b: &[Pt]) -> f64 {
    let orient = |p: &[Pt]| {
        let mut v = p.to_vec();
        if signed_area(&v) < 0.0 {
            v.reverse();
        }
        v
    };
    let clipped = clip_convex(&orient(a), &orient(b));
    if clipped.len() < 3 {
        return 0.0;
    }
    signed_area(&clipped).abs()
}

/// Rotated 3D IoU: BEV polygon overlap times vertical overlap of `[y − h, y]`,
/// over the union of volumes.
pub fn iou3d(a: &Box3D, b: &Box3D) -> Result<f64, GeometryError> {
    for bx in [a, b] {
        if !(bx.dims[0] > 0.0 && bx.dims[2] > 0.0) {
            return Err(GeometryError::DegenerateFootprint);
        }
    }
    let area = convex_intersection_area(&bev_footprint(a), &bev_footprint(b));
    let top = (a.center[1] - a.dims[1]).max(b.center[1] - b.dims[1]);
    let bottom = a.center[1].min(b.center[1]);
    let inter = area * (bottom - top).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Greedy NMS in descending score order (ties keep the lower index first).
/// A box is dropped when its IoU with an already kept box exceeds `thresh`.
/// Returns kept indices in selection order.
pub fn nms(dets: &[(Box2D, f64)], thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].1.total_cmp(&dets[i].1));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou2d(&dets[k].0, &dets[i].0) <= thresh) {
            kept.push(i);
        }
    }
    kept
}

/// 2D IoU between `target` and the enclosing rectangle of `b` re-posed at `alpha`.
/// Unprojectable candidates score `-1`.
pub fn alpha_objective(b: &Box3D, target: &Box2D, calib: &Calibration, alpha: f64) -> f64 {
    b.with_alpha(alpha)
        .and_then(|c| enclosing_rect(calib, &c))
        .map(|r| iou2d(&r, target))
        .unwrap_or(-1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Number of step levels; the step halves after each.
    pub steps: usize,
    /// Initial perturbation, radians.
    pub span: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { steps: 8, span: PI / 8.0 }
    }
}

/// Hill-climbs `alpha` so the projected box fits `target` better. At each
/// level both `alpha ± step` are tried and the better one is taken only if it
/// strictly improves the 2D IoU.
pub fn refine_alpha(b: &Box3D, target: &Box2D, calib: &Calibration, cfg: RefineConfig) -> Box3D {
    let mut alpha = b.alpha;
    let mut best = alpha_objective(b, target, calib, alpha);
    let mut step = cfg.span;
    for _ in 0..cfg.steps {
        let mut next = None;
        for cand in [wrap_angle(alpha + step), wrap_angle(alpha - step)] {
            let v = alpha_objective(b, target, calib, cand);
            if v > best {
                best = v;
                next = Some(cand);
            }
        }
        if let Some(a) = next {
            alpha = a;
        }
        step *= 0.5;
    }
    if alpha == b.alpha {
        return *b;
    }
    b.with_alpha(alpha).unwrap_or(*b)
}
