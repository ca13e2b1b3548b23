//! 2D-3D anchor templates and their fitted 3D priors.
//!
//! Templates are 12 heights `30·1.265^e`, `e = 0..11`, crossed with aspect
//! ratios `width/height ∈ {0.5, 1.0, 1.5}`, height outermost. A template is
//! placed at every cell centre `((j + 0.5)·stride, (i + 0.5)·stride)` of the
//! output grid; its 3D prior `(z, w, h, l, α)` is the mean over all ground
//! truth boxes whose projected rectangle reaches IoU ≥ 0.5 with the template
//! at some location. `α` is averaged on the circle.
//!
//! Serialised form is a JSON array of records:
//!
//! ```json
//! [{"a2d": [Ax, Ay, Aw, Ah], "a3d": [z, w, h, l, alpha], "match_count": 3}, ...]
//! ```
//!
//! `a3d` is `null` for templates that have not been fitted.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{enclosing_rect, iou2d, Box2D, Box3D, Calibration, GeometryError};

pub const BASE_HEIGHT: f64 = 30.0;
pub const HEIGHT_RATIO: f64 = 1.265;
pub const NUM_SCALES: usize = 12;
pub const ASPECT_RATIOS: [f64; 3] = [0.5, 1.0, 1.5];
pub const MATCH_IOU: f64 = 0.5;
pub const DEFAULT_STRIDE: usize = 16;

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("no ground-truth boxes to fit priors from")]
    NoGroundTruth,
    #[error("ground-truth box {index} cannot be projected: {source}")]
    Projection {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("stride and image size must be positive")]
    BadGrid,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// `(Ax, Ay, Aw, Ah)`, pixels. Templates carry `Ax = Ay = 0`.
    pub a2d: [f64; 4],
    /// `(Az, Aw, Ah, Al, Aα)`: depth and shape in meters, pose in radians.
    pub a3d: Option<[f64; 5]>,
    pub match_count: usize,
}

impl Anchor {
    pub fn template(width: f64, height: f64) -> Self {
        Self { a2d: [0.0, 0.0, width, height], a3d: None, match_count: 0 }
    }

    /// The template centred on output cell `(row, col)`.
    pub fn placed(&self, row: usize, col: usize, stride: usize) -> Self {
        let s = stride as f64;
        let mut a = *self;
        a.a2d[0] = (col as f64 + 0.5) * s;
        a.a2d[1] = (row as f64 + 0.5) * s;
        a
    }

    pub fn box2d(&self) -> Box2D {
        Box2D::new(self.a2d[0], self.a2d[1], self.a2d[2], self.a2d[3])
    }

    /// True when the prior came from the global fallback rather than matches.
    pub fn is_fallback(&self) -> bool {
        self.a3d.is_some() && self.match_count == 0
    }
}

/// The 36 templates, height-major.
pub fn generate_templates() -> Vec<Anchor> {
    let mut out = Vec::with_capacity(NUM_SCALES * ASPECT_RATIOS.len());
    for e in 0..NUM_SCALES {
        let h = BASE_HEIGHT * HEIGHT_RATIO.powi(e as i32);
        for r in ASPECT_RATIOS {
            out.push(Anchor::template(h * r, h));
        }
    }
    out
}

#[derive(Debug, Default, Clone, Copy)]
struct PriorSum {
    z: f64,
    w: f64,
    h: f64,
    l: f64,
    sin: f64,
    cos: f64,
    count: usize,
}

impl PriorSum {
    fn add(&mut self, b: &Box3D) {
        self.z += b.center[2];
        self.w += b.dims[0];
        self.h += b.dims[1];
        self.l += b.dims[2];
        let (s, c) = b.alpha.sin_cos();
        self.sin += s;
        self.cos += c;
        self.count += 1;
    }

    fn mean(&self) -> [f64; 5] {
        let n = self.count as f64;
        [self.z / n, self.w / n, self.h / n, self.l / n, (self.sin / n).atan2(self.cos / n)]
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub anchors: Vec<Anchor>,
    /// Mean over every ground-truth box; used for templates with no match.
    pub global_prior: [f64; 5],
    /// Set when no template matched any box, so every prior is the fallback.
    pub all_fallback: bool,
}

/// Output grid `(rows, cols)` for an image of `(width, height)` pixels.
pub fn grid_shape(stride: usize, image_size: (usize, usize)) -> (usize, usize) {
    (image_size.1.div_ceil(stride), image_size.0.div_ceil(stride))
}

/// Index range of cell centres `(i + 0.5)·stride` within `reach` of `center`.
fn cell_range(center: f64, reach: f64, stride: f64, cells: usize) -> std::ops::RangeInclusive<usize> {
    let lo = ((center - reach) / stride - 0.5).floor() - 1.0;
    let hi = ((center + reach) / stride - 0.5).ceil() + 1.0;
    let lo = lo.max(0.0) as usize;
    let hi = hi.min(cells as f64 - 1.0);
    if hi < lo as f64 {
        #[allow(clippy::reversed_empty_ranges)]
        return 1..=0;
    }
    lo..=hi as usize
}

fn matches_anywhere(template: &Anchor, rect: &Box2D, stride: usize, rows: usize, cols: usize) -> bool {
    let s = stride as f64;
    let rx = cell_range(rect.cx, 0.5 * (template.a2d[2] + rect.w), s, cols);
    let ry = cell_range(rect.cy, 0.5 * (template.a2d[3] + rect.h), s, rows);
    ry.into_iter()
        .any(|i| rx.clone().any(|j| iou2d(&template.placed(i, j, stride).box2d(), rect) >= MATCH_IOU))
}

/// Fits each template's 3D prior from ground-truth boxes.
///
/// `image_size` is `(width, height)` in pixels.
pub fn fit_priors(
    templates: &[Anchor],
    gts: &[(Box3D, Calibration)],
    stride: usize,
    image_size: (usize, usize),
) -> Result<FitResult, AnchorError> {
    if gts.is_empty() {
        return Err(AnchorError::NoGroundTruth);
    }
    if stride == 0 || image_size.0 == 0 || image_size.1 == 0 {
        return Err(AnchorError::BadGrid);
    }
    let (rows, cols) = grid_shape(stride, image_size);
    let rects = gts
        .iter()
        .enumerate()
        .map(|(index, (b, k))| enclosing_rect(k, b).map_err(|source| AnchorError::Projection { index, source }))
        .collect::<Result<Vec<_>, _>>()?;

    let mut global = PriorSum::default();
    let mut sums = vec![PriorSum::default(); templates.len()];
    for ((b, _), rect) in gts.iter().zip(&rects) {
        global.add(b);
        for (t, sum) in templates.iter().zip(sums.iter_mut()) {
            if matches_anywhere(t, rect, stride, rows, cols) {
                sum.add(b);
            }
        }
    }

    let global_prior = global.mean();
    let all_fallback = sums.iter().all(|s| s.count == 0);
    let anchors = templates
        .iter()
        .zip(&sums)
        .map(|(t, s)| Anchor {
            a2d: t.a2d,
            a3d: Some(if s.count > 0 { s.mean() } else { global_prior }),
            match_count: s.count,
        })
        .collect();
    Ok(FitResult { anchors, global_prior, all_fallback })
}

pub fn anchors_to_json(anchors: &[Anchor]) -> Result<String, AnchorError> {
    Ok(serde_json::to_string_pretty(anchors)?)
}

pub fn anchors_from_json(text: &str) -> Result<Vec<Anchor>, AnchorError> {
    Ok(serde_json::from_str(text)?)
}

pub fn save_anchors(path: impl AsRef<Path>, anchors: &[Anchor]) -> Result<(), AnchorError> {
    std::fs::write(path, anchors_to_json(anchors)?)?;
    Ok(())
}

pub fn load_anchors(path: impl AsRef<Path>) -> Result<Vec<Anchor>, AnchorError> {
    anchors_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calib() -> Calibration {
        Calibration::from_intrinsics(700.0, 600.0, 180.0).unwrap()
    }

    #[test]
    fn template_count_and_heights() {
        let t = generate_templates();
        assert_eq!(t.len(), 36);
        assert_eq!(t[0].a2d[3], 30.0);
        assert_eq!(t[0].a2d[2], 15.0);
        assert_eq!(t[2].a2d[2], 45.0);
        let max = t.iter().map(|a| a.a2d[3]).fold(0.0, f64::max);
        assert!((max - 398.3).abs() < 0.1, "{max}");
        for e in 1..NUM_SCALES {
            let ratio = t[3 * e].a2d[3] / t[3 * (e - 1)].a2d[3];
            assert!((ratio - 1.265).abs() < 1e-12);
        }
    }

    #[test]
    fn placement_uses_cell_centres() {
        let a = Anchor::template(10.0, 20.0).placed(2, 3, 16);
        assert_eq!(a.a2d, [56.0, 40.0, 10.0, 20.0]);
    }

    #[test]
    fn grid_rounds_up() {
        assert_eq!(grid_shape(16, (1760, 512)), (32, 110));
        assert_eq!(grid_shape(16, (1242, 375)), (24, 78));
    }

    #[test]
    fn single_exact_match() {
        let k = calib();
        let gt = Box3D::from_ry([0.4, 1.2, 14.0], [1.6, 1.5, 3.9], 0.6).unwrap();
        let rect = enclosing_rect(&k, &gt).unwrap();
        // one template shaped exactly like the projected box, far from any other
        let t = vec![Anchor::template(rect.w, rect.h), Anchor::template(2000.0, 5.0)];
        let fit = fit_priors(&t, &[(gt, k)], 1, (1242, 375)).unwrap();
        let a = fit.anchors[0].a3d.unwrap();
        assert_eq!(fit.anchors[0].match_count, 1);
        assert_eq!(&a[..4], &[14.0, 1.6, 1.5, 3.9]);
        assert!((a[4] - gt.alpha).abs() < 1e-15);
        assert!(fit.anchors[1].is_fallback());
        assert!(!fit.all_fallback);
    }

    #[test]
    fn two_depths_average() {
        let k = calib();
        let near = Box3D::from_ry([0.0, 1.0, 10.0], [1.6, 1.5, 3.9], 0.0).unwrap();
        // same image footprint at twice the distance: scale the whole box
        let far = Box3D::from_ry([0.0, 2.0, 20.0], [3.2, 3.0, 7.8], 0.0).unwrap();
        let rect = enclosing_rect(&k, &near).unwrap();
        let fit = fit_priors(&[Anchor::template(rect.w, rect.h)], &[(near, k), (far, k)], 1, (1242, 375)).unwrap();
        assert_eq!(fit.anchors[0].match_count, 2);
        assert_eq!(fit.anchors[0].a3d.unwrap()[0], 15.0);
    }

    #[test]
    fn no_match_falls_back_everywhere() {
        let k = calib();
        let gt = Box3D::from_ry([0.0, 1.0, 10.0], [1.6, 1.5, 3.9], 0.0).unwrap();
        let fit = fit_priors(&[Anchor::template(1.0, 1.0)], &[(gt, k)], 16, (1242, 375)).unwrap();
        assert!(fit.all_fallback);
        assert!(fit.anchors[0].is_fallback());
        assert_eq!(fit.anchors[0].a3d, Some(fit.global_prior));
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_priors(&generate_templates(), &[], 16, (100, 100)), Err(AnchorError::NoGroundTruth)));
        let behind = Box3D::from_ry([0.0, 1.0, 1.0], [1.6, 1.5, 3.9], 0.0).unwrap();
        assert!(matches!(
            fit_priors(&generate_templates(), &[(behind, calib())], 16, (100, 100)),
            Err(AnchorError::Projection { index: 0, .. })
        ));
    }

    #[test]
    fn json_round_trip_and_keys() {
        let mut a = generate_templates();
        a[3].a3d = Some([12.5, 1.6, 1.5, 3.9, -0.25]);
        a[3].match_count = 7;
        let text = anchors_to_json(&a).unwrap();
        assert!(text.contains("\"a2d\"") && text.contains("\"a3d\"") && text.contains("\"match_count\""));
        assert_eq!(anchors_from_json(&text).unwrap(), a);
    }
}
