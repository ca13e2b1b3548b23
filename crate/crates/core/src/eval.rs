//! Precision/recall curves and interpolated average precision.
//!
//! Matching is greedy per frame in descending score, ties broken by input
//! order. A detection is a true positive when the best-overlapping ground
//! truth still unmatched reaches the IoU threshold. Ignored ground truth
//! (DontCare regions, or boxes outside the difficulty level) neither counts
//! as a miss nor turns an overlapping detection into a false positive.

use serde::Serialize;

use crate::kitti::LabelRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<B> {
    pub item: B,
    pub ignore: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame<B> {
    /// `(box, score)`.
    pub detections: Vec<(B, f64)>,
    pub gts: Vec<GroundTruth<B>>,
    /// Detections of this frame that are excluded up front (e.g. too small).
    pub ignored_detections: Vec<bool>,
}

impl<B> Frame<B> {
    pub fn new(detections: Vec<(B, f64)>, gts: Vec<GroundTruth<B>>) -> Self {
        let n = detections.len();
        Self { detections, gts, ignored_detections: vec![false; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub score: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PrCurve {
    /// One point per counted detection, in descending score.
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
}

fn descending(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = scores.enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    order.into_iter().map(|(i, _)| i).collect()
}

/// Per-detection outcome for one frame, indexed like `frame.detections`.
pub fn match_frame<B>(frame: &Frame<B>, iou: impl Fn(&B, &B) -> f64, thresh: f64) -> Vec<Outcome> {
    let mut out = vec![Outcome::FalsePositive; frame.detections.len()];
    let mut taken = vec![false; frame.gts.len()];
    for d in descending(frame.detections.iter().map(|(_, s)| *s)) {
        if frame.ignored_detections.get(d).copied().unwrap_or(false) {
            out[d] = Outcome::Ignored;
            continue;
        }
        let det = &frame.detections[d].0;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in frame.gts.iter().enumerate() {
            if gt.ignore || taken[g] {
                continue;
            }
            let v = iou(det, &gt.item);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) if v >= thresh => {
                taken[g] = true;
                out[d] = Outcome::TruePositive;
            }
            _ => {
                if frame.gts.iter().any(|gt| gt.ignore && iou(det, &gt.item) >= thresh) {
                    out[d] = Outcome::Ignored;
                }
            }
        }
    }
    out
}

/// Pools every frame's matches into one curve. Equal scores across frames
/// keep frame order.
pub fn pr_curve<B>(frames: &[Frame<B>], iou: impl Fn(&B, &B) -> f64, thresh: f64) -> PrCurve {
    let num_gt = frames.iter().map(|f| f.gts.iter().filter(|g| !g.ignore).count()).sum();
    let mut scored = Vec::new();
    for f in frames {
        for (o, (_, s)) in match_frame(f, &iou, thresh).into_iter().zip(&f.detections) {
            if o != Outcome::Ignored {
                scored.push((*s, o == Outcome::TruePositive));
            }
        }
    }
    let order = descending(scored.iter().map(|(s, _)| *s));
    let (mut tp, mut fp) = (0, 0);
    let points = order
        .into_iter()
        .map(|i| {
            let (score, hit) = scored[i];
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                score,
                tp,
                fp,
                fn_: num_gt - tp,
                precision: tp as f64 / (tp + fp) as f64,
                recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
            }
        })
        .collect();
    PrCurve { points, num_gt }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ApVariant {
    R11,
    R40,
}

impl ApVariant {
    pub fn recall_samples(self) -> Vec<f64> {
        match self {
            ApVariant::R11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
            ApVariant::R40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

/// Mean over the recall samples of the best precision at recall ≥ `r`.
pub fn ap(curve: &PrCurve, variant: ApVariant) -> f64 {
    let samples = variant.recall_samples();
    let n = samples.len() as f64;
    samples
        .into_iter()
        .map(|r| {
            curve
                .points
                .iter()
                .filter(|p| p.recall >= r)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    /// `(min bbox height px, max occlusion, max truncation)`.
    pub fn limits(self) -> (f64, i32, f64) {
        match self {
            Difficulty::Easy => (40.0, 0, 0.15),
            Difficulty::Moderate => (25.0, 1, 0.30),
            Difficulty::Hard => (25.0, 2, 0.50),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }

    pub fn admits(self, r: &LabelRecord) -> bool {
        let (h, occ, trunc) = self.limits();
        r.bbox_height() >= h && r.occluded <= occ && r.truncated <= trunc
    }
}

pub fn difficulty_filter(gts: &[LabelRecord], level: Difficulty) -> Vec<&LabelRecord> {
    gts.iter().filter(|r| level.admits(r)).collect()
}

/// Builds the frame used to score `class` at `level`: ground truth of the
/// class outside the level, and DontCare regions, are ignored; detections
/// shorter than the level's minimum height are ignored.
pub fn kitti_frame<B>(
    gts: &[LabelRecord],
    dets: &[LabelRecord],
    class: &str,
    level: Difficulty,
    to_box: impl Fn(&LabelRecord) -> B,
) -> Frame<B> {
    let gts = gts
        .iter()
        .filter(|r| r.kind == class || r.is_dont_care())
        .map(|r| GroundTruth { item: to_box(r), ignore: r.is_dont_care() || !level.admits(r) })
        .collect();
    let dets: Vec<&LabelRecord> = dets.iter().filter(|r| r.kind == class).collect();
    let min_h = level.limits().0;
    let ignored_detections = dets.iter().map(|r| r.bbox_height() < min_h).collect();
    let detections = dets.iter().map(|r| (to_box(r), r.score.unwrap_or(1.0))).collect();
    Frame { detections, gts, ignored_detections }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Boxes are intervals on a line; IoU is interval overlap.
    fn iou1(a: &(f64, f64), b: &(f64, f64)) -> f64 {
        let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
        inter / ((a.1 - a.0) + (b.1 - b.0) - inter)
    }

    fn gt(lo: f64) -> GroundTruth<(f64, f64)> {
        GroundTruth { item: (lo, lo + 1.0), ignore: false }
    }

    #[test]
    fn single_hit_and_miss() {
        let hit = Frame::new(vec![((0.0, 1.0), 0.9)], vec![gt(0.0)]);
        let c = pr_curve(&[hit], iou1, 0.7);
        assert_eq!((c.points[0].precision, c.points[0].recall), (1.0, 1.0));
        // IoU 1/3 < 0.7
        let miss = Frame::new(vec![((0.5, 1.5), 0.9)], vec![gt(0.0)]);
        let c = pr_curve(&[miss], iou1, 0.7);
        assert_eq!((c.points[0].precision, c.points[0].recall), (0.0, 0.0));
    }

    #[test]
    fn half_recall() {
        let f = Frame::new(vec![((0.0, 1.0), 0.9)], vec![gt(0.0), gt(5.0)]);
        let c = pr_curve(&[f], iou1, 0.7);
        assert!((ap(&c, ApVariant::R11) - 6.0 / 11.0).abs() <= 1e-12);
        assert!((ap(&c, ApVariant::R40) - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn empty_detections() {
        let c = pr_curve(&[Frame::new(vec![], vec![gt(0.0)])], iou1, 0.7);
        assert_eq!(ap(&c, ApVariant::R11), 0.0);
        assert_eq!(ap(&c, ApVariant::R40), 0.0);
        assert_eq!(c.num_gt, 1);
    }

    #[test]
    fn each_gt_matched_once_and_ties_keep_order() {
        let f = Frame::new(vec![((0.0, 1.0), 0.5), ((0.0, 1.0), 0.5)], vec![gt(0.0)]);
        assert_eq!(match_frame(&f, iou1, 0.7), vec![Outcome::TruePositive, Outcome::FalsePositive]);
    }

    #[test]
    fn dont_care_is_not_a_false_positive() {
        let mut gts = vec![gt(0.0)];
        gts.push(GroundTruth { item: (10.0, 11.0), ignore: true });
        let f = Frame::new(vec![((0.0, 1.0), 0.9), ((10.0, 11.0), 0.8)], gts);
        assert_eq!(match_frame(&f, iou1, 0.7), vec![Outcome::TruePositive, Outcome::Ignored]);
        let c = pr_curve(&[f], iou1, 0.7);
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.num_gt, 1);
    }

    #[test]
    fn perfect_detector() {
        let frames: Vec<_> = (0..4)
            .map(|i| Frame::new(vec![((i as f64, i as f64 + 1.0), 0.5 + 0.1 * i as f64)], vec![gt(i as f64)]))
            .collect();
        let c = pr_curve(&frames, iou1, 0.7);
        assert_eq!(ap(&c, ApVariant::R11), 1.0);
        assert_eq!(ap(&c, ApVariant::R40), 1.0);
    }

    fn rec(occ: i32, trunc: f64, h: f64) -> LabelRecord {
        LabelRecord {
            kind: "Car".into(),
            truncated: trunc,
            occluded: occ,
            alpha: 0.0,
            bbox: [0.0, 100.0, 50.0, 100.0 + h],
            dims: [1.5, 1.6, 3.9],
            location: [0.0, 1.5, 20.0],
            ry: 0.0,
            score: None,
        }
    }

    #[test]
    fn difficulty_table() {
        let all = |r: &LabelRecord| Difficulty::ALL.map(|d| d.admits(r));
        assert_eq!(all(&rec(0, 0.0, 50.0)), [true, true, true]);
        assert_eq!(all(&rec(2, 0.0, 50.0)), [false, false, true]);
        assert_eq!(all(&rec(0, 0.0, 40.0)), [true, true, true]);
        assert_eq!(all(&rec(0, 0.0, 30.0)), [false, true, true]);
        assert_eq!(all(&rec(0, 0.4, 50.0)), [false, false, true]);
        assert_eq!(all(&rec(3, 0.0, 50.0)), [false, false, false]);
        let gts = [rec(0, 0.0, 50.0), rec(2, 0.0, 50.0)];
        assert_eq!(difficulty_filter(&gts, Difficulty::Moderate).len(), 1);
    }

    #[test]
    fn kitti_frame_ignores_out_of_level() {
        let gts = [rec(0, 0.0, 50.0), rec(2, 0.0, 50.0)];
        let mut small = rec(0, 0.0, 10.0);
        small.score = Some(0.3);
        let f = kitti_frame(&gts, &[small], "Car", Difficulty::Easy, |r| r.box2d());
        assert_eq!(f.gts.iter().map(|g| g.ignore).collect::<Vec<_>>(), vec![false, true]);
        assert_eq!(f.ignored_detections, vec![true]);
        assert_eq!(f.detections[0].1, 0.3);
    }
}
