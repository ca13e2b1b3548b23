mod common;

use common::{brute_force_counts, five_three_fixture};
use dgconv::eval::{ap, pr_curve, ApVariant, Frame, GroundTruth};
use dgconv::geometry::{iou2d, Box2D};

fn frame(dets: &[(Box2D, f64)], gts: &[Box2D]) -> Frame<Box2D> {
    Frame::new(dets.to_vec(), gts.iter().map(|g| GroundTruth { item: *g, ignore: false }).collect())
}

fn both(dets: &[(Box2D, f64)], gts: &[Box2D]) -> [f64; 2] {
    let c = pr_curve(&[frame(dets, gts)], iou2d, 0.7);
    [ap(&c, ApVariant::R11), ap(&c, ApVariant::R40)]
}

#[test]
fn curve_matches_brute_force() {
    let (dets, gts) = five_three_fixture();
    let curve = pr_curve(&[frame(&dets, &gts)], iou2d, 0.7);
    let oracle = brute_force_counts(&dets, &gts, 0.7);
    assert_eq!(curve.points.len(), oracle.len());
    for (p, (cut, tp, fp)) in curve.points.iter().zip(&oracle) {
        assert_eq!((p.score, p.tp, p.fp), (*cut, *tp, *fp));
        assert_eq!(p.fn_, 3 - tp);
    }
    // the 0.80 duplicate and the stray 0.70 are false positives; the 0.40 box misses
    assert_eq!(oracle.last().unwrap(), &(0.40, 2, 3));
}

#[test]
fn input_order_does_not_matter() {
    let (dets, gts) = five_three_fixture();
    let base = pr_curve(&[frame(&dets, &gts)], iou2d, 0.7);
    let mut rev = dets.clone();
    rev.reverse();
    let mut rot = dets.clone();
    rot.rotate_left(2);
    for d in [rev, rot] {
        assert_eq!(pr_curve(&[frame(&d, &gts)], iou2d, 0.7), base);
    }
}

#[test]
fn removing_false_positives_never_hurts() {
    let (dets, gts) = five_three_fixture();
    let base = both(&dets, &gts);
    for fp in [1, 3] {
        let mut d = dets.clone();
        d.remove(fp);
        let after = both(&d, &gts);
        assert!(after[0] >= base[0] && after[1] >= base[1]);
    }
    for tp in [0, 2] {
        let mut d = dets.clone();
        d.remove(tp);
        let after = both(&d, &gts);
        assert!(after[0] <= base[0] && after[1] <= base[1]);
    }
}

#[test]
fn ap_is_bounded_by_max_precision() {
    let (dets, gts) = five_three_fixture();
    let c = pr_curve(&[frame(&dets, &gts)], iou2d, 0.7);
    let pmax = c.points.iter().map(|p| p.precision).fold(0.0, f64::max);
    for v in [ApVariant::R11, ApVariant::R40] {
        let a = ap(&c, v);
        assert!((0.0..=pmax).contains(&a));
    }
    for w in c.points.windows(2) {
        assert!(w[1].recall >= w[0].recall);
    }
}
