//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use dgconv::anchors::{grid_shape, Anchor, MATCH_IOU};
use dgconv::geometry::{enclosing_rect, iou2d, Box2D, Box3D, Calibration};
use rand::{RngExt, SeedableRng};
use rand_xoshiro::SplitMix64;

pub fn kitti_calib() -> Calibration {
    Calibration::new([
        [721.5377, 0.0, 609.5593, 44.85728],
        [0.0, 721.5377, 172.854, 0.2163791],
        [0.0, 0.0, 1.0, 0.002745884],
    ])
    .unwrap()
}

pub const IMAGE_SIZE: (usize, usize) = (1242, 375);

/// Car-like boxes spread over the KITTI field of view.
pub fn synthetic_gts(seed: u64, n: usize, calib: &Calibration) -> Vec<(Box3D, Calibration)> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = rng.random_range(5.0..60.0);
            let x = rng.random_range(-0.4..0.4) * z;
            let center = [x, rng.random_range(1.0..2.2), z];
            let dims = [rng.random_range(1.4..2.0), rng.random_range(1.3..1.9), rng.random_range(3.0..4.6)];
            let ry = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            (Box3D::from_ry(center, dims, ry).unwrap(), *calib)
        })
        .collect()
}

/// Scans every grid location for every template/box pair, then averages the
/// matched boxes in input order. Unmatched templates get the global mean.
pub fn brute_force_priors(
    templates: &[Anchor],
    gts: &[(Box3D, Calibration)],
    stride: usize,
    image_size: (usize, usize),
) -> Vec<(Option<[f64; 5]>, usize)> {
    let (rows, cols) = grid_shape(stride, image_size);
    let mean = |boxes: &[&Box3D]| -> [f64; 5] {
        let n = boxes.len() as f64;
        let mut acc = [0.0; 6];
        for b in boxes {
            acc[0] += b.center[2];
            acc[1] += b.dims[0];
            acc[2] += b.dims[1];
            acc[3] += b.dims[2];
            acc[4] += b.alpha.sin();
            acc[5] += b.alpha.cos();
        }
        [acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n, (acc[4] / n).atan2(acc[5] / n)]
    };
    let all: Vec<&Box3D> = gts.iter().map(|(b, _)| b).collect();
    let global = mean(&all);
    templates
        .iter()
        .map(|t| {
            let matched: Vec<&Box3D> = gts
                .iter()
                .filter(|(b, k)| {
                    let rect = enclosing_rect(k, b).unwrap();
                    (0..rows).any(|i| (0..cols).any(|j| iou2d(&t.placed(i, j, stride).box2d(), &rect) >= MATCH_IOU))
                })
                .map(|(b, _)| b)
                .collect();
            if matched.is_empty() {
                (Some(global), 0)
            } else {
                (Some(mean(&matched)), matched.len())
            }
        })
        .collect()
}

/// Recomputes `(tp, fp)` at every score cut from scratch: the detections
/// scoring at least the cut are matched greedily against an explicit IoU
/// table.
pub fn brute_force_counts(dets: &[(Box2D, f64)], gts: &[Box2D], thresh: f64) -> Vec<(f64, usize, usize)> {
    let table: Vec<Vec<f64>> = dets.iter().map(|(d, _)| gts.iter().map(|g| iou2d(d, g)).collect()).collect();
    let mut cuts: Vec<f64> = dets.iter().map(|d| d.1).collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.iter()
        .map(|&cut| {
            let mut kept: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].1 >= cut).collect();
            kept.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
            let mut used = vec![false; gts.len()];
            let mut tp = 0;
            for i in &kept {
                let best = (0..gts.len())
                    .filter(|&g| !used[g])
                    .fold(None, |acc: Option<usize>, g| match acc {
                        Some(b) if table[*i][b] >= table[*i][g] => Some(b),
                        _ => Some(g),
                    });
                if let Some(g) = best.filter(|&g| table[*i][g] >= thresh) {
                    used[g] = true;
                    tp += 1;
                }
            }
            (cut, tp, kept.len() - tp)
        })
        .collect()
}

/// Five detections against three ground-truth boxes, distinct scores.
pub fn five_three_fixture() -> (Vec<(Box2D, f64)>, Vec<Box2D>) {
    let gts = vec![
        Box2D::from_ltrb(100.0, 100.0, 200.0, 200.0),
        Box2D::from_ltrb(300.0, 100.0, 380.0, 220.0),
        Box2D::from_ltrb(500.0, 150.0, 560.0, 190.0),
    ];
    let dets = vec![
        (Box2D::from_ltrb(105.0, 102.0, 203.0, 198.0), 0.95),
        (Box2D::from_ltrb(120.0, 110.0, 215.0, 210.0), 0.80),
        (Box2D::from_ltrb(302.0, 98.0, 378.0, 221.0), 0.60),
        (Box2D::from_ltrb(700.0, 100.0, 760.0, 160.0), 0.70),
        (Box2D::from_ltrb(520.0, 150.0, 580.0, 190.0), 0.40),
    ];
    (dets, gts)
}
