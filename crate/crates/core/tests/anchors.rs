mod common;

use common::{brute_force_priors, kitti_calib, synthetic_gts, IMAGE_SIZE};
use dgconv::anchors::{fit_priors, generate_templates, DEFAULT_STRIDE};
use dgconv::geometry::{Box3D, Calibration};

#[test]
fn fit_matches_full_grid_scan() {
    let calib = kitti_calib();
    let gts = synthetic_gts(11, 50, &calib);
    let templates = generate_templates();
    let fit = fit_priors(&templates, &gts, DEFAULT_STRIDE, IMAGE_SIZE).unwrap();
    let oracle = brute_force_priors(&templates, &gts, DEFAULT_STRIDE, IMAGE_SIZE);
    assert!(!fit.all_fallback);
    for (a, (prior, count)) in fit.anchors.iter().zip(&oracle) {
        assert_eq!(a.match_count, *count);
        assert_eq!(a.a3d, *prior);
    }
}

#[test]
fn fit_is_order_invariant() {
    let calib = kitti_calib();
    let gts = synthetic_gts(5, 50, &calib);
    let mut rev = gts.clone();
    rev.reverse();
    let templates = generate_templates();
    let a = fit_priors(&templates, &gts, DEFAULT_STRIDE, IMAGE_SIZE).unwrap();
    let b = fit_priors(&templates, &rev, DEFAULT_STRIDE, IMAGE_SIZE).unwrap();
    for (x, y) in a.anchors.iter().zip(&b.anchors) {
        assert_eq!(x.match_count, y.match_count);
        for (p, q) in x.a3d.unwrap().iter().zip(y.a3d.unwrap()) {
            assert!((p - q).abs() <= 1e-12, "{p} vs {q}");
        }
    }
}

#[test]
fn scaling_the_scene_scales_priors() {
    // no translation column, so scaling every box leaves its projection unchanged
    let k = Calibration::from_intrinsics(721.5, 609.5, 172.8).unwrap();
    let gts = synthetic_gts(3, 50, &k);
    let lambda = 1.7;
    let scaled: Vec<_> = gts
        .iter()
        .map(|(b, k)| {
            let c = b.center.map(|v| v * lambda);
            let d = b.dims.map(|v| v * lambda);
            (Box3D::from_ry(c, d, b.ry).unwrap(), *k)
        })
        .collect();
    let templates = generate_templates();
    let a = fit_priors(&templates, &gts, DEFAULT_STRIDE, IMAGE_SIZE).unwrap();
    let b = fit_priors(&templates, &scaled, DEFAULT_STRIDE, IMAGE_SIZE).unwrap();
    for (x, y) in a.anchors.iter().zip(&b.anchors) {
        assert_eq!(x.match_count, y.match_count);
        let (p, q) = (x.a3d.unwrap(), y.a3d.unwrap());
        for i in 0..4 {
            assert!((p[i] * lambda - q[i]).abs() <= 1e-12 * q[i].abs(), "{i}: {} vs {}", p[i], q[i]);
        }
        assert!((p[4] - q[4]).abs() <= 1e-12);
    }
}
