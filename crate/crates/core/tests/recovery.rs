use lsm_core::image::Image;
use lsm_core::loss::PointMap;
use lsm_core::raster::Camera;
use lsm_core::recovery::*;
use lsm_core::synthetic::{pinhole_pointmap, pnp_correspondences, rng};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn focal_unit_pinhole() {
    let cam = Camera::centered(1.0, 6, 4).unwrap();
    let pm = pinhole_pointmap(&cam, |_, _| 1.0).unwrap();
    let est = estimate_focal_weiszfeld(&pm, None, &WeiszfeldConfig::default()).unwrap();
    assert!((est.focal - 1.0).abs() < 1e-6);
    assert!(est.is_monotone());
}

#[test]
fn focal_recovered_from_random_depths() {
    let mut r = rng(21);
    for f in [300.0, 500.0, 800.0] {
        for _ in 0..5 {
            let cam = Camera::centered(f, 64, 48).unwrap();
            let pm = pinhole_pointmap(&cam, |_, _| r.gen_range(1.0..5.0)).unwrap();
            let est = estimate_focal_weiszfeld(&pm, None, &WeiszfeldConfig::default()).unwrap();
            assert!(((est.focal - f) / f).abs() < 1e-3, "{} vs {f}", est.focal);
            assert!(est.is_monotone(), "{:?}", est.objective);
        }
    }
}

#[test]
fn focal_robust_to_outlier_pixels() {
    let mut r = rng(22);
    let cam = Camera::centered(500.0, 64, 48).unwrap();
    let pm = pinhole_pointmap(&cam, |_, _| r.gen_range(1.0..5.0)).unwrap();
    let mut pts = pm.points().clone();
    for p in (0..64 * 48).step_by(11) {
        let q = pts.pixel_mut(p);
        q[0] *= r.gen_range(0.5..1.5);
        q[1] *= r.gen_range(0.5..1.5);
    }
    let noisy = PointMap::from_points(pts).unwrap();
    let cfg = WeiszfeldConfig {
        max_iter: 100,
        tol: 1e-10,
    };
    let est = estimate_focal_weiszfeld(&noisy, None, &cfg).unwrap();
    let ls = est.objective[0];
    assert!(est.is_monotone());
    assert!(*est.objective.last().unwrap() < ls);
    assert!(((est.focal - 500.0) / 500.0).abs() < 5e-3, "{}", est.focal);
}

#[test]
fn focal_requires_weighted_pixels() {
    let cam = Camera::centered(2.0, 4, 4).unwrap();
    let pm = pinhole_pointmap(&cam, |_, _| 2.0).unwrap();
    let zeros = Image::zeros(4, 4, 1);
    assert!(matches!(
        estimate_focal_weiszfeld(&pm, Some(&zeros), &WeiszfeldConfig::default()),
        Err(lsm_core::Error::EmptyInput(_))
    ));
}

#[test]
fn focal_weight_scaling_invariance() {
    let mut r = rng(23);
    let cam = Camera::centered(200.0, 16, 12).unwrap();
    let mut pts = pinhole_pointmap(&cam, |_, _| r.gen_range(1.0..3.0))
        .unwrap()
        .points()
        .clone();
    for v in pts.data_mut() {
        *v *= r.gen_range(0.97..1.03);
    }
    let pm = PointMap::from_points(pts).unwrap();
    let w = Image::from_fn(16, 12, 1, |_, _, _| r.gen_range(0.1..2.0));
    let cfg = WeiszfeldConfig::default();
    let a = estimate_focal_weiszfeld(&pm, Some(&w), &cfg).unwrap();
    let b = estimate_focal_weiszfeld(&pm, Some(&w.scaled(7.5)), &cfg).unwrap();
    assert!(((a.focal - b.focal) / a.focal).abs() < 1e-12);
}

#[test]
fn averaging() {
    let est = |f| FocalEstimate {
        focal: f,
        iterations: 1,
        converged: true,
        objective: vec![],
        noise_floor: 0.0,
    };
    assert_eq!(average_focal(&[est(500.0), est(510.0)]).unwrap(), 505.0);
    assert_eq!(average_focal(&[est(123.25)]).unwrap(), 123.25);
    let mut r = rng(1);
    let vals: Vec<f64> = (0..10).map(|_| r.gen_range(100.0..900.0)).collect();
    let ests: Vec<_> = vals.iter().map(|v| est(*v)).collect();
    let mut sum = 0.0;
    for v in &vals {
        sum += v;
    }
    assert!((average_focal(&ests).unwrap() - sum / 10.0).abs() < 1e-12);
    assert!(average_focal(&[]).is_err());
}

fn pose_cam(angle_deg: f64, axis: Vector3<f64>, t: Vector3<f64>) -> Camera {
    let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle_deg.to_radians());
    Camera::centered(500.0, 640, 480)
        .unwrap()
        .with_pose(*r.matrix(), t)
        .unwrap()
}

#[test]
fn pnp_identity_exact() {
    let cam = pose_cam(0.0, Vector3::y(), Vector3::zeros());
    let (pts, pix, _) = pnp_correspondences(&mut rng(2), &cam, 50, 0.0, (2.0, 6.0));
    let k = Intrinsics::centered(500.0, 640, 480);
    let pose = estimate_relative_pose(&pts, &pix, &k, &RansacConfig::default()).unwrap();
    assert!((pose.rotation - Matrix3::identity()).amax() < 1e-6);
    assert!(pose.translation.amax() < 1e-6);
    assert_eq!(pose.inlier_ratio, 1.0);
}

#[test]
fn pnp_with_outliers() {
    let k = Intrinsics::centered(500.0, 640, 480);
    for trial in 0..20u64 {
        let cam = pose_cam(10.0, Vector3::y(), Vector3::new(0.1, 0.0, 0.0));
        let (pts, pix, inl) = pnp_correspondences(&mut rng(100 + trial), &cam, 100, 0.3, (2.0, 6.0));
        let cfg = RansacConfig {
            seed: trial,
            ..RansacConfig::default()
        };
        let pose = estimate_relative_pose(&pts, &pix, &k, &cfg).unwrap();
        assert!(rotation_error_deg(&pose.rotation, &cam.rotation) < 0.5);
        assert!((pose.translation - cam.translation).norm() < 1e-2);
        assert!((pose.inlier_ratio - 0.7).abs() < 0.05, "{}", pose.inlier_ratio);
        let recovered = pose.inliers.iter().zip(&inl).filter(|(a, b)| **a && **b).count();
        assert_eq!(recovered, 70);
        let again = estimate_relative_pose(&pts, &pix, &k, &cfg).unwrap();
        assert_eq!(pose, again);
    }
}

#[test]
fn pnp_is_thread_count_independent() {
    let k = Intrinsics::centered(500.0, 640, 480);
    let cam = pose_cam(25.0, Vector3::new(1.0, 2.0, 0.5), Vector3::new(0.3, -0.2, 0.4));
    let (pts, pix, _) = pnp_correspondences(&mut rng(9), &cam, 80, 0.4, (2.0, 6.0));
    let cfg = RansacConfig::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_relative_pose(&pts, &pix, &k, &cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn pnp_input_errors() {
    let k = Intrinsics::centered(500.0, 640, 480);
    let cam = pose_cam(0.0, Vector3::y(), Vector3::zeros());
    let (pts, pix, _) = pnp_correspondences(&mut rng(2), &cam, 3, 0.0, (2.0, 6.0));
    assert!(matches!(
        estimate_relative_pose(&pts, &pix, &k, &RansacConfig::default()),
        Err(lsm_core::Error::InsufficientData { needed: 4, got: 3 })
    ));
    // pure noise: no hypothesis explains four points
    let mut r = rng(3);
    let pts: Vec<_> = (0..12)
        .map(|_| Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(2.0..4.0)))
        .collect();
    let pix: Vec<_> = (0..12)
        .map(|_| [r.gen_range(0.0..640.0), r.gen_range(0.0..480.0)])
        .collect();
    let cfg = RansacConfig {
        threshold_px: 1e-3,
        ..RansacConfig::default()
    };
    assert!(matches!(
        estimate_relative_pose(&pts, &pix, &k, &cfg),
        Err(lsm_core::Error::NoConsensus { .. })
    ));
}

#[test]
fn p3p_contains_true_pose() {
    let mut r = rng(4);
    for _ in 0..50 {
        let cam = pose_cam(
            r.gen_range(-40.0..40.0),
            Vector3::new(r.gen(), r.gen(), r.gen()),
            Vector3::new(r.gen(), r.gen(), r.gen()),
        );
        let (pts, pix, _) = pnp_correspondences(&mut r, &cam, 3, 0.0, (1.0, 8.0));
        let k = Intrinsics::centered(500.0, 640, 480);
        let rays: Vec<Vector3<f64>> = pix
            .iter()
            .map(|p| Vector3::new((p[0] - k.cx) / k.fx, (p[1] - k.cy) / k.fy, 1.0).normalize())
            .collect();
        let sols = p3p(&[pts[0], pts[1], pts[2]], &[rays[0], rays[1], rays[2]]);
        assert!(!sols.is_empty() && sols.len() <= 4);
        let best = sols
            .iter()
            .map(|(rot, t)| (rot - cam.rotation).amax() + (t - cam.translation).amax())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "{best}");
    }
}

#[test]
fn median_alignment() {
    let mut r = rng(5);
    let gt = Image::from_fn(5, 4, 1, |_, _, _| r.gen_range(0.5..4.0));
    let (a, s) = align_depth_median(&gt.scaled(2.0), &gt, None).unwrap();
    assert_eq!(a, gt);
    assert_eq!(s, 0.5);
    let (same, s) = align_depth_median(&gt, &gt, None).unwrap();
    assert_eq!(same, gt);
    assert_eq!(s, 1.0);
    let neg = Image::filled(5, 4, 1, -1.0);
    assert!(matches!(
        align_depth_median(&neg, &gt, None),
        Err(lsm_core::Error::Degenerate(_))
    ));
    assert!(align_depth_median(&gt, &gt, Some(&[false; 20])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_median_matches_sort(vals in proptest::collection::vec(0.01f64..10.0, 1..40), seed in 0u64..1000) {
        let n = vals.len();
        let mut r = rng(seed);
        let mut mask: Vec<bool> = (0..n).map(|_| r.gen_bool(0.6)).collect();
        mask[0] = true;
        let pred = Image::from_vec(n, 1, 1, vals.clone()).unwrap();
        let gt = Image::filled(n, 1, 1, 1.0);
        let (_, s) = align_depth_median(&pred, &gt, Some(&mask)).unwrap();
        let mut sel: Vec<f64> = vals.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
        sel.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = sel[(sel.len() - 1) / 2];
        prop_assert_eq!(s, 1.0 / med);
    }

    #[test]
    fn recovered_pose_is_a_rotation(seed in 0u64..500) {
        let mut r = rng(seed);
        let cam = pose_cam(r.gen_range(-30.0..30.0), Vector3::new(r.gen(), r.gen(), 1.0), Vector3::new(r.gen(), r.gen(), r.gen()));
        let (pts, pix, _) = pnp_correspondences(&mut r, &cam, 30, 0.2, (2.0, 6.0));
        let pose = estimate_relative_pose(&pts, &pix, &Intrinsics::centered(500.0, 640, 480), &RansacConfig::default()).unwrap();
        prop_assert!((pose.rotation.transpose() * pose.rotation - Matrix3::identity()).amax() < 1e-6);
        prop_assert!((pose.rotation.determinant() - 1.0).abs() < 1e-6);
    }
}
