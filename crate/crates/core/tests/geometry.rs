mod common;

use common::*;
use epistitch::geometry::*;
use epistitch::ransac::estimate_fundamental_ransac;
use epistitch::synth::Scene;
use epistitch::*;
use nalgebra::{Matrix3, Vector2, Vector3};

fn translation_rig_corrs() -> Vec<Correspondence> {
    // K = K' = I, R = I, t = (1, 0, 0): x' = x + (1/Z, 0)
    let mut out = Vec::new();
    for i in 0..20 {
        let x = 0.3 * (i as f64 * 0.71).sin();
        let y = 0.25 * (i as f64 * 1.3).cos();
        let z = 2.0 + (i % 7) as f64;
        let xw = Vector3::new(x * z, y * z, z);
        out.push(Correspondence::new(proj(&xw), proj(&(xw + Vector3::x()))));
    }
    out
}

#[test]
fn pure_translation_fundamental() {
    let corrs = translation_rig_corrs();
    // K = I: coordinates are normalized, so the pixel threshold is rescaled
    let cfg = RansacConfig { threshold: 1e-4, ..Default::default() };
    let est = estimate_fundamental_ransac(&corrs, &cfg).unwrap();
    let expect = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0) / 2f64.sqrt();
    assert!(min_sign_dist(est.f.matrix(), &expect) < 1e-9, "{}", est.f.matrix());
    assert_eq!(est.inlier_count(), 20);
    // sign convention: first nonzero entry (row 1, col 2) positive
    assert!(est.f.matrix()[(1, 2)] > 0.0);
}

#[test]
fn translation_epipoles_at_infinity() {
    let f = FundamentalMatrix::from_matrix(&Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0))
        .unwrap();
    let (e, ep) = epipoles(&f).unwrap();
    assert!((e.0.x.abs() - 1.0).abs() < 1e-12 && e.0.y.abs() < 1e-12 && e.0.z.abs() < 1e-12);
    assert!((ep.0.x.abs() - 1.0).abs() < 1e-12);
    let l = epipolar_line(&f, &HPoint2::new(0.0, 0.0, 1.0), EpipolarSide::InReferenceFromTarget);
    let c = l.coeffs();
    assert!(c.x.abs() < 1e-15 && (c.y.abs() - 1.0).abs() < 1e-15 && c.z.abs() < 1e-15);
}

#[test]
fn oracle_rig_ransac_is_exact() {
    let spec = SceneSpec { plane_points: 0, planes: vec![], free_points: 200, ..example_spec() };
    let corrs = corrs(&spec);
    let gt = truth(&spec);
    let est = estimate_fundamental_ransac(&corrs, &RansacConfig::default()).unwrap();
    assert_eq!(est.inlier_count(), corrs.len());
    let oracle = gt.f.unwrap();
    let rms = (corrs.iter().map(|c| sampson_distance(&oracle, c).powi(2)).sum::<f64>()
        / corrs.len() as f64)
        .sqrt();
    assert!(rms < 1e-6);
    let rms_est = (corrs.iter().map(|c| sampson_distance(&est.f, c).powi(2)).sum::<f64>()
        / corrs.len() as f64)
        .sqrt();
    assert!(rms_est < 1e-6, "{rms_est}");
    assert!(min_sign_dist(est.f.matrix(), oracle.matrix()) < 1e-6);
    // invariants of every estimate
    let svd = est.f.matrix().svd(false, false);
    assert!(svd.singular_values.min() < 1e-12);
    assert!((est.f.matrix().norm() - 1.0).abs() < 1e-12);
}

#[test]
fn noisy_ransac_recall() {
    let spec = SceneSpec {
        plane_points: 0,
        planes: vec![],
        free_points: 200,
        noise_sigma: 1.0,
        outlier_fraction: 0.2,
        seed: 11,
        ..example_spec()
    };
    let (corrs, outlier) = Scene::new(spec).unwrap().correspondences().unwrap();
    let cfg = RansacConfig { threshold: 2.5, ..Default::default() };
    let est = estimate_fundamental_ransac(&corrs, &cfg).unwrap();
    let n_in = outlier.iter().filter(|o| !**o).count();
    let recalled = est.inliers.iter().zip(&outlier).filter(|(i, o)| **i && !**o).count();
    let recall = recalled as f64 / n_in as f64;
    assert!(recall >= 0.95, "recall {recall}");
    let inl = est.inlier_set(&corrs);
    let rms = (inl.iter().map(|c| sampson_distance(&est.f, c).powi(2)).sum::<f64>()
        / inl.len() as f64)
        .sqrt();
    assert!(rms < 1.5, "{rms}");
    assert!(inl.iter().all(|c| sampson_distance(&est.f, c) <= cfg.threshold));
}

#[test]
fn oracle_epipoles_and_lines() {
    let spec = example_spec();
    let gt = truth(&spec);
    let f = gt.f.unwrap();
    let (e, ep) = epipoles(&f).unwrap();
    assert!((f.matrix() * e.0).norm() <= 1e-9);
    assert!((f.matrix().transpose() * ep.0).norm() <= 1e-9);
    let kt = spec.kp.matrix() * spec.translation;
    assert!(ep.angle_to(&HPoint2(kt)) < 1e-6);
    for c in corrs(&spec) {
        let l = epipolar_line(&f, &HPoint2::from_pixel(&c.src), EpipolarSide::InReferenceFromTarget);
        assert!(l.signed_distance(&c.dst).abs() < 1e-9);
        assert!(l.incidence(&ep.unit()).abs() < 1e-9);
        let l2 = epipolar_line(&f, &HPoint2::from_pixel(&c.dst), EpipolarSide::InTargetFromReference);
        assert!(l2.incidence(&e.unit()).abs() < 1e-9);
    }
}

/// Gold-standard geometric distance by brute force over the pencil of
/// epipolar lines: min over line pairs of d(x, l)^2 + d(x', l')^2.
fn brute_force_distance(f: &FundamentalMatrix, c: &Correspondence) -> f64 {
    let (e, _) = epipoles(f).unwrap();
    let e_px = e.to_pixel().unwrap();
    // lines through e in the target parametrized by angle; matching line is F * (point on it)
    let mut best = f64::INFINITY;
    let eval = |theta: f64| {
        let dir = Vector2::new(theta.cos(), theta.sin());
        let p = e_px + dir * 100.0;
        let l = Line2::from_homogeneous(&(e.0.cross(&p.to_homogeneous())));
        let lp = epipolar_line(f, &HPoint2::from_pixel(&p), EpipolarSide::InReferenceFromTarget);
        l.signed_distance(&c.src).powi(2) + lp.signed_distance(&c.dst).powi(2)
    };
    let n = 20000;
    let mut arg = 0.0;
    for k in 0..n {
        let th = std::f64::consts::PI * k as f64 / n as f64;
        let v = eval(th);
        if v < best {
            best = v;
            arg = th;
        }
    }
    // golden-section polish
    let (mut a, mut b) = (arg - std::f64::consts::PI / n as f64, arg + std::f64::consts::PI / n as f64);
    for _ in 0..100 {
        let m1 = a + (b - a) * 0.382;
        let m2 = a + (b - a) * 0.618;
        if eval(m1) < eval(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    eval(0.5 * (a + b)).min(best).sqrt()
}

#[test]
fn sampson_matches_geometric_distance() {
    let spec = example_spec();
    let f = truth(&spec).f.unwrap();
    for c in corrs(&spec).iter().take(10) {
        assert!(sampson_distance(&f, c) < 1e-9);
        let l = epipolar_line(&f, &HPoint2::from_pixel(&c.src), EpipolarSide::InReferenceFromTarget);
        let n = Vector2::new(l.a, l.b);
        let moved = Correspondence::new(c.src, c.dst + 2.0 * n);
        let s = sampson_distance(&f, &moved);
        let g = brute_force_distance(&f, &moved);
        assert!((s - g).abs() <= 0.1 * g, "sampson {s} vs geometric {g}");
    }
}

#[test]
fn plane_homography_examples() {
    let k = k800();
    let r = rotation_of(&example_spec());
    let plane = PlaneParams::new(Vector3::new(0.1, -0.2, 1.0), -6.0);
    let h0 = plane_induced_homography(&k, &k, &r, &Vector3::zeros(), &plane).unwrap();
    assert!((h0 - k.matrix() * r * k.inverse()).norm() < 1e-12);
    let id = CameraIntrinsics::new(1.0, 0.0, 0.0);
    let h = plane_induced_homography(&id, &id, &Matrix3::identity(), &Vector3::zeros(), &plane).unwrap();
    assert!((h - Matrix3::identity()).norm() < 1e-15);
    assert!(matches!(
        plane_induced_homography(&k, &k, &r, &Vector3::x(), &PlaneParams::new(Vector3::z(), 0.0)),
        Err(Error::DegeneratePlane(_))
    ));
}

#[test]
fn plane_points_transfer_exactly() {
    let spec = SceneSpec { planes: vec![PlaneParams::new(Vector3::new(0.1, -0.2, 1.0), -6.0)], ..example_spec() };
    let gt = truth(&spec);
    let h = gt.plane_homographies[0];
    for c in corrs(&spec) {
        let p = transfer(&h, &c.src).unwrap();
        assert!((p - c.dst).norm() < 1e-6);
    }
}

#[test]
fn rank_one_epipolar_part() {
    let spec = example_spec();
    let gt = truth(&spec);
    let plane = PlaneParams::new(Vector3::new(0.1, -0.2, 1.0), -6.0);
    let h = plane_induced_homography(&spec.k, &spec.kp, &gt.rotation, &gt.translation, &plane).unwrap();
    let ep = HPoint2(spec.kp.matrix() * spec.translation).unit();
    let (m, residual) = rank1_epipolar_part(&h, &gt.h_inf, &ep).unwrap();
    let kt = (spec.kp.matrix() * spec.translation).norm();
    let expect = -kt * spec.k.inverse().transpose() * plane.normal / plane.d;
    // e' sign is canonical (positive third coordinate); K't has positive z here
    assert!((m - expect).norm() < 1e-6 * expect.norm(), "{m} vs {expect}");
    assert!(residual < 1e-9 * h.norm());
    let sv = (h - gt.h_inf).svd(false, false).singular_values;
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    assert!(s[1] / s[0] < 1e-9);

    let (m0, r0) = rank1_epipolar_part(&gt.h_inf, &gt.h_inf, &ep).unwrap();
    assert_eq!((m0, r0), (Vector3::zeros(), 0.0));
    assert!(matches!(
        rank1_epipolar_part(&(gt.h_inf * 3.0), &gt.h_inf, &ep),
        Err(Error::ScaleMismatch { .. })
    ));
}

#[test]
fn h_inf_x_lies_on_epipolar_line() {
    let spec = generic_spec(3);
    let gt = truth(&spec);
    let f = gt.f.unwrap();
    for c in corrs(&spec) {
        let xinf = HPoint2(gt.h_inf * c.src.to_homogeneous()).unit();
        let l = epipolar_line(&f, &HPoint2::from_pixel(&c.src), EpipolarSide::InReferenceFromTarget);
        assert!(l.incidence(&xinf).abs() <= 1e-9);
    }
}

#[test]
fn degenerate_planar_input() {
    let spec = SceneSpec { plane_points: 100, ..example_spec() };
    let corrs = corrs(&spec);
    assert!(matches!(
        estimate_fundamental_ransac(&corrs, &RansacConfig::default()),
        Err(Error::DegenerateGeometry(_))
    ));
}
