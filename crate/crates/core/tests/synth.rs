mod common;

use common::*;
use epistitch::geometry::transfer;
use epistitch::synth::{ground_truth_geometry, rigs, Scene, View};
use epistitch::*;
use nalgebra::{Matrix3, Point2, Vector3};

#[test]
fn same_seed_same_scene() {
    let spec = parallax_spec();
    let a = make_scene_pair(&spec).unwrap();
    let b = make_scene_pair(&spec).unwrap();
    assert_eq!(a.reference, b.reference);
    assert_eq!(a.target, b.target);
    assert_eq!(a.correspondences, b.correspondences);
    let c = make_scene_pair(&SceneSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(a.correspondences, c.correspondences);
}

#[test]
fn correspondences_satisfy_the_oracle() {
    for spec in [example_spec(), parallax_spec(), generic_spec(3)] {
        let f = truth(&spec).f.unwrap();
        let fm = f.matrix();
        for c in corrs(&spec) {
            let v = (c.dst.to_homogeneous().transpose() * fm * c.src.to_homogeneous())[0];
            assert!(v.abs() <= 1e-10, "{v}");
        }
    }
}

#[test]
fn plane_points_obey_their_homography() {
    let spec = parallax_spec();
    let gt = truth(&spec);
    let scene = Scene::new(spec.clone()).unwrap();
    let mut per_plane = [0usize; 2];
    for c in corrs(&spec) {
        let (plane, _) = scene.visible_point(View::Target, &c.src).unwrap();
        let p = transfer(&gt.plane_homographies[plane], &c.src).unwrap();
        assert!((p - c.dst).norm() <= 1e-6);
        per_plane[plane] += 1;
    }
    assert!(per_plane.iter().all(|n| *n > 20), "{per_plane:?}");
}

#[test]
fn distant_plane_approaches_h_inf() {
    let spec = SceneSpec { planes: rigs::fronto_plane(1e6), ..example_spec() };
    let gt = truth(&spec);
    let h = gt.plane_homographies[0];
    for x in [Point2::new(0.0, 0.0), Point2::new(320.0, 240.0), Point2::new(639.0, 479.0)] {
        let d = (transfer(&h, &x).unwrap() - transfer(&gt.h_inf, &x).unwrap()).norm();
        assert!(d <= 1e-2, "{d}");
    }
}

#[test]
fn zero_baseline_is_flagged() {
    let spec = SceneSpec { translation: Vector3::zeros(), ..example_spec() };
    let gt = truth(&spec);
    assert!(gt.f.is_none() && gt.e.is_none() && gt.ep.is_none());
    assert!(matches!(gt.epipolar(), Err(Error::DegenerateGeometry(_))));
    // every plane then induces H_inf
    assert!((gt.plane_homographies[0] - gt.h_inf).norm() < 1e-12);
}

#[test]
fn identity_cameras_translation_form() {
    let id = CameraIntrinsics::new(1.0, 0.0, 0.0);
    let gt = ground_truth_geometry(&id, &id, &Matrix3::identity(), &Vector3::x());
    let expect = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0) / 2f64.sqrt();
    assert!(min_sign_dist(gt.f.unwrap().matrix(), &expect) < 1e-12);
    assert!((gt.ep.unwrap().0 - Vector3::x()).norm() < 1e-12);
}

/// Two planes produce parallax well above a pixel relative to either plane,
/// and all of it points along the epipolar lines.
#[test]
fn crease_parallax_is_epipolar() {
    let spec = parallax_spec();
    let gt = truth(&spec);
    let ep = gt.ep.unwrap().to_pixel().unwrap();
    let h = gt.plane_homographies[0];
    let mut gmax: f64 = 0.0;
    for c in corrs(&spec) {
        let p = transfer(&h, &c.src).unwrap();
        let g = c.dst - p;
        gmax = gmax.max(g.norm());
        let b = ep - p;
        let cross = (g.x * b.y - g.y * b.x).abs() / b.norm();
        assert!(cross <= 1e-6, "{cross}");
    }
    assert!(gmax > 2.0, "{gmax}");
}

#[test]
fn render_and_transfer_agree() {
    let spec = example_spec();
    let scene = Scene::new(spec.clone()).unwrap();
    let (r, t) = (scene.render(View::Reference), scene.render(View::Target));
    assert_eq!((r.width(), r.height(), t.width(), t.height()), (640, 480, 640, 480));
    let x = Point2::new(300.0, 200.0);
    let xp = scene.transfer(&x).unwrap();
    let h = truth(&spec).plane_homographies[0];
    assert!((transfer(&h, &x).unwrap() - xp).norm() < 1e-9);
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SceneSpec { width: 0, ..Default::default() },
        SceneSpec { k: CameraIntrinsics::new(-1.0, 0.0, 0.0), ..Default::default() },
        SceneSpec { outlier_fraction: 1.5, ..Default::default() },
        SceneSpec { noise_sigma: -1.0, ..Default::default() },
        SceneSpec { free_depth: [5.0, 1.0], ..Default::default() },
        SceneSpec { planes: vec![PlaneParams::new(Vector3::zeros(), -1.0)], ..Default::default() },
    ];
    for spec in bad {
        assert!(matches!(Scene::new(spec), Err(Error::InvalidSpec(_))));
    }
}
