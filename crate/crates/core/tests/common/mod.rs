#![allow(dead_code)]

use epistitch::synth::{rigs, Scene};
use epistitch::*;
use nalgebra::{Matrix3, Point2, Rotation3, Vector3};

pub fn k800() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 320.0, 240.0)
}

/// rot_y(5 deg), t = (0.2, 0, 0.02): the module examples' rig.
pub fn example_spec() -> SceneSpec {
    SceneSpec::default()
}

/// Generic rig (no intersecting optical axes), free points only.
pub fn generic_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        rotation: Vector3::new(0.03, 0.09, -0.02),
        translation: Vector3::new(0.25, 0.06, 0.03),
        planes: vec![],
        plane_points: 0,
        free_points: 200,
        free_depth: [3.0, 15.0],
        seed,
        ..Default::default()
    }
}

pub fn parallax_spec() -> SceneSpec {
    SceneSpec { planes: rigs::two_plane_crease(6.0, 0.6), plane_points: 300, ..Default::default() }
}

pub fn rotation_of(spec: &SceneSpec) -> Matrix3<f64> {
    *Rotation3::new(spec.rotation).matrix()
}

pub fn truth(spec: &SceneSpec) -> GroundTruth {
    Scene::new(spec.clone()).unwrap().truth().unwrap()
}

pub fn corrs(spec: &SceneSpec) -> Vec<Correspondence> {
    Scene::new(spec.clone()).unwrap().correspondences().unwrap().0
}

/// Oracle calibration with the ground-truth intrinsics and motion.
pub fn oracle_calibration(spec: &SceneSpec) -> StereoCalibration {
    let gt = truth(spec);
    let motion = RigidMotion::new(gt.rotation, gt.translation).unwrap();
    StereoCalibration::new(spec.k, spec.kp, motion, *gt.f.as_ref().unwrap()).unwrap()
}

pub fn min_sign_dist(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).norm().min((a + b).norm())
}

pub fn proj(v: &Vector3<f64>) -> Point2<f64> {
    Point2::new(v.x / v.z, v.y / v.z)
}
