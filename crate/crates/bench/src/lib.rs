//! Shared fixtures for the benchmarks.

use epistitch::synth::{rigs, ScenePair};
use epistitch::{make_scene_pair, CameraIntrinsics, SceneSpec};

/// Two-plane parallax pair at `width x height`, focal `1.25 * width`.
pub fn crease_pair(width: usize, height: usize, points: usize) -> ScenePair {
    let k = CameraIntrinsics::new(1.25 * width as f64, width as f64 / 2.0, height as f64 / 2.0);
    let spec = SceneSpec {
        width,
        height,
        k,
        kp: k,
        planes: rigs::two_plane_crease(6.0, 0.6),
        plane_points: points,
        ..Default::default()
    };
    make_scene_pair(&spec).expect("fixture scene is valid")
}
