//! Deterministic synthetic two-view scenes with exact ground truth.
//!
//! The target camera is `K[I|0]` (world frame), the reference camera is
//! `K'[R|t]`. Scenes are unions of textured planes rendered by ray casting
//! (nearest positive hit), so every visible surface point transfers exactly
//! under its plane's homography.

use nalgebra::{Matrix3, Point2, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    plane_induced_homography, CameraIntrinsics, Correspondence, FundamentalMatrix, HPoint2,
    PlaneParams,
};
use crate::image::{to_u8, ImageBuffer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Target camera intrinsics.
    pub k: CameraIntrinsics,
    /// Reference camera intrinsics.
    pub kp: CameraIntrinsics,
    /// Axis-angle rotation of `X' = R X + t`, radians.
    pub rotation: Vector3<f64>,
    /// Translation with its true magnitude (the baseline).
    pub translation: Vector3<f64>,
    pub planes: Vec<PlaneParams>,
    pub plane_points: usize,
    pub free_points: usize,
    /// Depth range of free points along the target rays.
    pub free_depth: [f64; 2],
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// World-space wavelength of the coarsest texture octave.
    pub texture_scale: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            k: CameraIntrinsics::new(800.0, 320.0, 240.0),
            kp: CameraIntrinsics::new(800.0, 320.0, 240.0),
            rotation: Vector3::new(0.0, 5f64.to_radians(), 0.0),
            translation: Vector3::new(0.2, 0.0, 0.02),
            planes: vec![PlaneParams::new(Vector3::new(0.0, 0.0, 1.0), -6.0)],
            plane_points: 200,
            free_points: 0,
            free_depth: [3.0, 15.0],
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            texture_scale: 0.6,
            seed: 0,
        }
    }
}

/// Geometry implied by a rig, all on the absolute scale of the rig.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub k: CameraIntrinsics,
    pub kp: CameraIntrinsics,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub h_inf: Matrix3<f64>,
    /// Absent for a zero baseline.
    pub f: Option<FundamentalMatrix>,
    pub e: Option<HPoint2>,
    pub ep: Option<HPoint2>,
    pub plane_homographies: Vec<Matrix3<f64>>,
}

impl GroundTruth {
    /// `(F, e, e')`, or `DegenerateGeometry` for a pure rotation.
    pub fn epipolar(&self) -> Result<(&FundamentalMatrix, &HPoint2, &HPoint2)> {
        match (&self.f, &self.e, &self.ep) {
            (Some(f), Some(e), Some(ep)) => Ok((f, e, ep)),
            _ => Err(Error::DegenerateGeometry("zero baseline: F is undefined".into())),
        }
    }
}

fn unit_sign(v: Vector3<f64>) -> HPoint2 {
    let v = v.normalize();
    HPoint2(if v.z < 0.0 { -v } else { v })
}

pub fn ground_truth_geometry(
    k: &CameraIntrinsics,
    kp: &CameraIntrinsics,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> GroundTruth {
    let h_inf = kp.matrix() * rotation * k.inverse();
    let (f, e, ep) = if translation.norm() > 0.0 {
        let ep = kp.matrix() * translation;
        let e = k.matrix() * (-rotation.transpose() * translation);
        let f = FundamentalMatrix::from_matrix(&(ep.cross_matrix() * h_inf)).ok();
        (f, Some(unit_sign(e)), Some(unit_sign(ep)))
    } else {
        (None, None, None)
    };
    GroundTruth {
        k: *k,
        kp: *kp,
        rotation: *rotation,
        translation: *translation,
        h_inf,
        f,
        e,
        ep,
        plane_homographies: Vec::new(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Target,
    Reference,
}

/// Prepared scene: cameras, planes with texture frames.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    rotation: Matrix3<f64>,
    frames: Vec<PlaneFrame>,
}

#[derive(Clone, Debug)]
struct PlaneFrame {
    origin: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
}

impl PlaneFrame {
    fn new(p: &PlaneParams) -> Self {
        let n = p.normal.normalize();
        let origin = -p.d * p.normal / p.normal.norm_squared();
        let helper = if n.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
        let a = helper.cross(&n).normalize();
        let b = n.cross(&a);
        Self { origin, a, b }
    }
}

#[derive(Clone, Debug)]
pub struct ScenePair {
    pub reference: ImageBuffer,
    pub target: ImageBuffer,
    pub correspondences: Vec<Correspondence>,
    /// True for the injected outliers.
    pub outlier: Vec<bool>,
    pub truth: GroundTruth,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, salt: u64) -> f64 {
    let h = splitmix(splitmix(ix as u64 ^ salt.rotate_left(17)) ^ (iy as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (sx, sy) = (fade(x - fx), fade(y - fy));
    let a = lattice(ix, iy, salt);
    let b = lattice(ix + 1, iy, salt);
    let c = lattice(ix, iy + 1, salt);
    let d = lattice(ix + 1, iy + 1, salt);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

const PALETTE: [[[f64; 3]; 2]; 3] = [
    [[40.0, 70.0, 120.0], [235.0, 200.0, 120.0]],
    [[120.0, 40.0, 50.0], [150.0, 220.0, 200.0]],
    [[30.0, 100.0, 40.0], [230.0, 170.0, 210.0]],
];

/// Procedural texture in plane coordinates: three octaves of value noise
/// plus a soft checker, mapped through a fixed two-color palette per plane.
pub fn texture(plane: usize, s: f64, t: f64, scale: f64) -> [f64; 3] {
    let mut n = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    for octave in 0..3u64 {
        let lambda = scale / (1u64 << octave) as f64;
        n += amp * value_noise(s / lambda, t / lambda, (plane as u64) * 16 + octave);
        norm += amp;
        amp *= 0.5;
    }
    n /= norm;
    let period = 0.7 * scale;
    let checker = 0.5
        + 0.5 * (2.0 * (std::f64::consts::PI * s / period).sin() * (std::f64::consts::PI * t / period).sin()).tanh();
    let mix = 0.7 * n + 0.3 * checker;
    let [lo, hi] = PALETTE[plane % PALETTE.len()];
    [
        lo[0] + (hi[0] - lo[0]) * mix,
        lo[1] + (hi[1] - lo[1]) * mix,
        lo[2] + (hi[2] - lo[2]) * mix,
    ]
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::InvalidSpec("image size must be positive".into()));
        }
        if !(spec.k.f > 0.0 && spec.kp.f > 0.0) {
            return Err(Error::InvalidSpec("focal lengths must be positive".into()));
        }
        if !(0.0..1.0).contains(&spec.outlier_fraction) || !(spec.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec("noise or outlier fraction out of range".into()));
        }
        if spec.planes.iter().any(|p| !(p.normal.norm() > 0.0)) {
            return Err(Error::InvalidSpec("plane normal must be nonzero".into()));
        }
        if !(spec.free_depth[0] > 0.0 && spec.free_depth[1] >= spec.free_depth[0]) {
            return Err(Error::InvalidSpec("free-point depth range is invalid".into()));
        }
        let rotation = *Rotation3::new(spec.rotation).matrix();
        let frames = spec.planes.iter().map(PlaneFrame::new).collect();
        Ok(Self { spec, rotation, frames })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn truth(&self) -> Result<GroundTruth> {
        let s = &self.spec;
        let mut gt = ground_truth_geometry(&s.k, &s.kp, &self.rotation, &s.translation);
        gt.plane_homographies = s
            .planes
            .iter()
            .map(|p| plane_induced_homography(&s.k, &s.kp, &self.rotation, &s.translation, p))
            .collect::<Result<_>>()?;
        Ok(gt)
    }

    fn camera_center(&self, view: View) -> Vector3<f64> {
        match view {
            View::Target => Vector3::zeros(),
            View::Reference => -self.rotation.transpose() * self.spec.translation,
        }
    }

    fn ray(&self, view: View, pixel: &Point2<f64>) -> (Vector3<f64>, Vector3<f64>) {
        match view {
            View::Target => (Vector3::zeros(), self.spec.k.inverse() * pixel.to_homogeneous()),
            View::Reference => (
                self.camera_center(View::Reference),
                self.rotation.transpose() * (self.spec.kp.inverse() * pixel.to_homogeneous()),
            ),
        }
    }

    /// Nearest visible surface point along a pixel ray: `(plane index, world point)`.
    pub fn visible_point(&self, view: View, pixel: &Point2<f64>) -> Option<(usize, Vector3<f64>)> {
        let (o, d) = self.ray(view, pixel);
        let mut best: Option<(usize, f64)> = None;
        for (k, p) in self.spec.planes.iter().enumerate() {
            let den = p.normal.dot(&d);
            if den.abs() < 1e-15 {
                continue;
            }
            let lambda = -p.eval(&o) / den;
            if lambda > 1e-9 && best.is_none_or(|(_, l)| lambda < l) {
                best = Some((k, lambda));
            }
        }
        best.map(|(k, l)| (k, o + d * l))
    }

    pub fn project(&self, view: View, x: &Vector3<f64>) -> Option<Point2<f64>> {
        let (k, xc) = match view {
            View::Target => (&self.spec.k, *x),
            View::Reference => (&self.spec.kp, self.rotation * x + self.spec.translation),
        };
        if xc.z <= 1e-9 {
            return None;
        }
        let p = k.matrix() * xc;
        Some(Point2::new(p.x / p.z, p.y / p.z))
    }

    fn in_image(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= self.spec.width as f64 - 1.0
            && p.y <= self.spec.height as f64 - 1.0
    }

    /// Exact transfer of a target pixel to the reference view through the
    /// visible surface; `None` if the surface point is hidden or off-image.
    pub fn transfer(&self, x: &Point2<f64>) -> Option<Point2<f64>> {
        let (k, xw) = self.visible_point(View::Target, x)?;
        let xp = self.project(View::Reference, &xw)?;
        let (k2, back) = self.visible_point(View::Reference, &xp)?;
        let tol = 1e-7 * (1.0 + xw.norm());
        (k2 == k && (back - xw).norm() <= tol).then_some(xp)
    }

    pub fn render(&self, view: View) -> ImageBuffer {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut img = ImageBuffer::new(w, h, 3);
        let mut px = [0u8; 3];
        for y in 0..h {
            for x in 0..w {
                let p = Point2::new(x as f64, y as f64);
                let rgb = match self.visible_point(view, &p) {
                    Some((k, xw)) => {
                        let fr = &self.frames[k];
                        let rel = xw - fr.origin;
                        texture(k, fr.a.dot(&rel), fr.b.dot(&rel), self.spec.texture_scale)
                    }
                    None => [0.0; 3],
                };
                for c in 0..3 {
                    px[c] = to_u8(rgb[c]);
                }
                img.set_pixel(x, y, &px);
            }
        }
        img
    }

    /// Labeled correspondences: exact projections (plus noise) and outliers.
    pub fn correspondences(&self) -> Result<(Vec<Correspondence>, Vec<bool>)> {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let (wmax, hmax) = (s.width as f64 - 1.0, s.height as f64 - 1.0);
        let mut inliers = Vec::with_capacity(s.plane_points + s.free_points);

        let mut attempts = 0;
        let mut placed = 0;
        while placed < s.plane_points && !s.planes.is_empty() && attempts < 100 * s.plane_points {
            attempts += 1;
            let x = Point2::new(rng.random_range(0.0..=wmax), rng.random_range(0.0..=hmax));
            if let Some(xp) = self.transfer(&x) {
                if self.in_image(&xp) {
                    inliers.push(Correspondence::new(x, xp));
                    placed += 1;
                }
            }
        }
        attempts = 0;
        placed = 0;
        while placed < s.free_points && attempts < 100 * s.free_points {
            attempts += 1;
            let x = Point2::new(rng.random_range(0.0..=wmax), rng.random_range(0.0..=hmax));
            let depth = rng.random_range(s.free_depth[0]..=s.free_depth[1]);
            let xw = s.k.inverse() * x.to_homogeneous() * depth;
            if let Some(xp) = self.project(View::Reference, &xw) {
                if self.in_image(&xp) {
                    inliers.push(Correspondence::new(x, xp));
                    placed += 1;
                }
            }
        }
        if inliers.is_empty() {
            return Err(Error::InvalidSpec("no scene point is visible in both views".into()));
        }
        if s.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, s.noise_sigma).expect("sigma checked");
            for c in &mut inliers {
                c.src += nalgebra::Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
                c.dst += nalgebra::Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
        let n_out = (s.outlier_fraction / (1.0 - s.outlier_fraction) * inliers.len() as f64).round()
            as usize;
        let mut labeled: Vec<(Correspondence, bool)> = inliers.into_iter().map(|c| (c, false)).collect();
        for _ in 0..n_out {
            let c = Correspondence::from_coords(
                rng.random_range(0.0..=wmax),
                rng.random_range(0.0..=hmax),
                rng.random_range(0.0..=wmax),
                rng.random_range(0.0..=hmax),
            );
            labeled.push((c, true));
        }
        labeled.shuffle(&mut rng);
        Ok(labeled.into_iter().unzip())
    }
}

/// Renders both views and generates the labeled correspondences.
pub fn make_scene_pair(spec: &SceneSpec) -> Result<ScenePair> {
    let scene = Scene::new(spec.clone())?;
    let truth = scene.truth()?;
    let (correspondences, outlier) = scene.correspondences()?;
    Ok(ScenePair {
        reference: scene.render(View::Reference),
        target: scene.render(View::Target),
        correspondences,
        outlier,
        truth,
    })
}

/// Convenience rig builders used by tests, benches and the CLI examples.
pub mod rigs {
    use super::*;

    /// Convex dihedral: two slanted planes meeting in a vertical crease in
    /// front of the target camera.
    pub fn two_plane_crease(depth: f64, slope: f64) -> Vec<PlaneParams> {
        // z = depth + slope * x  and  z = depth - slope * x
        vec![
            PlaneParams::new(Vector3::new(-slope, 0.0, 1.0), -depth),
            PlaneParams::new(Vector3::new(slope, 0.0, 1.0), -depth),
        ]
    }

    pub fn fronto_plane(depth: f64) -> Vec<PlaneParams> {
        vec![PlaneParams::new(Vector3::new(0.0, 0.0, 1.0), -depth)]
    }
}
