//! Intrinsics bootstrap, rotation recovery from `F`, and refinement of the
//! infinite homography against the first-order epipolar objective.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    epipoles, is_rotation, CameraIntrinsics, Correspondence, FundamentalMatrix, HPoint2,
    RigidMotion,
};

/// Full two-view calibration; `h_inf = K' R K^-1` by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoCalibration {
    pub k: CameraIntrinsics,
    pub kp: CameraIntrinsics,
    pub motion: RigidMotion,
    pub f: FundamentalMatrix,
    pub e: HPoint2,
    pub ep: HPoint2,
    pub h_inf: Matrix3<f64>,
}

impl StereoCalibration {
    /// Assembles a calibration, deriving the epipoles and `H_inf`.
    pub fn new(
        k: CameraIntrinsics,
        kp: CameraIntrinsics,
        motion: RigidMotion,
        f: FundamentalMatrix,
    ) -> Result<Self> {
        let (e, ep) = epipoles(&f)?;
        let h_inf = infinite_homography(&k, &kp, &motion);
        Ok(Self { k, kp, motion, f, e, ep, h_inf })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub damping_init: f64,
    /// Use the verbatim `x^T H_inf F x` numerator instead of `x^T H_inf^T F x`.
    pub eq4_literal: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { max_iters: 100, rel_tol: 1e-10, damping_init: 1e-3, eq4_literal: false }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.rel_tol > 0.0) || !(self.damping_init > 0.0) {
            return Err(Error::Config("refine parameters out of range".into()));
        }
        Ok(())
    }
}

/// Principal point at the image center; focal length from the hint or
/// `1.2 * max(width, height)`.
pub fn initial_intrinsics(
    width: usize,
    height: usize,
    focal_hint: Option<f64>,
) -> Result<CameraIntrinsics> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidSize { width: width as i64, height: height as i64 });
    }
    let f = match focal_hint {
        Some(f) if f > 0.0 && f.is_finite() => f,
        Some(_) => return Err(Error::Config("focal hint must be positive".into())),
        None => 1.2 * width.max(height) as f64,
    };
    Ok(CameraIntrinsics::new(f, width as f64 / 2.0, height as f64 / 2.0))
}

/// The four `(R, t)` factorizations of the essential matrix `K'^T F K`.
pub fn essential_candidates(
    f: &FundamentalMatrix,
    k: &CameraIntrinsics,
    kp: &CameraIntrinsics,
) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let e = kp.matrix().transpose() * f.matrix() * k.matrix();
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    // sort columns so the smallest singular value is last
    let s = svd.singular_values;
    let kmin = s.imin();
    if kmin != 2 {
        u.swap_columns(kmin, 2);
        v_t.swap_rows(kmin, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Depths of a normalized correspondence along both rays, or `None` when the
/// rays are parallel.
pub(crate) fn triangulate_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    xn: &Vector3<f64>,
    xpn: &Vector3<f64>,
) -> Option<(f64, f64)> {
    // lambda1 R x - lambda2 x' = -t
    let a = r * xn;
    let b = -xpn;
    let ata = Matrix2::new(a.dot(&a), a.dot(&b), b.dot(&a), b.dot(&b));
    let atb = Vector2::new(-a.dot(t), -b.dot(t));
    let det = ata.determinant();
    if det.abs() <= 1e-14 * ata.norm_squared() {
        return None;
    }
    let sol = ata.try_inverse()? * atb;
    Some((sol.x, sol.y))
}

/// Number of correspondences that triangulate in front of both cameras.
pub fn cheirality_count(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &CameraIntrinsics,
    kp: &CameraIntrinsics,
    inliers: &[Correspondence],
) -> usize {
    let (ki, kpi) = (k.inverse(), kp.inverse());
    inliers
        .iter()
        .filter(|c| {
            let xn = ki * c.src.to_homogeneous();
            let xpn = kpi * c.dst.to_homogeneous();
            matches!(triangulate_depths(r, t, &xn, &xpn), Some((d1, d2)) if d1 > 0.0 && d2 > 0.0)
        })
        .count()
}

/// Rotation and unit translation from `F` under assumed intrinsics, chosen by
/// cheirality voting.
pub fn rotation_from_f(
    f: &FundamentalMatrix,
    k: &CameraIntrinsics,
    kp: &CameraIntrinsics,
    inliers: &[Correspondence],
) -> Result<RigidMotion> {
    if inliers.is_empty() {
        return Err(Error::InsufficientMatches { found: 0, required: 1 });
    }
    let candidates = essential_candidates(f, k, kp);
    let counts: Vec<usize> =
        candidates.iter().map(|(r, t)| cheirality_count(r, t, k, kp, inliers)).collect();
    let (best, &count) = counts
        .iter()
        .enumerate()
        .max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i)))
        .expect("four candidates");
    if 2 * count <= inliers.len() {
        return Err(Error::DegenerateGeometry(format!(
            "no pose passes cheirality for a majority ({count}/{})",
            inliers.len()
        )));
    }
    let (r, t) = candidates[best];
    RigidMotion::new(r, t)
}

pub fn infinite_homography(
    k: &CameraIntrinsics,
    kp: &CameraIntrinsics,
    motion: &RigidMotion,
) -> Matrix3<f64> {
    kp.matrix() * motion.rotation * k.inverse()
}

/// Deviation of `A = H_inf^T F` from skew-symmetry and the angle between its
/// skew axis and the epipole `e`.
pub fn compatibility_residual(h_inf: &Matrix3<f64>, f: &FundamentalMatrix) -> (f64, f64) {
    let a = h_inf.transpose() * f.matrix();
    let an = a.norm();
    if !(an >= 1e-15) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let skew_res = (a + a.transpose()).norm() / an;
    let s = (a - a.transpose()) * 0.5;
    let axis = Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]);
    let svd = f.matrix().svd(false, true);
    let e: Vector3<f64> = svd.v_t.unwrap().row(svd.singular_values.imin()).transpose();
    let axis_err = if axis.norm() > 0.0 {
        HPoint2(axis).angle_to(&HPoint2(e))
    } else {
        f64::INFINITY
    };
    (skew_res, axis_err)
}

/// Per-correspondence residual pair whose squared sum is the refinement objective.
pub(crate) fn objective_terms(
    h: &Matrix3<f64>,
    h_inv: &Matrix3<f64>,
    f: &Matrix3<f64>,
    c: &Correspondence,
    literal: bool,
) -> (f64, f64) {
    let x = c.src.to_homogeneous();
    let xp = c.dst.to_homogeneous();
    let fx = f * x;
    let ftxp = f.transpose() * xp;
    let den = fx.x * fx.x + fx.y * fx.y + ftxp.x * ftxp.x + ftxp.y * ftxp.y;
    let first = if literal { x.dot(&(h * fx)) } else { (h * x).dot(&fx) };
    let second = xp.dot(&(f * (h_inv * xp)));
    if den <= 0.0 {
        return (0.0, 0.0);
    }
    let s = den.sqrt();
    (first / s, second / s)
}

/// Sum over correspondences of the first-order epipolar transfer objective.
pub fn calibration_objective(
    h_inf: &Matrix3<f64>,
    f: &FundamentalMatrix,
    inliers: &[Correspondence],
    literal: bool,
) -> f64 {
    let Some(h_inv) = h_inf.try_inverse() else {
        return f64::INFINITY;
    };
    inliers
        .iter()
        .map(|c| {
            let (a, b) = objective_terms(h_inf, &h_inv, f.matrix(), c, literal);
            a * a + b * b
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub calibration: StereoCalibration,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// False when the iteration cap was hit while still making progress.
    pub converged: bool,
}

struct Problem<'a> {
    base_k: CameraIntrinsics,
    base_kp: CameraIntrinsics,
    f: &'a Matrix3<f64>,
    inliers: &'a [Correspondence],
    literal: bool,
}

impl Problem<'_> {
    fn homography(&self, p: &DVector<f64>) -> Matrix3<f64> {
        let k = CameraIntrinsics { f: p[0], ..self.base_k };
        let kp = CameraIntrinsics { f: p[1], ..self.base_kp };
        let r = Rotation3::new(Vector3::new(p[2], p[3], p[4]));
        kp.matrix() * r.matrix() * k.inverse()
    }

    fn residuals(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
        if !(p[0] > 0.0 && p[1] > 0.0) {
            return None;
        }
        let h = self.homography(p);
        let h_inv = h.try_inverse()?;
        let mut r = DVector::zeros(2 * self.inliers.len());
        for (i, c) in self.inliers.iter().enumerate() {
            let (a, b) = objective_terms(&h, &h_inv, self.f, c, self.literal);
            r[2 * i] = a;
            r[2 * i + 1] = b;
        }
        Some(r)
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>> {
        let m = 2 * self.inliers.len();
        let mut jac = DMatrix::zeros(m, p.len());
        for j in 0..p.len() {
            let h = 1e-6 * p[j].abs().max(1.0);
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[j] += h;
            lo[j] -= h;
            let col = (self.residuals(&hi)? - self.residuals(&lo)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        Some(jac)
    }
}

/// Damped least-squares refinement of `(f, f', R)` with `F` held fixed.
pub fn refine_calibration(
    init: &StereoCalibration,
    inliers: &[Correspondence],
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    if inliers.len() < 8 {
        return Err(Error::InsufficientMatches { found: inliers.len(), required: 8 });
    }
    let problem = Problem {
        base_k: init.k,
        base_kp: init.kp,
        f: init.f.matrix(),
        inliers,
        literal: cfg.eq4_literal,
    };
    let axis = Rotation3::from_matrix_unchecked(init.motion.rotation).scaled_axis();
    let mut p = DVector::from_vec(vec![init.k.f, init.kp.f, axis.x, axis.y, axis.z]);
    let mut r = problem
        .residuals(&p)
        .ok_or_else(|| Error::DegenerateGeometry("initial infinite homography is singular".into()))?;
    let mut obj = r.norm_squared();
    let initial_objective = obj;
    let mut history = vec![obj];
    let mut lambda = cfg.damping_init;
    let mut converged = false;
    let mut iterations = 0;

    // Residuals are in pixels. With pixel-scale F (entries spanning ~1e-6..1)
    // x'^T F x carries ~1e-8 px of roundoff, so (1e-7 px)^2 per term is "zero".
    let floor = 1e-14 * inliers.len() as f64;
    'outer: while iterations < cfg.max_iters {
        if obj <= floor {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(jac) = problem.jacobian(&p) else { break };
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let step = a.lu().solve(&(-&g));
            let candidate = step.map(|s| &p + s);
            let trial = candidate.as_ref().and_then(|c| problem.residuals(c).map(|r| (c, r)));
            match trial {
                Some((c, r_new)) if r_new.norm_squared() < obj => {
                    let obj_new = r_new.norm_squared();
                    let rel = (obj - obj_new) / obj;
                    p = c.clone();
                    r = r_new;
                    obj = obj_new;
                    history.push(obj);
                    lambda = (lambda / 10.0).max(1e-12);
                    if rel < cfg.rel_tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        // no descent direction left at this precision
                        converged = true;
                        break 'outer;
                    }
                }
            }
        }
    }
    if !converged {
        log::warn!("calibration refinement hit the iteration cap ({})", cfg.max_iters);
    }

    let k = CameraIntrinsics { f: p[0], ..init.k };
    let kp = CameraIntrinsics { f: p[1], ..init.kp };
    let rotation = *Rotation3::new(Vector3::new(p[2], p[3], p[4])).matrix();
    debug_assert!(is_rotation(&rotation, 1e-9));
    let motion = RigidMotion { rotation, translation: init.motion.translation };
    let calibration = StereoCalibration::new(k, kp, motion, init.f)?;
    Ok(RefineOutcome {
        calibration,
        initial_objective,
        final_objective: obj,
        history,
        iterations,
        converged,
    })
}
