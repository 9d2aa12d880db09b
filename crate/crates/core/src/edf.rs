//! Epipolar displacement field.
//!
//! After the infinite homography maps a target point `x` to `x_inf`, the
//! remaining offset to its match `x'` slides along the epipolar line. The
//! field interpolating those offsets is a thin-plate spline whose affine part
//! is expressed in the basis `(e', e'_perp)` built from the inhomogeneous
//! epipole:
//!
//! ```text
//! du(p) = sum_i w_i  phi(|p - c_i|) + e'_1 (m . p~) + q_1 (n . p~)
//! dv(p) = sum_i w'_i phi(|p - c_i|) + e'_2 (m . p~) + q_2 (n . p~)
//! ```
//!
//! with `phi(r) = r^2 ln r`, `p~ = (u, v, 1)` and `q = (-e'_2, e'_1)`. The
//! shared vector `m` carries the displacement along the epipole direction;
//! `n` is the cross-epipole remainder needed for the side conditions
//! `M^T w = M^T w' = 0` and exact interpolation to hold together.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Correspondence, HPoint2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdfConfig {
    /// Diagonal regularizer of the kernel matrix.
    pub rho: f64,
    /// Multiplier applied to `rho`.
    pub lambda_scale: f64,
    /// Anchor spacing of the displacement grid, pixels.
    pub cell_px: usize,
    /// Transition width outside the overlap, in multiples of the largest residual.
    pub taper_factor: f64,
}

impl Default for EdfConfig {
    fn default() -> Self {
        Self { rho: 8.0 * std::f64::consts::PI, lambda_scale: 1.0, cell_px: 10, taper_factor: 5.0 }
    }
}

impl EdfConfig {
    pub fn effective_rho(&self) -> f64 {
        self.rho * self.lambda_scale
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.effective_rho() >= 0.0) || !self.effective_rho().is_finite() {
            return Err(Error::Config("rho must be finite and >= 0".into()));
        }
        if self.cell_px == 0 {
            return Err(Error::Config("cell_px must be >= 1".into()));
        }
        if !(self.taper_factor >= 0.0) {
            return Err(Error::Config("taper_factor must be >= 0".into()));
        }
        Ok(())
    }
}

/// Thin-plate radial basis `r^2 ln r`, zero at the origin.
#[inline]
pub fn tps_kernel(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// Same kernel from the squared radius: `r^2 ln r = 0.5 r^2 ln r^2`.
#[inline]
fn tps_kernel_sq(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// A control point of the field: `x_inf` and the residual `g = x' - x_inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualSample {
    pub center: Point2<f64>,
    pub g: Vector2<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Residuals {
    pub samples: Vec<ResidualSample>,
    /// Correspondences dropped because `H_inf x` lies at infinity.
    pub at_infinity: usize,
}

impl Residuals {
    pub fn max_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.g.norm()).fold(0.0, f64::max)
    }
}

/// Homogeneous third coordinate below which a mapped point counts as infinite.
const INFINITY_EPS: f64 = 1e-9;

/// `x_inf = proj(H x)` and `g = x' - x_inf` for every correspondence.
pub fn compute_residual(h: &Matrix3<f64>, c: &Correspondence) -> Result<ResidualSample> {
    let p = h * c.src.to_homogeneous();
    if p.z.abs() <= INFINITY_EPS {
        return Err(Error::PointAtInfinity);
    }
    let center = Point2::new(p.x / p.z, p.y / p.z);
    Ok(ResidualSample { center, g: c.dst - center })
}

pub fn compute_residuals(h: &Matrix3<f64>, inliers: &[Correspondence]) -> Residuals {
    let mut out = Residuals::default();
    for c in inliers {
        match compute_residual(h, c) {
            Ok(s) => out.samples.push(s),
            Err(_) => out.at_infinity += 1,
        }
    }
    if out.at_infinity > 0 {
        log::warn!("{} correspondences map to infinity under H_inf", out.at_infinity);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Affine part expressed along the epipole.
    Epipolar,
    /// Standard thin-plate spline with an unconstrained affine part.
    Plain,
}

/// Fitted displacement field; immutable after fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct EdfModel {
    pub kind: FieldKind,
    pub centers: Vec<Point2<f64>>,
    /// Control residuals after duplicate merging, aligned with `centers`.
    pub targets: Vec<Vector2<f64>>,
    pub w: Vec<f64>,
    pub wprime: Vec<f64>,
    pub m: Vector3<f64>,
    pub n: Vector3<f64>,
    /// First affine direction: the inhomogeneous epipole `(e'_1, e'_2)`.
    pub eprime: Vector2<f64>,
    /// Second affine direction, perpendicular to `eprime`.
    pub cross: Vector2<f64>,
    pub rho: f64,
    /// Largest control residual magnitude, pixels.
    pub max_residual: f64,
}

impl EdfModel {
    /// A field that is zero everywhere.
    pub fn zero(eprime: Vector2<f64>) -> Self {
        Self {
            kind: FieldKind::Epipolar,
            centers: Vec::new(),
            targets: Vec::new(),
            w: Vec::new(),
            wprime: Vec::new(),
            m: Vector3::zeros(),
            n: Vector3::zeros(),
            eprime,
            cross: Vector2::new(-eprime.y, eprime.x),
            rho: 0.0,
            max_residual: 0.0,
        }
    }

    pub fn eval(&self, p: &Point2<f64>) -> Vector2<f64> {
        let (mut du, mut dv) = (0.0, 0.0);
        for ((c, wu), wv) in self.centers.iter().zip(&self.w).zip(&self.wprime) {
            let k = tps_kernel_sq((p - c).norm_squared());
            du += wu * k;
            dv += wv * k;
        }
        let ph = p.to_homogeneous();
        let am = self.m.dot(&ph);
        let an = self.n.dot(&ph);
        Vector2::new(
            du + self.eprime.x * am + self.cross.x * an,
            dv + self.eprime.y * am + self.cross.y * an,
        )
    }

    /// Per-axis affine coefficients `(a_u, a_v)` in pixel coordinates.
    pub fn affine(&self) -> (Vector3<f64>, Vector3<f64>) {
        (
            self.m * self.eprime.x + self.n * self.cross.x,
            self.m * self.eprime.y + self.n * self.cross.y,
        )
    }

    /// Mean distance between the field and its control residuals.
    pub fn control_misfit(&self) -> f64 {
        if self.centers.is_empty() {
            return 0.0;
        }
        let total: f64 =
            self.centers.iter().zip(&self.targets).map(|(c, g)| (self.eval(c) - g).norm()).sum();
        total / self.centers.len() as f64
    }

    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "centers": self.centers.iter().map(|c| [c.x, c.y]).collect::<Vec<_>>(),
            "w": self.w,
            "wprime": self.wprime,
            "m": [self.m.x, self.m.y, self.m.z],
            "n": [self.n.x, self.n.y, self.n.z],
            "eprime": [self.eprime.x, self.eprime.y],
            "cross": [self.cross.x, self.cross.y],
            "rho": self.rho,
        })
    }
}

fn merge_duplicates(samples: &[ResidualSample]) -> (Vec<Point2<f64>>, Vec<Vector2<f64>>) {
    const MERGE_TOL2: f64 = 1e-12;
    let mut centers: Vec<Point2<f64>> = Vec::with_capacity(samples.len());
    let mut sums: Vec<(Vector2<f64>, usize)> = Vec::with_capacity(samples.len());
    for s in samples {
        match centers.iter().position(|c| (c - s.center).norm_squared() < MERGE_TOL2) {
            Some(k) => {
                sums[k].0 += s.g;
                sums[k].1 += 1;
            }
            None => {
                centers.push(s.center);
                sums.push((s.g, 1));
            }
        }
    }
    let targets = sums.into_iter().map(|(g, n)| g / n as f64).collect();
    (centers, targets)
}

/// Solution of one thin-plate system in a centered, scaled frame.
struct TpsSolution {
    w: [Vec<f64>; 2],
    affine: [Vector3<f64>; 2],
}

fn solve_tps(
    centers: &[Point2<f64>],
    targets: &[Vector2<f64>],
    rho: f64,
) -> Result<TpsSolution> {
    let n = centers.len();
    if n < 3 {
        return Err(Error::SingularSystem(format!("{n} distinct centers, need at least 3")));
    }
    let mean = centers.iter().fold(Vector2::zeros(), |acc, c| acc + c.coords) / n as f64;
    let mut cov = Matrix2::zeros();
    for c in centers {
        let d = c.coords - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(Error::SingularSystem("control points are collinear".into()));
    }
    let scale = (cov.trace() / n as f64).sqrt();

    let local: Vec<Vector2<f64>> = centers.iter().map(|c| c.coords - mean).collect();
    let dim = n + 3;
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..i {
            let k = tps_kernel_sq((local[i] - local[j]).norm_squared());
            a[(i, j)] = k;
            a[(j, i)] = k;
        }
        a[(i, i)] = rho;
        let row = [local[i].x / scale, local[i].y / scale, 1.0];
        for (c, v) in row.iter().enumerate() {
            a[(i, n + c)] = *v;
            a[(n + c, i)] = *v;
        }
    }
    let mut rhs = DMatrix::zeros(dim, 2);
    for (i, g) in targets.iter().enumerate() {
        rhs[(i, 0)] = g.x;
        rhs[(i, 1)] = g.y;
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("kernel system is singular".into()))?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularSystem("non-finite kernel solution".into()));
    }
    let to_pixels = |col: usize| {
        // coefficients of ((u - mu) / s, (v - mv) / s, 1)
        let (b1, b2, b3) = (sol[(n, col)] / scale, sol[(n + 1, col)] / scale, sol[(n + 2, col)]);
        Vector3::new(b1, b2, b3 - b1 * mean.x - b2 * mean.y)
    };
    Ok(TpsSolution {
        w: [sol.column(0).rows(0, n).iter().copied().collect(), sol.column(1).rows(0, n).iter().copied().collect()],
        affine: [to_pixels(0), to_pixels(1)],
    })
}

/// Fits the epipolar displacement field to the control residuals.
pub fn fit_edf(samples: &[ResidualSample], eprime: &HPoint2, cfg: &EdfConfig) -> Result<EdfModel> {
    cfg.validate()?;
    let e = eprime.unit();
    if e.0.z.abs() < 1e-9 {
        return Err(Error::EpipoleAtInfinity);
    }
    let ep = Vector2::new(e.0.x / e.0.z, e.0.y / e.0.z);
    let cross = Vector2::new(-ep.y, ep.x);
    let basis = Matrix2::new(ep.x, cross.x, ep.y, cross.y);
    if !(basis.determinant().abs() > 1e-12) {
        return Err(Error::SingularSystem("epipole coincides with the pixel origin".into()));
    }
    fit_with_basis(samples, FieldKind::Epipolar, ep, cross, cfg)
}

/// Plain thin-plate spline (axis-aligned affine basis), used when the
/// epipolar structure is unavailable.
pub fn fit_plain_tps(samples: &[ResidualSample], cfg: &EdfConfig) -> Result<EdfModel> {
    cfg.validate()?;
    fit_with_basis(samples, FieldKind::Plain, Vector2::x(), Vector2::y(), cfg)
}

fn fit_with_basis(
    samples: &[ResidualSample],
    kind: FieldKind,
    dir: Vector2<f64>,
    cross: Vector2<f64>,
    cfg: &EdfConfig,
) -> Result<EdfModel> {
    let (centers, targets) = merge_duplicates(samples);
    let rho = cfg.effective_rho();
    let sol = solve_tps(&centers, &targets, rho)?;
    let basis = Matrix2::new(dir.x, cross.x, dir.y, cross.y);
    let inv = basis
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("degenerate affine basis".into()))?;
    // [a_u^T; a_v^T] = basis * [m^T; n^T]
    let (au, av) = (sol.affine[0], sol.affine[1]);
    let m = au * inv[(0, 0)] + av * inv[(0, 1)];
    let n = au * inv[(1, 0)] + av * inv[(1, 1)];
    let max_residual = targets.iter().map(|g| g.norm()).fold(0.0, f64::max);
    let [w, wprime] = sol.w;
    Ok(EdfModel { kind, centers, targets, w, wprime, m, n, eprime: dir, cross, rho, max_residual })
}

/// Axis-aligned rectangle with inclusive extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Pixel-center extent of a `width x height` raster.
    pub fn of_image(width: usize, height: usize) -> Self {
        Self::new(0.0, 0.0, width as f64 - 1.0, height as f64 - 1.0)
    }

    pub fn is_empty(&self) -> bool {
        !(self.x1 >= self.x0 && self.y1 >= self.y0)
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn distance(&self, p: &Point2<f64>) -> f64 {
        let dx = (self.x0 - p.x).max(0.0).max(p.x - self.x1);
        let dy = (self.y0 - p.y).max(0.0).max(p.y - self.y1);
        dx.hypot(dy)
    }

    pub fn union_point(&self, p: &Point2<f64>) -> Self {
        Self::new(self.x0.min(p.x), self.y0.min(p.y), self.x1.max(p.x), self.y1.max(p.y))
    }
}

pub const MAX_GRID_ANCHORS: usize = 4_000_000;

/// Uniform anchor lattice in the warped plane with tapered displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementGrid {
    pub origin: Point2<f64>,
    pub spacing: f64,
    pub nu: usize,
    pub nv: usize,
    /// Row-major, `nu * nv` entries.
    pub displacement: Vec<Vector2<f64>>,
    pub weight: Vec<f64>,
    /// Width of the taper band outside the overlap, pixels.
    pub transition: f64,
}

/// Smooth weight: 1 at distance 0, 0 at or beyond `width`.
pub fn taper_weight(distance: f64, width: f64) -> f64 {
    if distance <= 0.0 {
        return 1.0;
    }
    if !(width > 0.0) || distance >= width {
        return 0.0;
    }
    let s = distance / width;
    (1.0 - s) * (1.0 - s) * (1.0 + 2.0 * s)
}

impl DisplacementGrid {
    pub fn anchor(&self, i: usize, j: usize) -> Point2<f64> {
        Point2::new(
            self.origin.x + i as f64 * self.spacing,
            self.origin.y + j as f64 * self.spacing,
        )
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nu + i
    }

    pub fn extent(&self) -> Rect {
        let far = self.anchor(self.nu - 1, self.nv - 1);
        Rect::new(self.origin.x, self.origin.y, far.x, far.y)
    }

    /// Bilinear interpolation of anchor displacements; zero outside the lattice.
    pub fn interpolate(&self, p: &Point2<f64>) -> Vector2<f64> {
        let fx = (p.x - self.origin.x) / self.spacing;
        let fy = (p.y - self.origin.y) / self.spacing;
        let (maxx, maxy) = ((self.nu - 1) as f64, (self.nv - 1) as f64);
        if !(fx >= 0.0 && fy >= 0.0 && fx <= maxx && fy <= maxy) {
            return Vector2::zeros();
        }
        let i = (fx.floor() as usize).min(self.nu.saturating_sub(2));
        let j = (fy.floor() as usize).min(self.nv.saturating_sub(2));
        let (s, t) = (fx - i as f64, fy - j as f64);
        let at = |ii: usize, jj: usize| {
            let ii = ii.min(self.nu - 1);
            let jj = jj.min(self.nv - 1);
            self.displacement[self.index(ii, jj)]
        };
        at(i, j) * ((1.0 - s) * (1.0 - t))
            + at(i + 1, j) * (s * (1.0 - t))
            + at(i, j + 1) * ((1.0 - s) * t)
            + at(i + 1, j + 1) * (s * t)
    }

    /// Forward map of a warped-plane point: `p + displacement(p)`.
    pub fn map(&self, p: &Point2<f64>) -> Point2<f64> {
        p + self.interpolate(p)
    }
}

/// Samples the field on a lattice covering `warped_bbox`, tapering it to
/// zero outside `ref_rect`.
pub fn build_displacement_grid(
    model: &EdfModel,
    warped_bbox: &Rect,
    ref_rect: &Rect,
    cfg: &EdfConfig,
) -> Result<DisplacementGrid> {
    cfg.validate()?;
    if warped_bbox.is_empty() || ![warped_bbox.x0, warped_bbox.x1, warped_bbox.y0, warped_bbox.y1]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::InvalidSpec("empty warped bounding box".into()));
    }
    let spacing = cfg.cell_px as f64;
    let origin = Point2::new(warped_bbox.x0.floor(), warped_bbox.y0.floor());
    let nu_f = ((warped_bbox.x1 - origin.x) / spacing).ceil() + 1.0;
    let nv_f = ((warped_bbox.y1 - origin.y) / spacing).ceil() + 1.0;
    let total = nu_f * nv_f;
    if !(total <= MAX_GRID_ANCHORS as f64) {
        return Err(Error::ExcessiveGrid { anchors: total.min(usize::MAX as f64) as usize });
    }
    let (nu, nv) = (nu_f as usize, nv_f as usize);
    let transition = cfg.taper_factor * model.max_residual;
    let mut displacement = Vec::with_capacity(nu * nv);
    let mut weight = Vec::with_capacity(nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            let p = Point2::new(origin.x + i as f64 * spacing, origin.y + j as f64 * spacing);
            let wgt = taper_weight(ref_rect.distance(&p), transition);
            let d = if wgt > 0.0 { model.eval(&p) * wgt } else { Vector2::zeros() };
            displacement.push(d);
            weight.push(wgt);
        }
    }
    Ok(DisplacementGrid { origin, spacing, nu, nv, displacement, weight, transition })
}

/// Dense assembled form of the coupled system in `(w, w', m, n)`, for
/// verification: returns `(A, b)` with unknown order `[w, w', m, n]`.
pub fn assemble_coupled_system(
    centers: &[Point2<f64>],
    targets: &[Vector2<f64>],
    eprime: &Vector2<f64>,
    cross: &Vector2<f64>,
    rho: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = centers.len();
    let dim = 2 * n + 6;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let rows_u = 0;
    let rows_cu = n;
    let rows_v = n + 3;
    let rows_cv = 2 * n + 3;
    let (cw, cwp, cm, cn) = (0, n, 2 * n, 2 * n + 3);
    for i in 0..n {
        for j in 0..n {
            let k = tps_kernel((centers[i] - centers[j]).norm()) + if i == j { rho } else { 0.0 };
            a[(rows_u + i, cw + j)] = k;
            a[(rows_v + i, cwp + j)] = k;
        }
        let mrow = [centers[i].x, centers[i].y, 1.0];
        for c in 0..3 {
            a[(rows_u + i, cm + c)] = eprime.x * mrow[c];
            a[(rows_u + i, cn + c)] = cross.x * mrow[c];
            a[(rows_v + i, cm + c)] = eprime.y * mrow[c];
            a[(rows_v + i, cn + c)] = cross.y * mrow[c];
            a[(rows_cu + c, cw + i)] = mrow[c];
            a[(rows_cv + c, cwp + i)] = mrow[c];
        }
        b[rows_u + i] = targets[i].x;
        b[rows_v + i] = targets[i].y;
    }
    (a, b)
}

impl EdfModel {
    /// Unknown vector in the order used by [`assemble_coupled_system`].
    pub fn coupled_solution(&self) -> DVector<f64> {
        let mut z = Vec::with_capacity(2 * self.w.len() + 6);
        z.extend_from_slice(&self.w);
        z.extend_from_slice(&self.wprime);
        z.extend_from_slice(self.m.as_slice());
        z.extend_from_slice(self.n.as_slice());
        DVector::from_vec(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(u: f64, v: f64, gu: f64, gv: f64) -> ResidualSample {
        ResidualSample { center: Point2::new(u, v), g: Vector2::new(gu, gv) }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(tps_kernel(0.0), 0.0);
        assert_eq!(tps_kernel(1.0), 0.0);
        assert!((tps_kernel(2.0) - 4.0 * 2f64.ln()).abs() < 1e-15);
        assert!((tps_kernel_sq(4.0) - tps_kernel(2.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_in_zero_field_out() {
        let s: Vec<_> = [(0.0, 0.0), (50.0, 3.0), (10.0, 80.0), (70.0, 60.0)]
            .iter()
            .map(|&(u, v)| sample(u, v, 0.0, 0.0))
            .collect();
        let m = fit_edf(&s, &HPoint2::new(900.0, 200.0, 1.0), &EdfConfig::default()).unwrap();
        assert!(m.w.iter().chain(&m.wprime).all(|v| *v == 0.0));
        assert_eq!(m.m, Vector3::zeros());
        assert_eq!(m.eval(&Point2::new(33.0, 21.0)), Vector2::zeros());
    }

    #[test]
    fn collinear_centers_are_singular() {
        let s: Vec<_> = (0..6).map(|i| sample(i as f64, 2.0 * i as f64, 1.0, 0.0)).collect();
        assert!(matches!(
            fit_edf(&s, &HPoint2::new(1.0, 2.0, 1.0), &EdfConfig::default()),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn duplicates_are_merged() {
        let s = vec![
            sample(0.0, 0.0, 1.0, 0.0),
            sample(0.0, 0.0, 3.0, 0.0),
            sample(10.0, 0.0, 0.0, 0.0),
            sample(0.0, 10.0, 0.0, 0.0),
        ];
        let cfg = EdfConfig { rho: 0.0, ..Default::default() };
        let m = fit_edf(&s, &HPoint2::new(500.0, 40.0, 1.0), &cfg).unwrap();
        assert_eq!(m.centers.len(), 3);
        assert!((m.eval(&Point2::origin()) - Vector2::new(2.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn epipole_at_infinity_is_rejected() {
        let s = vec![sample(0.0, 0.0, 1.0, 0.0); 3];
        assert!(matches!(
            fit_edf(&s, &HPoint2::new(1.0, 0.0, 0.0), &EdfConfig::default()),
            Err(Error::EpipoleAtInfinity)
        ));
    }

    #[test]
    fn taper_profile() {
        assert_eq!(taper_weight(0.0, 50.0), 1.0);
        assert_eq!(taper_weight(50.0, 50.0), 0.0);
        assert_eq!(taper_weight(80.0, 50.0), 0.0);
        assert!((taper_weight(25.0, 50.0) - 0.5).abs() < 1e-15);
        assert_eq!(taper_weight(1.0, 0.0), 0.0);
    }

    #[test]
    fn rbf_free_field_moves_along_epipole() {
        let mut m = EdfModel::zero(Vector2::new(800.0, -120.0));
        m.m = Vector3::new(1e-4, -2e-4, 0.01);
        for p in [Point2::new(0.0, 0.0), Point2::new(300.0, 17.0), Point2::new(-40.0, 900.0)] {
            let d = m.eval(&p);
            assert!((d.x * m.eprime.y - d.y * m.eprime.x).abs() < 1e-12 * (1.0 + d.norm()));
        }
    }

    #[test]
    fn grid_rejects_runaway_size() {
        let m = EdfModel::zero(Vector2::new(1.0, 1.0));
        let bbox = Rect::new(0.0, 0.0, 1e5, 1e5);
        let cfg = EdfConfig { cell_px: 10, ..Default::default() };
        assert!(matches!(
            build_displacement_grid(&m, &bbox, &Rect::of_image(10, 10), &cfg),
            Err(Error::ExcessiveGrid { .. })
        ));
    }
}
