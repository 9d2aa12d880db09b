//! Homogeneous primitives and two-view epipolar geometry.
//!
//! Conventions: a [`Correspondence`] pairs a point `x` in the target image
//! (the one being warped) with `x'` in the reference image, and the
//! fundamental matrix satisfies `x'^T F x = 0`.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Homogeneous image point; equality is up to a nonzero scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HPoint2(pub Vector3<f64>);

impl HPoint2 {
    pub fn new(x: f64, y: f64, w: f64) -> Self {
        Self(Vector3::new(x, y, w))
    }

    pub fn from_pixel(p: &Point2<f64>) -> Self {
        Self(p.to_homogeneous())
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Unit-norm representative.
    pub fn unit(&self) -> Self {
        Self(self.0.normalize())
    }

    /// Inhomogeneous pixel coordinates, or `None` for points (numerically) at infinity.
    pub fn to_pixel(&self) -> Option<Point2<f64>> {
        let w = self.0.z;
        if w.abs() <= 1e-12 * self.0.norm() {
            None
        } else {
            Some(Point2::new(self.0.x / w, self.0.y / w))
        }
    }

    /// Angle between the two projective points, ignoring scale and sign.
    pub fn angle_to(&self, other: &HPoint2) -> f64 {
        let a = self.0.normalize();
        let b = other.0.normalize();
        a.cross(&b).norm().atan2(a.dot(&b).abs())
    }
}

/// A matched pair: `src` in the target image, `dst` in the reference image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub src: Point2<f64>,
    pub dst: Point2<f64>,
}

impl Correspondence {
    pub fn new(src: Point2<f64>, dst: Point2<f64>) -> Self {
        Self { src, dst }
    }

    pub fn from_coords(u1: f64, v1: f64, u2: f64, v2: f64) -> Self {
        Self::new(Point2::new(u1, v1), Point2::new(u2, v2))
    }
}

/// Rank-2 fundamental matrix with unit Frobenius norm and a fixed sign:
/// the first entry (row-major) of magnitude above 1e-12 is positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Projects `m` onto the rank-2 matrices and applies the normalization.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateGeometry("non-finite fundamental matrix".into()));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let s = svd.singular_values;
        if s[order[0]] <= 0.0 || s[order[1]] <= 1e-12 * s[order[0]] {
            return Err(Error::DegenerateGeometry("fundamental matrix has rank < 2".into()));
        }
        // Already rank 2 to working precision: keep the input entries, since
        // re-synthesizing from the SVD smears absolute error over the tiny
        // entries of a pixel-scale F.
        if s[order[2]] <= 1e-15 * s[order[0]] {
            return Ok(Self(normalize_sign(m / m.norm())));
        }
        let mut f = Matrix3::zeros();
        for &k in &order[..2] {
            f += s[k] * u.column(k) * v_t.row(k);
        }
        Ok(Self(normalize_sign(f / f.norm())))
    }

    /// Wraps a matrix without enforcing any invariant (imported or hand-built data).
    pub fn from_raw(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Algebraic epipolar residual `x'^T F x`.
    pub fn algebraic_error(&self, c: &Correspondence) -> f64 {
        c.dst.to_homogeneous().dot(&(self.0 * c.src.to_homogeneous()))
    }
}

fn normalize_sign(m: Matrix3<f64>) -> Matrix3<f64> {
    // nalgebra storage is column-major; walk rows explicitly.
    for r in 0..3 {
        for c in 0..3 {
            let v = m[(r, c)];
            if v.abs() > 1e-12 {
                return if v < 0.0 { -m } else { m };
            }
        }
    }
    m
}

/// Image line `a u + b v + c = 0` with `a^2 + b^2 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2 {
    /// Normalizes a homogeneous line; a line at infinity is returned unscaled.
    pub fn from_homogeneous(l: &Vector3<f64>) -> Self {
        let n = l.x.hypot(l.y);
        let s = if n > 0.0 { 1.0 / n } else { 1.0 };
        Self { a: l.x * s, b: l.y * s, c: l.z * s }
    }

    pub fn coeffs(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    /// Incidence value `l . x` for a homogeneous point.
    pub fn incidence(&self, x: &HPoint2) -> f64 {
        self.coeffs().dot(&x.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpipolarSide {
    /// Line `F x` in the reference image for a target point `x`.
    InReferenceFromTarget,
    /// Line `F^T x'` in the target image for a reference point `x'`.
    InTargetFromReference,
}

/// World plane `n^T X + d = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneParams {
    pub normal: Vector3<f64>,
    pub d: f64,
}

impl PlaneParams {
    pub fn new(normal: Vector3<f64>, d: f64) -> Self {
        Self { normal, d }
    }

    /// Signed value `n^T X + d`.
    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x) + self.d
    }
}

/// Relative pose `X' = R X + t` with unit-length translation direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidMotion {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation, 1e-9) {
            return Err(Error::DegenerateGeometry("rotation is not orthonormal".into()));
        }
        let n = translation.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::DegenerateGeometry("zero translation".into()));
        }
        Ok(Self { rotation, translation: translation / n })
    }
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    (r.transpose() * r - Matrix3::identity()).amax() <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// Pinhole intrinsics with square pixels and zero skew.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64) -> Self {
        Self { f, cx, cy }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.f, 0.0, self.cx, 0.0, self.f, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        let s = 1.0 / self.f;
        Matrix3::new(s, 0.0, -self.cx * s, 0.0, s, -self.cy * s, 0.0, 0.0, 1.0)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    v.cross_matrix()
}

/// Dehomogenizes `H x`; `None` when the result lies at infinity.
pub fn transfer(h: &Matrix3<f64>, x: &Point2<f64>) -> Option<Point2<f64>> {
    let p = h * x.to_homogeneous();
    if p.z.abs() <= 1e-12 * p.norm() {
        None
    } else {
        Some(Point2::new(p.x / p.z, p.y / p.z))
    }
}

/// Right singular vector of the smallest singular value.
pub(crate) fn null_vector(a: &DMatrix<f64>) -> DVector<f64> {
    let a = if a.nrows() < a.ncols() {
        a.clone().resize_vertically(a.ncols(), 0.0)
    } else {
        a.clone()
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let k = svd.singular_values.imin();
    v_t.row(k).transpose()
}

/// Similarity moving the centroid to the origin with RMS radius sqrt(2).
pub(crate) fn hartley_normalization(points: &[Point2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in points {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    let ms: f64 = points.iter().map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2)).sum::<f64>() / n;
    let s = if ms > 0.0 { (2.0 / ms).sqrt() } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply(t: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    Point2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Normalized eight-point estimate over all given correspondences.
pub fn eight_point(corrs: &[Correspondence]) -> Result<FundamentalMatrix> {
    if corrs.len() < 8 {
        return Err(Error::InsufficientMatches { found: corrs.len(), required: 8 });
    }
    let src: Vec<_> = corrs.iter().map(|c| c.src).collect();
    let dst: Vec<_> = corrs.iter().map(|c| c.dst).collect();
    let t1 = hartley_normalization(&src);
    let t2 = hartley_normalization(&dst);
    let mut a = DMatrix::zeros(corrs.len(), 9);
    for (i, (x, xp)) in src.iter().zip(&dst).enumerate() {
        let x = apply(&t1, x);
        let xp = apply(&t2, xp);
        let row = [
            xp.x * x.x,
            xp.x * x.y,
            xp.x,
            xp.y * x.x,
            xp.y * x.y,
            xp.y,
            x.x,
            x.y,
            1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let f = null_vector(&a);
    let fn_ = Matrix3::from_row_slice(f.as_slice());
    let fn_ = FundamentalMatrix::from_matrix(&fn_)?;
    FundamentalMatrix::from_matrix(&(t2.transpose() * fn_.matrix() * t1))
}

/// First-order (Sampson) geometric distance of a correspondence to the
/// epipolar variety, in pixels. `+inf` when the gradient vanishes.
pub fn sampson_distance(f: &FundamentalMatrix, c: &Correspondence) -> f64 {
    let m = f.matrix();
    let x = c.src.to_homogeneous();
    let xp = c.dst.to_homogeneous();
    let fx = m * x;
    let ftxp = m.transpose() * xp;
    let terms = [fx.x * fx.x, fx.y * fx.y, ftxp.x * ftxp.x, ftxp.y * ftxp.y];
    if terms.iter().all(|t| *t < 1e-18) {
        return f64::INFINITY;
    }
    let den: f64 = terms.iter().sum();
    xp.dot(&fx).abs() / den.sqrt()
}

fn canonical_epipole(v: Vector3<f64>) -> HPoint2 {
    let v = v.normalize();
    let flip = if v.z.abs() > 1e-15 {
        v.z < 0.0
    } else {
        v.iter().find(|c| c.abs() > 1e-15).is_some_and(|c| *c < 0.0)
    };
    HPoint2(if flip { -v } else { v })
}

/// Unit-norm epipoles `(e, e')` with `F e = 0` and `F^T e' = 0`.
pub fn epipoles(f: &FundamentalMatrix) -> Result<(HPoint2, HPoint2)> {
    let svd = f.matrix().svd(true, true);
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| s[*a].total_cmp(&s[*b]));
    let [kmin, mid, kmax] = order;
    if s[kmax] <= 0.0 || s[mid] <= 1e-10 * s[kmax] {
        return Err(Error::DegenerateGeometry("fundamental matrix has rank < 2".into()));
    }
    if s[kmin] > 1e-8 * s[kmax] {
        return Err(Error::DegenerateGeometry("fundamental matrix is not rank 2".into()));
    }
    let e = svd.v_t.unwrap().row(kmin).transpose();
    let ep = svd.u.unwrap().column(kmin).into_owned();
    Ok((canonical_epipole(e), canonical_epipole(ep)))
}

/// Epipolar line of `x` on the requested side, normalized so `a^2 + b^2 = 1`.
pub fn epipolar_line(f: &FundamentalMatrix, x: &HPoint2, side: EpipolarSide) -> Line2 {
    let l = match side {
        EpipolarSide::InReferenceFromTarget => f.matrix() * x.0,
        EpipolarSide::InTargetFromReference => f.matrix().transpose() * x.0,
    };
    Line2::from_homogeneous(&l)
}

/// Homography induced by `plane` between the target camera `K[I|0]` and the
/// reference camera `K'[R|t]`, keeping the absolute scale.
pub fn plane_induced_homography(
    k: &CameraIntrinsics,
    kp: &CameraIntrinsics,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    plane: &PlaneParams,
) -> Result<Matrix3<f64>> {
    if plane.d.abs() <= 1e-9 {
        return Err(Error::DegeneratePlane(plane.d));
    }
    let inner = rotation - translation * plane.normal.transpose() / plane.d;
    Ok(kp.matrix() * inner * k.inverse())
}

/// Least-squares `m` with `H ~= H_inf + e' m^T`, and the Frobenius residual.
pub fn rank1_epipolar_part(
    h: &Matrix3<f64>,
    h_inf: &Matrix3<f64>,
    eprime: &HPoint2,
) -> Result<(Vector3<f64>, f64)> {
    let e = eprime.0.normalize();
    let diff = h - h_inf;
    let m = diff.transpose() * e;
    let residual = (diff - e * m.transpose()).norm();
    if residual > 1e-3 * h.norm() {
        return Err(Error::ScaleMismatch { residual });
    }
    Ok((m, residual))
}

/// Normalized DLT homography mapping `src` onto `dst`, scaled to unit Frobenius norm.
pub fn homography_dlt(corrs: &[Correspondence]) -> Result<Matrix3<f64>> {
    if corrs.len() < 4 {
        return Err(Error::InsufficientMatches { found: corrs.len(), required: 4 });
    }
    let src: Vec<_> = corrs.iter().map(|c| c.src).collect();
    let dst: Vec<_> = corrs.iter().map(|c| c.dst).collect();
    if collinear(&src) || collinear(&dst) {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }
    let t1 = hartley_normalization(&src);
    let t2 = hartley_normalization(&dst);
    let mut a = DMatrix::zeros(2 * corrs.len(), 9);
    for (i, (x, xp)) in src.iter().zip(&dst).enumerate() {
        let x = apply(&t1, x);
        let xp = apply(&t2, xp);
        let r0 = [-x.x, -x.y, -1.0, 0.0, 0.0, 0.0, xp.x * x.x, xp.x * x.y, xp.x];
        let r1 = [0.0, 0.0, 0.0, -x.x, -x.y, -1.0, xp.y * x.x, xp.y * x.y, xp.y];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let h = null_vector(&a);
    let hn = Matrix3::from_row_slice(h.as_slice());
    let t2_inv = t2
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("normalization transform".into()))?;
    let h = t2_inv * hn * t1;
    let n = h.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::DegenerateGeometry("homography collapsed".into()));
    }
    Ok(h / n)
}

/// True when the points span (numerically) no more than a line: the smaller
/// eigenvalue of their scatter matrix vanishes relative to the larger.
pub fn collinear(pts: &[Point2<f64>]) -> bool {
    let n = pts.len() as f64;
    if pts.len() < 3 {
        return true;
    }
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = p.coords - c;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    // lambda_min * lambda_max = det, lambda_max <= tr
    !(tr > 0.0) || det <= 1e-12 * tr * tr
}

/// One-sided transfer error `|x' - proj(H x)|` in pixels.
pub fn transfer_error(h: &Matrix3<f64>, c: &Correspondence) -> f64 {
    transfer(h, &c.src).map_or(f64::INFINITY, |p| (p - c.dst).norm())
}
