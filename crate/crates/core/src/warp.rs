//! Canvas layout, mesh-based backward warping and feathered blending.
//!
//! Coordinates: the warped plane is the reference image's pixel frame. A
//! canvas pixel `(i, j)` sits at reference coordinates `(i + ox, j + oy)`.

use nalgebra::{Matrix3, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::edf::{DisplacementGrid, Rect};
use crate::error::{Error, Result};
use crate::image::{to_u8, ImageBuffer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    /// Largest canvas area allowed, in multiples of the reference area.
    pub canvas_cap: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self { canvas_cap: 64.0 }
    }
}

/// Relative homogeneous depth under which a target ray counts as parallel
/// to the reference image plane.
const RAY_EPS: f64 = 1e-6;

/// Rescales `h` so the target center maps with homogeneous coordinate 1.
pub fn orient_homography(h: &Matrix3<f64>, tgt_w: usize, tgt_h: usize) -> Matrix3<f64> {
    let c = Point2::new((tgt_w as f64 - 1.0) / 2.0, (tgt_h as f64 - 1.0) / 2.0).to_homogeneous();
    let w = (h * c).z;
    if w.abs() > 0.0 {
        h / w
    } else {
        *h
    }
}

/// Points along the target border spaced at most `step` pixels apart.
pub fn border_samples(width: usize, height: usize, step: f64) -> Vec<Point2<f64>> {
    let (x1, y1) = (width as f64 - 1.0, height as f64 - 1.0);
    let mut out = Vec::new();
    let mut edge = |a: Point2<f64>, b: Point2<f64>| {
        let n = ((b - a).norm() / step).ceil().max(1.0) as usize;
        for k in 0..n {
            out.push(a + (b - a) * (k as f64 / n as f64));
        }
    };
    edge(Point2::new(0.0, 0.0), Point2::new(x1, 0.0));
    edge(Point2::new(x1, 0.0), Point2::new(x1, y1));
    edge(Point2::new(x1, y1), Point2::new(0.0, y1));
    edge(Point2::new(0.0, y1), Point2::new(0.0, 0.0));
    out
}

/// Image of the target border under `h`, skipping rays at or beyond 90 degrees.
pub fn mapped_border(h: &Matrix3<f64>, width: usize, height: usize) -> Vec<Point2<f64>> {
    let h = orient_homography(h, width, height);
    border_samples(width, height, 1.0)
        .into_iter()
        .filter_map(|x| {
            let p = h * x.to_homogeneous();
            (p.z >= RAY_EPS).then(|| Point2::new(p.x / p.z, p.y / p.z))
        })
        .collect()
}

/// Bounding box of the target warped by `h`, or `None` if no border ray is usable.
pub fn warped_bounds(h: &Matrix3<f64>, width: usize, height: usize) -> Option<Rect> {
    let pts = mapped_border(h, width, height);
    let first = pts.first()?;
    let init = Rect::new(first.x, first.y, first.x, first.y);
    Some(pts.iter().fold(init, |r, p| r.union_point(p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Canvas {
    pub ox: i64,
    pub oy: i64,
    pub width: usize,
    pub height: usize,
}

impl Canvas {
    pub fn to_reference(&self, i: usize, j: usize) -> Point2<f64> {
        Point2::new(i as f64 + self.ox as f64, j as f64 + self.oy as f64)
    }

    pub fn from_reference(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new(p.x - self.ox as f64, p.y - self.oy as f64)
    }

    fn from_rect(r: &Rect) -> Self {
        let (ox, oy) = (r.x0.floor(), r.y0.floor());
        Self {
            ox: ox as i64,
            oy: oy as i64,
            width: (r.x1.ceil() - ox) as usize + 1,
            height: (r.y1.ceil() - oy) as usize + 1,
        }
    }
}

/// Bounding box of the reference rectangle and the forward-mapped target
/// border (`p + displacement(p)`), subject to the area cap.
pub fn compute_canvas(
    ref_size: (usize, usize),
    tgt_size: (usize, usize),
    h: &Matrix3<f64>,
    grid: &DisplacementGrid,
    canvas_cap: f64,
) -> Result<Canvas> {
    let mut bounds = Rect::of_image(ref_size.0, ref_size.1);
    for p in mapped_border(h, tgt_size.0, tgt_size.1) {
        let q = grid.map(&p);
        if q.x.is_finite() && q.y.is_finite() {
            bounds = bounds.union_point(&q);
        }
    }
    let limit = canvas_cap * (ref_size.0 * ref_size.1) as f64;
    let area = (bounds.x1 - bounds.x0 + 1.0) * (bounds.y1 - bounds.y0 + 1.0);
    if !(area <= limit) {
        let clamp = |v: f64| v.min(usize::MAX as f64) as usize;
        return Err(Error::ExcessiveCanvas {
            width: clamp(bounds.x1 - bounds.x0 + 1.0),
            height: clamp(bounds.y1 - bounds.y0 + 1.0),
            cap: canvas_cap,
        });
    }
    Ok(Canvas::from_rect(&bounds))
}

/// Forward-mapped anchor lattice: `positions[k] = anchor_k + displacement_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpMesh {
    pub origin: Point2<f64>,
    pub spacing: f64,
    pub nu: usize,
    pub nv: usize,
    pub positions: Vec<Point2<f64>>,
    /// One flag per quad (`(nu-1) * (nv-1)`, row-major): positively oriented and convex.
    pub valid: Vec<bool>,
}

#[inline]
fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

impl WarpMesh {
    pub fn from_grid(grid: &DisplacementGrid) -> Self {
        let positions: Vec<Point2<f64>> = (0..grid.nv)
            .flat_map(|j| (0..grid.nu).map(move |i| (i, j)))
            .map(|(i, j)| grid.anchor(i, j) + grid.displacement[grid.index(i, j)])
            .collect();
        let mut mesh = Self {
            origin: grid.origin,
            spacing: grid.spacing,
            nu: grid.nu,
            nv: grid.nv,
            positions,
            valid: Vec::new(),
        };
        mesh.valid = (0..mesh.nv.saturating_sub(1))
            .flat_map(|j| (0..mesh.nu.saturating_sub(1)).map(move |i| (i, j)))
            .map(|(i, j)| mesh.quad_is_valid(i, j))
            .collect();
        mesh
    }

    /// Corners in order (00, 10, 11, 01).
    pub fn quad(&self, i: usize, j: usize) -> [Point2<f64>; 4] {
        let at = |ii: usize, jj: usize| self.positions[jj * self.nu + ii];
        [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]
    }

    fn quad_is_valid(&self, i: usize, j: usize) -> bool {
        let q = self.quad(i, j);
        if !q.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return false;
        }
        (0..4).all(|k| {
            let e0 = q[(k + 1) % 4] - q[k];
            let e1 = q[(k + 2) % 4] - q[(k + 1) % 4];
            cross2(&e0, &e1) > 0.0
        })
    }

    pub fn anchor(&self, i: usize, j: usize) -> Point2<f64> {
        Point2::new(
            self.origin.x + i as f64 * self.spacing,
            self.origin.y + j as f64 * self.spacing,
        )
    }
}

/// Forward bilinear map of a quad with corners (00, 10, 11, 01).
#[inline]
pub fn bilinear_point(q: &[Point2<f64>; 4], s: f64, t: f64) -> Point2<f64> {
    let c = q[0].coords * ((1.0 - s) * (1.0 - t))
        + q[1].coords * (s * (1.0 - t))
        + q[2].coords * (s * t)
        + q[3].coords * ((1.0 - s) * t);
    Point2::from(c)
}

/// Inverse of [`bilinear_point`]: `(s, t)` in the unit square with
/// `bilinear_point(q, s, t) = p`, if any.
pub fn inverse_bilinear(q: &[Point2<f64>; 4], p: &Point2<f64>) -> Option<(f64, f64)> {
    const TOL: f64 = 1e-9;
    let e = q[1] - q[0];
    let f = q[3] - q[0];
    let g = (q[0] - q[1]) + (q[2] - q[3]);
    let h = p - q[0];
    let k2 = cross2(&g, &f);
    let k1 = cross2(&e, &f) + cross2(&h, &g);
    let k0 = cross2(&h, &e);
    let scale = e.norm_squared().max(f.norm_squared());

    let solve_s = |t: f64| -> f64 {
        let den = e + g * t;
        let num = h - f * t;
        num.dot(&den) / den.norm_squared()
    };
    let in_unit = |v: f64| (-TOL..=1.0 + TOL).contains(&v);
    let accept = |t: f64| -> Option<(f64, f64)> {
        if !in_unit(t) {
            return None;
        }
        let s = solve_s(t);
        in_unit(s).then(|| (s.clamp(0.0, 1.0), t.clamp(0.0, 1.0)))
    };

    if k2.abs() <= 1e-12 * scale {
        if k1.abs() <= 1e-15 * scale {
            return None;
        }
        return accept(-k0 / k1);
    }
    let disc = k1 * k1 - 4.0 * k0 * k2;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let qv = -0.5 * (k1 + k1.signum() * sq);
    let r1 = qv / k2;
    let r2 = if qv != 0.0 { k0 / qv } else { r1 };
    accept(r1).or_else(|| accept(r2))
}

#[derive(Clone, Debug)]
pub struct WarpOutput {
    pub image: ImageBuffer,
    /// Canvas pixels inside valid quads whose source fell outside the target.
    pub outside_source: usize,
    /// Quads skipped as folded or degenerate.
    pub invalid_quads: usize,
    /// Largest forward re-projection error of an accepted inversion, pixels.
    pub max_inversion_error: f64,
}

/// Backward-warps the target onto the canvas through the mesh and `H^-1`.
pub fn backward_warp(
    tgt: &ImageBuffer,
    mesh: &WarpMesh,
    h: &Matrix3<f64>,
    canvas: &Canvas,
) -> Result<WarpOutput> {
    let h = orient_homography(h, tgt.width(), tgt.height());
    let h_inv = h
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry("warp homography is singular".into()))?;
    let mut out = ImageBuffer::new(canvas.width, canvas.height, tgt.channels());
    let mut visited = vec![false; canvas.width * canvas.height];
    let mut outside_source = 0;
    let mut invalid_quads = 0;
    let mut max_err: f64 = 0.0;
    let mut px = [0.0f64; 3];
    let mut value = [0u8; 3];
    let nq = mesh.nu.saturating_sub(1);
    for j in 0..mesh.nv.saturating_sub(1) {
        for i in 0..nq {
            if !mesh.valid[j * nq + i] {
                invalid_quads += 1;
                continue;
            }
            let quad = mesh.quad(i, j);
            let quad_c = quad.map(|p| canvas.from_reference(&p));
            let (mut lo, mut hi) = (quad_c[0], quad_c[0]);
            for p in &quad_c[1..] {
                lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
            let x0 = lo.x.ceil().max(0.0) as usize;
            let y0 = lo.y.ceil().max(0.0) as usize;
            let x1 = (hi.x.floor() as i64).min(canvas.width as i64 - 1);
            let y1 = (hi.y.floor() as i64).min(canvas.height as i64 - 1);
            if x1 < 0 || y1 < 0 {
                continue;
            }
            let anchor = mesh.anchor(i, j);
            for cy in y0..=y1 as usize {
                for cx in x0..=x1 as usize {
                    let idx = cy * canvas.width + cx;
                    if visited[idx] {
                        continue;
                    }
                    let q = Point2::new(cx as f64, cy as f64);
                    let Some((s, t)) = inverse_bilinear(&quad_c, &q) else { continue };
                    visited[idx] = true;
                    max_err = max_err.max((bilinear_point(&quad_c, s, t) - q).norm());
                    let p = Point2::new(anchor.x + s * mesh.spacing, anchor.y + t * mesh.spacing);
                    let x = h_inv * p.to_homogeneous();
                    if x.z <= 0.0 {
                        outside_source += 1;
                        continue;
                    }
                    if tgt.sample_bilinear(x.x / x.z, x.y / x.z, &mut px) {
                        for k in 0..tgt.channels() {
                            value[k] = to_u8(px[k]);
                        }
                        out.set_pixel(cx, cy, &value);
                    } else {
                        outside_source += 1;
                    }
                }
            }
        }
    }
    Ok(WarpOutput { image: out, outside_source, invalid_quads, max_inversion_error: max_err })
}

/// Reference image placed on the canvas.
pub fn place_reference(reference: &ImageBuffer, canvas: &Canvas) -> ImageBuffer {
    let mut out = ImageBuffer::new(canvas.width, canvas.height, reference.channels());
    let (dx, dy) = (-canvas.ox as usize, -canvas.oy as usize);
    for y in 0..reference.height() {
        for x in 0..reference.width() {
            if reference.is_valid(x, y) {
                out.set_pixel(x + dx, y + dy, reference.pixel(x, y));
            }
        }
    }
    out
}

/// City-block distance from each valid pixel to the nearest invalid pixel
/// (outside the raster counts as invalid). Zero on invalid pixels.
pub fn feather_weights(mask: &[bool], width: usize, height: usize) -> Vec<u32> {
    let big = (width + height + 2) as u32;
    let mut d: Vec<u32> = mask.iter().map(|m| if *m { big } else { 0 }).collect();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if d[i] == 0 {
                continue;
            }
            let up = if y > 0 { d[i - width] } else { 0 };
            let left = if x > 0 { d[i - 1] } else { 0 };
            d[i] = d[i].min(up + 1).min(left + 1);
        }
    }
    for y in (0..height).rev() {
        for x in (0..width).rev() {
            let i = y * width + x;
            if d[i] == 0 {
                continue;
            }
            let down = if y + 1 < height { d[i + width] } else { 0 };
            let right = if x + 1 < width { d[i + 1] } else { 0 };
            d[i] = d[i].min(down + 1).min(right + 1);
        }
    }
    d
}

#[derive(Clone, Debug)]
pub struct BlendOutput {
    pub image: ImageBuffer,
    /// Set when the two masks do not intersect.
    pub empty_overlap: bool,
}

/// Feathered linear blend of two canvas-aligned images.
pub fn linear_blend(a: &ImageBuffer, b: &ImageBuffer) -> Result<BlendOutput> {
    if !a.same_shape(b) {
        return Err(Error::Config("blend inputs differ in shape".into()));
    }
    let (w, h, c) = (a.width(), a.height(), a.channels());
    let wa = feather_weights(a.mask(), w, h);
    let wb = feather_weights(b.mask(), w, h);
    let mut out = ImageBuffer::new(w, h, c);
    let mut overlap = 0usize;
    let mut value = [0u8; 3];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            match (a.mask()[i], b.mask()[i]) {
                (true, false) => out.set_pixel(x, y, a.pixel(x, y)),
                (false, true) => out.set_pixel(x, y, b.pixel(x, y)),
                (true, true) => {
                    overlap += 1;
                    let (fa, fb) = (wa[i] as f64, wb[i] as f64);
                    let (pa, pb) = (a.pixel(x, y), b.pixel(x, y));
                    for k in 0..c {
                        value[k] = to_u8((fa * pa[k] as f64 + fb * pb[k] as f64) / (fa + fb));
                    }
                    out.set_pixel(x, y, &value);
                }
                (false, false) => {}
            }
        }
    }
    if overlap == 0 {
        log::warn!("blend inputs do not overlap");
    }
    Ok(BlendOutput { image: out, empty_overlap: overlap == 0 })
}
