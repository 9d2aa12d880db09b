//! Overlap SSIM / PSNR and the epipolar-distance projectivity metric.

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::edf::Rect;
use crate::error::{Error, Result};
use crate::geometry::{epipolar_line, Correspondence, EpipolarSide, FundamentalMatrix, HPoint2};
use crate::image::ImageBuffer;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
pub const PSNR_CAP: f64 = 99.0;
/// Erosion radius applied to the overlap mask before measuring.
pub const OVERLAP_EROSION: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ssim: f64,
    pub psnr: f64,
    /// Absent when no epipolar geometry is available (homography fallback).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projectivity_mean_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projectivity_max_px: Option<f64>,
    pub n_eval_points: usize,
    pub overlap_area_px: usize,
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable Gaussian filter; only outputs whose full window lies in the
/// raster are meaningful (border outputs are left at zero).
fn gaussian_filter(src: &[f64], w: usize, h: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let r = WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in r..w.saturating_sub(r) {
            tmp[y * w + x] = (0..WINDOW).map(|k| g[k] * row[x + k - r]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in r..h.saturating_sub(r) {
        for x in r..w.saturating_sub(r) {
            out[y * w + x] = (0..WINDOW).map(|k| g[k] * tmp[(y + k - r) * w + x]).sum();
        }
    }
    out
}

/// Summed-area table with a zero first row/column.
fn integral(mask: &[bool], w: usize, h: usize) -> Vec<u32> {
    let mut s = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut run = 0;
        for x in 0..w {
            run += mask[y * w + x] as u32;
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + run;
        }
    }
    s
}

/// Number of set pixels in the square of half-size `r` centered at `(x, y)`,
/// which must lie fully inside the raster.
fn box_count(s: &[u32], w: usize, x: usize, y: usize, r: usize) -> u32 {
    let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
    let w1 = w + 1;
    s[y1 * w1 + x1] + s[y0 * w1 + x0] - s[y0 * w1 + x1] - s[y1 * w1 + x0]
}

fn check_inputs(a: &ImageBuffer, b: &ImageBuffer, mask: &[bool]) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || mask.len() != a.width() * a.height() {
        return Err(Error::Config("metric inputs differ in size".into()));
    }
    Ok(())
}

/// Mean SSIM over the 11x11 Gaussian windows that lie entirely in `mask`.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, mask: &[bool]) -> Result<f64> {
    check_inputs(a, b, mask)?;
    let (w, h) = (a.width(), a.height());
    let r = WINDOW / 2;
    if w < WINDOW || h < WINDOW {
        return Err(Error::EmptyOverlap);
    }
    let la = a.luma_plane();
    let lb = b.luma_plane();
    let g = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = gaussian_filter(&la, w, h, &g);
    let mu_b = gaussian_filter(&lb, w, h, &g);
    let aa = gaussian_filter(&prod(&la, &la), w, h, &g);
    let bb = gaussian_filter(&prod(&lb, &lb), w, h, &g);
    let ab = gaussian_filter(&prod(&la, &lb), w, h, &g);
    let sat = integral(mask, w, h);
    let full = (WINDOW * WINDOW) as u32;
    let (mut total, mut count) = (0.0, 0usize);
    for y in r..h - r {
        for x in r..w - r {
            if box_count(&sat, w, x, y, r) != full {
                continue;
            }
            let i = y * w + x;
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(total / count as f64)
}

/// PSNR over masked pixels (all channels), capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, mask: &[bool]) -> Result<f64> {
    check_inputs(a, b, mask)?;
    if a.channels() != b.channels() {
        return Err(Error::Config("metric inputs differ in channel count".into()));
    }
    let c = a.channels();
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for k in 0..c {
            let d = a.data()[i * c + k] as f64 - b.data()[i * c + k] as f64;
            sum += d * d;
        }
        n += c;
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let mse = sum / n as f64;
    let peak = 255.0 * 255.0;
    if mse < peak * 10f64.powf(-PSNR_CAP / 10.0) {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak / mse).log10()).min(PSNR_CAP))
}

/// Square (Chebyshev) erosion; pixels within `r` of the border are cleared.
pub fn erode(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let sat = integral(mask, w, h);
    let full = ((2 * r + 1) * (2 * r + 1)) as u32;
    let mut out = vec![false; w * h];
    for y in r..h.saturating_sub(r) {
        for x in r..w.saturating_sub(r) {
            out[y * w + x] = box_count(&sat, w, x, y, r) == full;
        }
    }
    out
}

/// Intersection of the two masks, eroded by [`OVERLAP_EROSION`].
pub fn overlap_mask(a: &ImageBuffer, b: &ImageBuffer) -> Vec<bool> {
    let both: Vec<bool> = a.mask().iter().zip(b.mask()).map(|(x, y)| *x && *y).collect();
    erode(&both, a.width(), a.height(), OVERLAP_EROSION)
}

/// A point `y` on the target epipolar line of a matched `x'`, tagged with the
/// match's target point `x` (whose reference epipolar line `y` must map onto).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    pub x: Point2<f64>,
    pub y: Point2<f64>,
}

/// Clips the line `l` to `rect`; returns the segment end points.
pub fn clip_line(l: &Vector3<f64>, rect: &Rect) -> Option<(Point2<f64>, Point2<f64>)> {
    let (a, b, c) = (l.x, l.y, l.z);
    let mut pts: Vec<Point2<f64>> = Vec::with_capacity(4);
    if b.abs() > 1e-15 {
        for x in [rect.x0, rect.x1] {
            let y = -(a * x + c) / b;
            if y >= rect.y0 && y <= rect.y1 {
                pts.push(Point2::new(x, y));
            }
        }
    }
    if a.abs() > 1e-15 {
        for y in [rect.y0, rect.y1] {
            let x = -(b * y + c) / a;
            if x >= rect.x0 && x <= rect.x1 {
                pts.push(Point2::new(x, y));
            }
        }
    }
    let mut best: Option<(Point2<f64>, Point2<f64>)> = None;
    let mut len = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = (pts[i] - pts[j]).norm();
            if d > len {
                len = d;
                best = Some((pts[i], pts[j]));
            }
        }
    }
    best
}

/// Samples three points (25/50/75 %) along the longest run of the target
/// epipolar line of each inlier `x'` that lies in the non-overlap region.
pub fn select_eval_points(
    f: &FundamentalMatrix,
    inliers: &[Correspondence],
    tgt_size: (usize, usize),
    in_overlap: impl Fn(&Point2<f64>) -> bool,
) -> Vec<EvalPoint> {
    const SAMPLES: usize = 200;
    let rect = Rect::of_image(tgt_size.0, tgt_size.1);
    let mut out = Vec::new();
    for c in inliers {
        let line = epipolar_line(f, &HPoint2::from_pixel(&c.dst), EpipolarSide::InTargetFromReference);
        let Some((p0, p1)) = clip_line(&line.coeffs(), &rect) else { continue };
        let at = |k: usize| p0 + (p1 - p0) * (k as f64 / (SAMPLES - 1) as f64);
        let mut best = (0usize, 0usize);
        let mut start = None;
        for k in 0..=SAMPLES {
            let outside = k < SAMPLES && !in_overlap(&at(k));
            match (outside, start) {
                (true, None) => start = Some(k),
                (false, Some(s)) => {
                    if k - s > best.1 - best.0 {
                        best = (s, k);
                    }
                    start = None;
                }
                _ => {}
            }
        }
        if best.1 - best.0 < 4 {
            continue;
        }
        let (a, b) = (at(best.0), at(best.1 - 1));
        for frac in [0.25, 0.5, 0.75] {
            out.push(EvalPoint { x: c.src, y: a + (b - a) * frac });
        }
    }
    out
}

/// Mean and max perpendicular distance from `stitch_map(y)` to the reference
/// epipolar line of `x`.
pub fn projectivity_metric(
    f: &FundamentalMatrix,
    stitch_map: impl Fn(&Point2<f64>) -> Option<Point2<f64>>,
    points: &[EvalPoint],
) -> Result<(f64, f64)> {
    let mut dists = Vec::with_capacity(points.len());
    for p in points {
        let line = epipolar_line(f, &HPoint2::from_pixel(&p.x), EpipolarSide::InReferenceFromTarget);
        if let Some(q) = stitch_map(&p.y) {
            dists.push(line.signed_distance(&q).abs());
        }
    }
    if dists.is_empty() {
        return Err(Error::NoEvalPoints);
    }
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    let max = dists.iter().copied().fold(0.0, f64::max);
    Ok((mean, max))
}
