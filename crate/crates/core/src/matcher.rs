//! Best-effort built-in matcher: Harris corners, normalized patch
//! descriptors, mutual nearest neighbours with a ratio test.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Correspondence;
use crate::image::ImageBuffer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub max_corners: usize,
    /// Descriptor patch is `(2r+1)^2` luma samples.
    pub patch_radius: usize,
    pub nms_radius: usize,
    pub harris_k: f64,
    /// Corner response threshold relative to the strongest response.
    pub rel_threshold: f64,
    pub ratio: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            max_corners: 1500,
            patch_radius: 5,
            nms_radius: 4,
            harris_k: 0.04,
            rel_threshold: 0.01,
            ratio: 0.8,
        }
    }
}

pub const MIN_MATCHER_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner {
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

fn harris_response(luma: &[f64], w: usize, h: usize, k: f64) -> Vec<f64> {
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| luma[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    // 5x5 box integration of the structure tensor
    let r = 2usize;
    let mut out = vec![0.0; w * h];
    for y in r + 1..h - r - 1 {
        for x in r + 1..w - r - 1 {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    let i = yy * w + xx;
                    a += ixx[i];
                    b += iyy[i];
                    c += ixy[i];
                }
            }
            out[y * w + x] = a * b - c * c - k * (a + b) * (a + b);
        }
    }
    out
}

/// Strongest local maxima of the Harris response, at least `border` pixels
/// from the image edge.
pub fn detect_corners(img: &ImageBuffer, cfg: &MatcherConfig, border: usize) -> Vec<Corner> {
    let (w, h) = (img.width(), img.height());
    let luma = img.luma_plane();
    let resp = harris_response(&luma, w, h, cfg.harris_k);
    let peak = resp.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Vec::new();
    }
    let thresh = cfg.rel_threshold * peak;
    let r = cfg.nms_radius;
    let b = border.max(r).max(4);
    let mut corners = Vec::new();
    for y in b..h.saturating_sub(b) {
        for x in b..w.saturating_sub(b) {
            let v = resp[y * w + x];
            if v <= thresh {
                continue;
            }
            let mut is_max = true;
            'nms: for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    if (xx, yy) == (x, y) {
                        continue;
                    }
                    let u = resp[yy * w + xx];
                    // ties broken toward the earlier raster position
                    if u > v || (u == v && (yy, xx) < (y, x)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                corners.push(Corner { x, y, response: v });
            }
        }
    }
    corners.sort_by(|a, b| b.response.total_cmp(&a.response).then((a.y, a.x).cmp(&(b.y, b.x))));
    corners.truncate(cfg.max_corners);
    corners
}

/// Zero-mean, unit-norm luma patch; `None` for flat patches.
fn describe(luma: &[f64], w: usize, c: &Corner, r: usize) -> Option<Vec<f64>> {
    let mut d = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    for y in c.y - r..=c.y + r {
        for x in c.x - r..=c.x + r {
            d.push(luma[y * w + x]);
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-6 {
        return None;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    Some(d)
}

fn features(img: &ImageBuffer, cfg: &MatcherConfig) -> (Vec<Corner>, Vec<Vec<f64>>) {
    let luma = img.luma_plane();
    let mut corners = Vec::new();
    let mut descs = Vec::new();
    for c in detect_corners(img, cfg, cfg.patch_radius + 1) {
        if let Some(d) = describe(&luma, img.width(), &c, cfg.patch_radius) {
            corners.push(c);
            descs.push(d);
        }
    }
    (corners, descs)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest descriptor and whether it passes the ratio test.
fn nearest(d: &[f64], pool: &[Vec<f64>], ratio: f64) -> Option<(usize, bool)> {
    let (mut best, mut second, mut arg) = (f64::INFINITY, f64::INFINITY, None);
    for (j, q) in pool.iter().enumerate() {
        let v = dist2(d, q);
        if v < best {
            second = best;
            best = v;
            arg = Some(j);
        } else if v < second {
            second = v;
        }
    }
    arg.map(|j| (j, best.sqrt() < ratio * second.sqrt()))
}

/// Correspondences target -> reference from image content alone.
pub fn builtin_match(
    reference: &ImageBuffer,
    target: &ImageBuffer,
    cfg: &MatcherConfig,
) -> Result<Vec<Correspondence>> {
    for img in [reference, target] {
        if img.width() < MIN_MATCHER_SIZE || img.height() < MIN_MATCHER_SIZE {
            return Err(Error::InvalidSize { width: img.width() as i64, height: img.height() as i64 });
        }
    }
    let (ct, dt) = features(target, cfg);
    let (cr, dr) = features(reference, cfg);
    let mut out = Vec::new();
    for (i, d) in dt.iter().enumerate() {
        let Some((j, pass)) = nearest(d, &dr, cfg.ratio) else { continue };
        if !pass {
            continue;
        }
        if nearest(&dr[j], &dt, cfg.ratio).is_some_and(|(back, ok)| ok && back == i) {
            out.push(Correspondence::new(
                Point2::new(ct[i].x as f64, ct[i].y as f64),
                Point2::new(cr[j].x as f64, cr[j].y as f64),
            ));
        }
    }
    if out.len() < 8 {
        return Err(Error::InsufficientMatches { found: out.len(), required: 8 });
    }
    Ok(out)
}
