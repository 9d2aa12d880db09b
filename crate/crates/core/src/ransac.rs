//! Robust estimation: MSAC-scored RANSAC for the fundamental matrix and for
//! the global homography used by the planar fallback.

use nalgebra::{Matrix3, Point2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    collinear, eight_point, homography_dlt, sampson_distance, transfer_error, Correspondence,
    FundamentalMatrix,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier threshold on the Sampson distance, pixels.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { threshold: 1.0, confidence: 0.995, max_iters: 2000, seed: 0 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("ransac threshold/confidence out of range".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("ransac max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FundamentalEstimate {
    pub f: FundamentalMatrix,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl FundamentalEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }

    pub fn inlier_set(&self, corrs: &[Correspondence]) -> Vec<Correspondence> {
        select(corrs, &self.inliers)
    }
}

pub(crate) fn select(corrs: &[Correspondence], mask: &[bool]) -> Vec<Correspondence> {
    corrs.iter().zip(mask).filter(|(_, m)| **m).map(|(c, _)| *c).collect()
}

fn adaptive_iterations(inlier_ratio: f64, sample_size: i32, confidence: f64, cap: usize) -> usize {
    let p = inlier_ratio.powi(sample_size);
    if p <= f64::EPSILON {
        return cap;
    }
    if p >= 1.0 {
        return 1;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p).ln();
    if k.is_finite() {
        (k.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Hypothesize-and-verify loop shared by both models; returns the best model
/// and its MSAC cost.
fn consensus<M>(
    n: usize,
    sample_size: usize,
    cfg: &RansacConfig,
    mut fit: impl FnMut(&[usize]) -> Option<M>,
    residual: impl Fn(&M, usize) -> f64,
) -> Option<(M, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t2 = cfg.threshold * cfg.threshold;
    let mut best: Option<(M, f64, usize)> = None;
    let mut budget = cfg.max_iters;
    let mut iter = 0;
    while iter < budget {
        iter += 1;
        let idx = sample(&mut rng, n, sample_size).into_vec();
        let Some(model) = fit(&idx) else { continue };
        let mut cost = 0.0;
        let mut count = 0;
        for i in 0..n {
            let d = residual(&model, i);
            let d2 = d * d;
            if d2 <= t2 {
                count += 1;
                cost += d2;
            } else {
                cost += t2;
            }
        }
        if best.as_ref().is_none_or(|(_, c, _)| cost < *c) {
            best = Some((model, cost, count));
            budget = adaptive_iterations(
                count as f64 / n as f64,
                sample_size as i32,
                cfg.confidence,
                cfg.max_iters,
            );
        }
    }
    best.map(|(m, _, _)| (m, iter))
}

fn mask_for(corrs: &[Correspondence], f: &FundamentalMatrix, threshold: f64) -> Vec<bool> {
    corrs.iter().map(|c| sampson_distance(f, c) <= threshold).collect()
}

/// Robust fundamental matrix. The returned mask is computed against the
/// returned matrix, which is re-estimated by the eight-point method on the
/// full consensus set.
pub fn estimate_fundamental_ransac(
    corrs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<FundamentalEstimate> {
    cfg.validate()?;
    if corrs.len() < 8 {
        return Err(Error::InsufficientMatches { found: corrs.len(), required: 8 });
    }
    let (seed_f, iterations) = consensus(
        corrs.len(),
        8,
        cfg,
        |idx| {
            let s: Vec<_> = idx.iter().map(|&i| corrs[i]).collect();
            eight_point(&s).ok()
        },
        |f, i| sampson_distance(f, &corrs[i]),
    )
    .ok_or_else(|| Error::DegenerateGeometry("no valid eight-point hypothesis".into()))?;

    let mut f = seed_f;
    let mut mask = mask_for(corrs, &f, cfg.threshold);
    for _ in 0..10 {
        let inl = select(corrs, &mask);
        if inl.len() < 8 {
            break;
        }
        let refit = eight_point(&inl)?;
        let next = mask_for(corrs, &refit, cfg.threshold);
        let changed = next != mask;
        f = refit;
        mask = next;
        if !changed {
            break;
        }
    }
    let count = mask.iter().filter(|b| **b).count();
    if count < 8 {
        return Err(Error::InsufficientMatches { found: count, required: 8 });
    }

    let inl = select(corrs, &mask);
    if let Ok(h) = homography_dlt(&inl) {
        let consistent = inl.iter().filter(|c| transfer_error(&h, c) < cfg.threshold).count();
        if consistent as f64 >= 0.95 * inl.len() as f64 {
            return Err(Error::DegenerateGeometry(format!(
                "{consistent} of {} inliers are explained by one homography",
                inl.len()
            )));
        }
    }
    log::debug!("fundamental RANSAC: {count}/{} inliers after {iterations} iterations", corrs.len());
    Ok(FundamentalEstimate { f, inliers: mask, iterations })
}

#[derive(Clone, Debug)]
pub struct HomographyEstimate {
    pub h: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

/// Robust global homography scored on one-sided transfer error.
pub fn estimate_homography_ransac(
    corrs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<HomographyEstimate> {
    cfg.validate()?;
    if corrs.len() < 4 {
        return Err(Error::InsufficientMatches { found: corrs.len(), required: 4 });
    }
    let (seed_h, _) = consensus(
        corrs.len(),
        4,
        cfg,
        |idx| {
            let s: Vec<_> = idx.iter().map(|&i| corrs[i]).collect();
            // a minimal sample must not contain three collinear points
            for skip in 0..4 {
                let tri = |f: fn(&Correspondence) -> Point2<f64>| {
                    s.iter().enumerate().filter(|(k, _)| *k != skip).map(|(_, c)| f(c)).collect::<Vec<_>>()
                };
                if collinear(&tri(|c| c.src)) || collinear(&tri(|c| c.dst)) {
                    return None;
                }
            }
            homography_dlt(&s).ok()
        },
        |h, i| transfer_error(h, &corrs[i]),
    )
    .ok_or_else(|| Error::DegenerateGeometry("no valid homography hypothesis".into()))?;
    let mut h = seed_h;
    let mut mask: Vec<bool> = corrs.iter().map(|c| transfer_error(&h, c) <= cfg.threshold).collect();
    for _ in 0..10 {
        let inl = select(corrs, &mask);
        if inl.len() < 4 {
            break;
        }
        let refit = homography_dlt(&inl)?;
        let next: Vec<bool> =
            corrs.iter().map(|c| transfer_error(&refit, c) <= cfg.threshold).collect();
        let changed = next != mask;
        h = refit;
        mask = next;
        if !changed {
            break;
        }
    }
    let count = mask.iter().filter(|b| **b).count();
    if count < 4 {
        return Err(Error::InsufficientMatches { found: count, required: 4 });
    }
    Ok(HomographyEstimate { h, inliers: mask })
}
