//! End-to-end stitching: robust `F`, calibration, displacement field, warp
//! and blend, with a global-homography fallback for degenerate geometry.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point2};
use serde::{Deserialize, Serialize};

use crate::calibration::{
    compatibility_residual, initial_intrinsics, refine_calibration, rotation_from_f,
    RefineConfig, StereoCalibration,
};
use crate::edf::{
    build_displacement_grid, compute_residuals, fit_edf, fit_plain_tps, DisplacementGrid,
    EdfConfig, EdfModel, Rect,
};
use crate::error::{Error, Result};
use crate::geometry::{Correspondence, FundamentalMatrix};
use crate::image::ImageBuffer;
use crate::metrics::{
    overlap_mask, projectivity_metric, psnr, select_eval_points, ssim, MetricsReport,
};
use crate::ransac::{estimate_fundamental_ransac, estimate_homography_ransac, select, RansacConfig};
use crate::warp::{
    backward_warp, compute_canvas, linear_blend, orient_homography, place_reference,
    warped_bounds, Canvas, WarpConfig, WarpMesh,
};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ransac: RansacConfig,
    pub refine: RefineConfig,
    pub edf: EdfConfig,
    pub warp: WarpConfig,
    /// Focal length hint in pixels, applied to both views.
    pub focal_hint: Option<f64>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.ransac.validate()?;
        self.refine.validate()?;
        self.edf.validate()?;
        if !(self.warp.canvas_cap >= 1.0) {
            return Err(Error::Config("canvas_cap must be >= 1".into()));
        }
        if let Some(f) = self.focal_hint {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Config("focal hint must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Everything needed to map target pixels onto the canvas.
#[derive(Clone, Debug)]
pub struct StitchMap {
    /// Global homography target -> reference (`H_inf`, or the fallback homography).
    pub homography: Matrix3<f64>,
    pub model: EdfModel,
    pub grid: DisplacementGrid,
    pub canvas: Canvas,
    /// Reference image extent in its own pixel frame.
    pub ref_rect: Rect,
}

impl StitchMap {
    /// Target pixel -> reference-frame position after the full stitch mapping.
    pub fn map_point(&self, x: &Point2<f64>) -> Option<Point2<f64>> {
        let p = self.homography * x.to_homogeneous();
        if p.z.abs() <= 1e-12 {
            return None;
        }
        Some(self.grid.map(&Point2::new(p.x / p.z, p.y / p.z)))
    }

    /// Same as [`map_point`](Self::map_point), in canvas pixel coordinates.
    pub fn map_to_canvas(&self, x: &Point2<f64>) -> Option<Point2<f64>> {
        self.map_point(x).map(|p| self.canvas.from_reference(&p))
    }
}

#[derive(Clone, Debug)]
pub struct StitchResult {
    pub panorama: ImageBuffer,
    /// Reference placed on the canvas.
    pub reference: ImageBuffer,
    /// Warped target on the canvas.
    pub warped: ImageBuffer,
    pub calibration: Option<StereoCalibration>,
    pub map: StitchMap,
    /// Inlier correspondences used for the field.
    pub inliers: Vec<Correspondence>,
    pub diagnostics: BTreeMap<String, f64>,
    pub fallback: bool,
}

impl StitchResult {
    pub fn ref_mask(&self) -> &[bool] {
        self.reference.mask()
    }

    pub fn tgt_mask(&self) -> &[bool] {
        self.warped.mask()
    }
}

/// Geometry stage: calibrated `H_inf` and inliers, or the reason to fall back.
struct Geometry {
    calibration: StereoCalibration,
    inliers: Vec<Correspondence>,
}

fn estimate_geometry(
    ref_size: (usize, usize),
    tgt_size: (usize, usize),
    corrs: &[Correspondence],
    cfg: &PipelineConfig,
    diag: &mut BTreeMap<String, f64>,
) -> Result<Geometry> {
    let est = estimate_fundamental_ransac(corrs, &cfg.ransac)?;
    let inliers = est.inlier_set(corrs);
    diag.insert("inliers".into(), inliers.len() as f64);
    diag.insert("ransac_iterations".into(), est.iterations as f64);
    let k = initial_intrinsics(tgt_size.0, tgt_size.1, cfg.focal_hint)?;
    let kp = initial_intrinsics(ref_size.0, ref_size.1, cfg.focal_hint)?;
    let motion = rotation_from_f(&est.f, &k, &kp, &inliers)?;
    let init = StereoCalibration::new(k, kp, motion, est.f)?;
    let outcome = refine_calibration(&init, &inliers, &cfg.refine)?;
    diag.insert("objective_initial".into(), outcome.initial_objective);
    diag.insert("objective_final".into(), outcome.final_objective);
    diag.insert("refine_iterations".into(), outcome.iterations as f64);
    diag.insert("refine_converged".into(), outcome.converged as u8 as f64);
    Ok(Geometry { calibration: outcome.calibration, inliers })
}

/// Estimates the calibration from correspondences (no warping).
pub fn estimate_calibration(
    ref_size: (usize, usize),
    tgt_size: (usize, usize),
    corrs: &[Correspondence],
    cfg: &PipelineConfig,
) -> Result<(StereoCalibration, Vec<Correspondence>)> {
    cfg.validate()?;
    let mut diag = BTreeMap::new();
    let g = estimate_geometry(ref_size, tgt_size, corrs, cfg, &mut diag)?;
    Ok((g.calibration, g.inliers))
}

fn wants_fallback(err: &Error) -> bool {
    matches!(
        err,
        Error::DegenerateGeometry(_) | Error::EpipoleAtInfinity | Error::SingularSystem(_)
    )
}

/// Field fitted on top of a known calibration.
fn epipolar_model(
    calibration: &StereoCalibration,
    inliers: &[Correspondence],
    cfg: &EdfConfig,
    diag: &mut BTreeMap<String, f64>,
) -> Result<EdfModel> {
    let residuals = compute_residuals(&calibration.h_inf, inliers);
    diag.insert("points_at_infinity".into(), residuals.at_infinity as f64);
    diag.insert("max_residual_px".into(), residuals.max_norm());
    let (skew, axis) = compatibility_residual(&calibration.h_inf, &calibration.f);
    diag.insert("compat_skew".into(), skew);
    diag.insert("compat_axis_rad".into(), axis);
    fit_edf(&residuals.samples, &calibration.ep, cfg)
}

fn fallback_model(
    corrs: &[Correspondence],
    cfg: &PipelineConfig,
    diag: &mut BTreeMap<String, f64>,
) -> Result<(Matrix3<f64>, EdfModel, Vec<Correspondence>)> {
    let est = estimate_homography_ransac(corrs, &cfg.ransac).map_err(|e| match e {
        Error::InsufficientMatches { .. } | Error::DegenerateGeometry(_) => {
            Error::DegenerateGeometry(format!("homography fallback failed: {e}"))
        }
        other => other,
    })?;
    let inliers = select(corrs, &est.inliers);
    diag.insert("inliers".into(), inliers.len() as f64);
    let residuals = compute_residuals(&est.h, &inliers);
    diag.insert("max_residual_px".into(), residuals.max_norm());
    let model = fit_plain_tps(&residuals.samples, &cfg.edf).unwrap_or_else(|e| {
        log::warn!("fallback field unavailable ({e}); using the homography alone");
        EdfModel::zero(nalgebra::Vector2::x())
    });
    Ok((est.h, model, inliers))
}

/// Full pipeline. `reference` defines the panorama frame; `target` is warped.
pub fn stitch(
    reference: &ImageBuffer,
    target: &ImageBuffer,
    corrs: &[Correspondence],
    cfg: &PipelineConfig,
) -> Result<StitchResult> {
    cfg.validate()?;
    if corrs.len() < 8 {
        return Err(Error::InsufficientMatches { found: corrs.len(), required: 8 });
    }
    let ref_size = (reference.width(), reference.height());
    let tgt_size = (target.width(), target.height());
    let mut diag = BTreeMap::new();

    let epipolar = estimate_geometry(ref_size, tgt_size, corrs, cfg, &mut diag).and_then(|g| {
        let model = epipolar_model(&g.calibration, &g.inliers, &cfg.edf, &mut diag)?;
        Ok((g, model))
    });
    let (h, model, inliers, calibration) = match epipolar {
        Ok((g, model)) => (g.calibration.h_inf, model, g.inliers, Some(g.calibration)),
        Err(e) if wants_fallback(&e) => {
            log::warn!("epipolar path unavailable ({e}); using the homography fallback");
            diag.clear();
            let (h, model, inliers) = fallback_model(corrs, cfg, &mut diag)?;
            (h, model, inliers, None)
        }
        Err(e) => return Err(e),
    };
    compose(reference, target, h, model, inliers, calibration, cfg, diag)
}

/// Warp and blend with a fixed calibration (the field is refitted to the
/// correspondences that are inliers to its `F`).
pub fn stitch_with_calibration(
    reference: &ImageBuffer,
    target: &ImageBuffer,
    corrs: &[Correspondence],
    calibration: &StereoCalibration,
    cfg: &PipelineConfig,
) -> Result<StitchResult> {
    cfg.validate()?;
    let inliers = calibration_inliers(corrs, calibration, cfg)?;
    let mut diag = BTreeMap::new();
    diag.insert("inliers".into(), inliers.len() as f64);
    let model = epipolar_model(calibration, &inliers, &cfg.edf, &mut diag)?;
    compose(reference, target, calibration.h_inf, model, inliers, Some(calibration.clone()), cfg, diag)
}

fn calibration_inliers(
    corrs: &[Correspondence],
    calibration: &StereoCalibration,
    cfg: &PipelineConfig,
) -> Result<Vec<Correspondence>> {
    let inliers: Vec<Correspondence> = corrs
        .iter()
        .filter(|c| crate::geometry::sampson_distance(&calibration.f, c) <= cfg.ransac.threshold)
        .copied()
        .collect();
    if inliers.len() < 8 {
        return Err(Error::InsufficientMatches { found: inliers.len(), required: 8 });
    }
    Ok(inliers)
}

/// The stitch map [`stitch_with_calibration`] would use, from image sizes alone.
pub fn map_with_calibration(
    ref_size: (usize, usize),
    tgt_size: (usize, usize),
    corrs: &[Correspondence],
    calibration: &StereoCalibration,
    cfg: &PipelineConfig,
) -> Result<(StitchMap, Vec<Correspondence>)> {
    cfg.validate()?;
    let inliers = calibration_inliers(corrs, calibration, cfg)?;
    let model = epipolar_model(calibration, &inliers, &cfg.edf, &mut BTreeMap::new())?;
    let map = build_stitch_map(ref_size, tgt_size, calibration.h_inf, model, cfg)?;
    Ok((map, inliers))
}

/// Builds the stitch map (grid and canvas) without touching pixels.
pub fn build_stitch_map(
    ref_size: (usize, usize),
    tgt_size: (usize, usize),
    h: Matrix3<f64>,
    model: EdfModel,
    cfg: &PipelineConfig,
) -> Result<StitchMap> {
    let h = orient_homography(&h, tgt_size.0, tgt_size.1);
    let ref_rect = Rect::of_image(ref_size.0, ref_size.1);
    let bbox = warped_bounds(&h, tgt_size.0, tgt_size.1)
        .ok_or_else(|| Error::DegenerateGeometry("target maps entirely behind the reference".into()))?;
    let limit = cfg.warp.canvas_cap * (ref_size.0 * ref_size.1) as f64;
    if (bbox.x1 - bbox.x0 + 1.0) * (bbox.y1 - bbox.y0 + 1.0) > limit {
        let clamp = |v: f64| v.min(usize::MAX as f64) as usize;
        return Err(Error::ExcessiveCanvas {
            width: clamp(bbox.x1 - bbox.x0 + 1.0),
            height: clamp(bbox.y1 - bbox.y0 + 1.0),
            cap: cfg.warp.canvas_cap,
        });
    }
    let grid = build_displacement_grid(&model, &bbox, &ref_rect, &cfg.edf)?;
    let canvas = compute_canvas(ref_size, tgt_size, &h, &grid, cfg.warp.canvas_cap)?;
    Ok(StitchMap { homography: h, model, grid, canvas, ref_rect })
}

#[allow(clippy::too_many_arguments)]
fn compose(
    reference: &ImageBuffer,
    target: &ImageBuffer,
    h: Matrix3<f64>,
    model: EdfModel,
    inliers: Vec<Correspondence>,
    calibration: Option<StereoCalibration>,
    cfg: &PipelineConfig,
    mut diagnostics: BTreeMap<String, f64>,
) -> Result<StitchResult> {
    if reference.channels() != target.channels() {
        return Err(Error::Config("reference and target differ in channel count".into()));
    }
    diagnostics.insert("control_misfit_px".into(), model.control_misfit());
    let map = build_stitch_map(
        (reference.width(), reference.height()),
        (target.width(), target.height()),
        h,
        model,
        cfg,
    )?;
    let mesh = WarpMesh::from_grid(&map.grid);
    let warp = backward_warp(target, &mesh, &map.homography, &map.canvas)?;
    let placed = place_reference(reference, &map.canvas);
    let blend = linear_blend(&placed, &warp.image)?;
    diagnostics.insert("invalid_quads".into(), warp.invalid_quads as f64);
    diagnostics.insert("outside_source_px".into(), warp.outside_source as f64);
    diagnostics.insert("max_inversion_error_px".into(), warp.max_inversion_error);
    diagnostics.insert("empty_overlap".into(), blend.empty_overlap as u8 as f64);
    diagnostics.insert("canvas_width".into(), map.canvas.width as f64);
    diagnostics.insert("canvas_height".into(), map.canvas.height as f64);
    let fallback = calibration.is_none();
    diagnostics.insert("fallback".into(), fallback as u8 as f64);
    Ok(StitchResult {
        panorama: blend.image,
        reference: placed,
        warped: warp.image,
        calibration,
        map,
        inliers,
        diagnostics,
        fallback,
    })
}

/// Overlap SSIM/PSNR between the placed reference and the warped target,
/// plus the projectivity metric when epipolar geometry is known.
pub fn evaluate(result: &StitchResult, tgt_size: (usize, usize)) -> Result<MetricsReport> {
    let mask = overlap_mask(&result.reference, &result.warped);
    let overlap_area_px = mask.iter().filter(|b| **b).count();
    let s = ssim(&result.reference, &result.warped, &mask)?;
    let p = psnr(&result.reference, &result.warped, &mask)?;
    let mut report = MetricsReport {
        ssim: s,
        psnr: p,
        projectivity_mean_px: None,
        projectivity_max_px: None,
        n_eval_points: 0,
        overlap_area_px,
    };
    if let Some(calib) = &result.calibration {
        let (mean, max, n) = projectivity(&calib.f, &result.map, &result.inliers, tgt_size)?;
        report.projectivity_mean_px = Some(mean);
        report.projectivity_max_px = Some(max);
        report.n_eval_points = n;
    }
    Ok(report)
}

/// Projectivity metric on the non-overlap part of the target (target points
/// whose mapped position falls outside the reference rectangle).
pub fn projectivity(
    f: &FundamentalMatrix,
    map: &StitchMap,
    inliers: &[Correspondence],
    tgt_size: (usize, usize),
) -> Result<(f64, f64, usize)> {
    let points = select_eval_points(f, inliers, tgt_size, |y| {
        map.map_point(y).is_some_and(|q| map.ref_rect.contains(&q))
    });
    let (mean, max) = projectivity_metric(f, |y| map.map_point(y), &points)?;
    Ok((mean, max, points.len()))
}
