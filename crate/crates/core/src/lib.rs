//! Two-view, parallax-tolerant image stitching.
//!
//! The target image is mapped into the reference frame by the infinite
//! homography `H_inf = K' R K^-1`, then slid along epipolar lines by a
//! thin-plate-spline displacement field fitted to the match residuals.
//! Scenes without usable epipolar geometry (pure rotation, planar scenes)
//! fall back to a global homography plus a plain TPS field.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod edf;
pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod ransac;
pub mod synth;
pub mod warp;

pub use calibration::{RefineConfig, StereoCalibration};
pub use edf::{DisplacementGrid, EdfConfig, EdfModel, Rect};
pub use error::{Error, Result};
pub use geometry::{
    CameraIntrinsics, Correspondence, EpipolarSide, FundamentalMatrix, HPoint2, Line2,
    PlaneParams, RigidMotion,
};
pub use image::ImageBuffer;
pub use metrics::MetricsReport;
pub use pipeline::{stitch, PipelineConfig, StitchMap, StitchResult};
pub use ransac::RansacConfig;
pub use synth::{make_scene_pair, GroundTruth, SceneSpec};
pub use warp::{Canvas, WarpConfig, WarpMesh};
