//! File formats: match lists, calibration documents and PNG images.
//!
//! Match files list `[u1, v1, u2, v2]` rows where image 1 is the target
//! (warped) view and image 2 the reference view.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::calibration::StereoCalibration;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Correspondence, FundamentalMatrix, HPoint2, RigidMotion};
use crate::image::ImageBuffer;
use crate::synth::GroundTruth;

pub const MATCH_FILE_VERSION: u32 = 1;
/// Coordinates may lie up to this far outside the declared image extent.
const BOUNDS_SLACK: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchFile {
    pub version: u32,
    /// Target image `[width, height]`.
    pub size1: [usize; 2],
    /// Reference image `[width, height]`.
    pub size2: [usize; 2],
    pub matches: Vec<[f64; 4]>,
}

impl MatchFile {
    pub fn new(tgt_size: (usize, usize), ref_size: (usize, usize), corrs: &[Correspondence]) -> Self {
        Self {
            version: MATCH_FILE_VERSION,
            size1: [tgt_size.0, tgt_size.1],
            size2: [ref_size.0, ref_size.1],
            matches: corrs.iter().map(|c| [c.src.x, c.src.y, c.dst.x, c.dst.y]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MATCH_FILE_VERSION {
            return Err(Error::Parse(format!("unsupported match file version {}", self.version)));
        }
        let inside = |v: f64, extent: usize| v.is_finite() && v >= -BOUNDS_SLACK && v <= extent as f64;
        for (i, m) in self.matches.iter().enumerate() {
            let ok = inside(m[0], self.size1[0])
                && inside(m[1], self.size1[1])
                && inside(m[2], self.size2[0])
                && inside(m[3], self.size2[1]);
            if !ok {
                return Err(Error::Bounds(format!("match {i} = {m:?} lies outside the images")));
            }
        }
        Ok(())
    }

    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.matches.iter().map(|m| Correspondence::from_coords(m[0], m[1], m[2], m[3])).collect()
    }
}

pub fn read_match_file(path: &Path) -> Result<MatchFile> {
    let text = fs::read_to_string(path)?;
    let file: MatchFile = serde_json::from_str(&text)?;
    file.validate()?;
    Ok(file)
}

/// Parsed, validated correspondences (at least eight).
pub fn load_matches(path: &Path) -> Result<Vec<Correspondence>> {
    let corrs = read_match_file(path)?.correspondences();
    if corrs.len() < 8 {
        return Err(Error::InsufficientMatches { found: corrs.len(), required: 8 });
    }
    Ok(corrs)
}

pub fn save_matches(
    path: &Path,
    tgt_size: (usize, usize),
    ref_size: (usize, usize),
    corrs: &[Correspondence],
) -> Result<()> {
    write_json(path, &MatchFile::new(tgt_size, ref_size, corrs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    #[serde(rename = "K")]
    pub k: CameraIntrinsics,
    #[serde(rename = "Kp")]
    pub kp: CameraIntrinsics,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    /// Absent for a zero-baseline ground truth.
    #[serde(rename = "F")]
    pub f: Option<[f64; 9]>,
    pub e: Option<[f64; 3]>,
    pub ep: Option<[f64; 3]>,
    #[serde(rename = "H_inf")]
    pub h_inf: [f64; 9],
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

fn from_row_major(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}

fn vec3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl From<&StereoCalibration> for CalibrationFile {
    fn from(c: &StereoCalibration) -> Self {
        Self {
            k: c.k,
            kp: c.kp,
            r: row_major(&c.motion.rotation),
            t: vec3(&c.motion.translation),
            f: Some(row_major(c.f.matrix())),
            e: Some(vec3(c.e.coords())),
            ep: Some(vec3(c.ep.coords())),
            h_inf: row_major(&c.h_inf),
        }
    }
}

impl From<&GroundTruth> for CalibrationFile {
    fn from(g: &GroundTruth) -> Self {
        Self {
            k: g.k,
            kp: g.kp,
            r: row_major(&g.rotation),
            t: vec3(&g.translation),
            f: g.f.as_ref().map(|f| row_major(f.matrix())),
            e: g.e.as_ref().map(|e| vec3(e.coords())),
            ep: g.ep.as_ref().map(|e| vec3(e.coords())),
            h_inf: row_major(&g.h_inf),
        }
    }
}

impl CalibrationFile {
    /// Rebuilds the calibration; `F`, `e`, `e'` and `H_inf` are taken as stored.
    pub fn to_calibration(&self) -> Result<StereoCalibration> {
        let missing = || Error::Parse("calibration lacks F/e/ep (zero baseline?)".into());
        let f = FundamentalMatrix::from_matrix(&from_row_major(&self.f.ok_or_else(missing)?))?;
        let [e, ep] = [self.e.ok_or_else(missing)?, self.ep.ok_or_else(missing)?]
            .map(|v| HPoint2(Vector3::from(v)));
        let t = Vector3::from(self.t);
        let rotation = from_row_major(&self.r);
        let motion = if t.norm() > 0.0 {
            RigidMotion::new(rotation, t)?
        } else {
            return Err(Error::Parse("calibration translation is zero".into()));
        };
        let h_inf = from_row_major(&self.h_inf);
        if !(h_inf.determinant().abs() > 1e-12) {
            return Err(Error::Parse("H_inf is singular".into()));
        }
        Ok(StereoCalibration { k: self.k, kp: self.kp, motion, f, e, ep, h_inf })
    }
}

pub fn save_calibration(path: &Path, calib: &StereoCalibration) -> Result<()> {
    write_json(path, &CalibrationFile::from(calib))
}

pub fn load_calibration(path: &Path) -> Result<StereoCalibration> {
    let text = fs::read_to_string(path)?;
    let file: CalibrationFile = serde_json::from_str(&text)?;
    file.to_calibration()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// 8-bit grayscale or RGB PNG (other color types are converted to RGB).
pub fn load_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => ImageBuffer::from_raw(w, h, 1, buf.into_raw()),
        other => ImageBuffer::from_raw(w, h, 3, other.into_rgb8().into_raw()),
    }
}

/// Writes the samples; invalid pixels are stored as they are (black for canvases).
pub fn save_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        img.data(),
        img.width() as u32,
        img.height() as u32,
        color,
        image::ImageFormat::Png,
    )?;
    Ok(())
}
