//! `epistitch` command line: stitch, estimate, synth, eval.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use epistitch::io::{
    load_calibration, load_matches, load_png, read_match_file, save_calibration, save_matches,
    save_png, write_json, CalibrationFile,
};
use epistitch::matcher::{builtin_match, MatcherConfig};
use epistitch::pipeline::{estimate_calibration, evaluate, map_with_calibration, projectivity, stitch_with_calibration};
use epistitch::{make_scene_pair, stitch, Correspondence, Error, PipelineConfig, SceneSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INSUFFICIENT: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_CANVAS: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "epistitch", version, about = "Two-view parallax-tolerant stitching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Tuning {
    /// Pipeline configuration JSON (flags below override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Displacement-grid cell size in pixels.
    #[arg(long)]
    cell: Option<usize>,
    /// TPS regularizer.
    #[arg(long)]
    rho: Option<f64>,
    /// Focal length hint in pixels (both views).
    #[arg(long)]
    focal: Option<f64>,
    /// RANSAC seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stitch TGT onto REF and write the panorama.
    Stitch {
        reference: PathBuf,
        target: PathBuf,
        /// Match file; the built-in matcher runs when omitted.
        #[arg(long)]
        matches: Option<PathBuf>,
        #[arg(long, default_value = "panorama.png")]
        out: PathBuf,
        #[arg(long)]
        calib_out: Option<PathBuf>,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Estimate F, K, K', R and H_inf without warping.
    Estimate {
        reference: PathBuf,
        target: PathBuf,
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        calib_out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Render a synthetic pair with its matches and ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a panorama produced with a given calibration.
    Eval {
        #[arg(long)]
        pano: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        matches: PathBuf,
        /// Source images; needed for the overlap SSIM/PSNR.
        #[arg(long, requires = "tgt")]
        r#ref: Option<PathBuf>,
        #[arg(long, requires = "ref")]
        tgt: Option<PathBuf>,
        /// Metrics JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InsufficientMatches { .. } => EXIT_INSUFFICIENT,
        Error::DegenerateGeometry(_)
        | Error::DegeneratePlane(_)
        | Error::EpipoleAtInfinity
        | Error::SingularSystem(_) => EXIT_DEGENERATE,
        Error::Io(_) | Error::Image(_) | Error::Parse(_) | Error::Bounds(_) => EXIT_IO,
        Error::ExcessiveCanvas { .. } | Error::ExcessiveGrid { .. } => EXIT_CANVAS,
        _ => EXIT_OTHER,
    }
}

fn pipeline_config(t: &Tuning) -> epistitch::Result<PipelineConfig> {
    let mut cfg = match &t.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(c) = t.cell {
        cfg.edf.cell_px = c;
    }
    if let Some(r) = t.rho {
        cfg.edf.rho = r;
    }
    if t.focal.is_some() {
        cfg.focal_hint = t.focal;
    }
    if let Some(s) = t.seed {
        cfg.ransac.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn matches_or_builtin(
    path: Option<&Path>,
    reference: &epistitch::ImageBuffer,
    target: &epistitch::ImageBuffer,
) -> epistitch::Result<Vec<Correspondence>> {
    match path {
        Some(p) => load_matches(p),
        None => {
            log::info!("no match file given; running the built-in matcher");
            builtin_match(reference, target, &MatcherConfig::default())
        }
    }
}

fn run(cmd: Command) -> epistitch::Result<()> {
    match cmd {
        Command::Stitch { reference, target, matches, out, calib_out, metrics_out, tuning } => {
            let cfg = pipeline_config(&tuning)?;
            let (r, t) = (load_png(&reference)?, load_png(&target)?);
            let corrs = matches_or_builtin(matches.as_deref(), &r, &t)?;
            let res = stitch(&r, &t, &corrs, &cfg)?;
            for (k, v) in &res.diagnostics {
                log::info!("{k} = {v}");
            }
            save_png(&out, &res.panorama)?;
            if let Some(p) = calib_out {
                match &res.calibration {
                    Some(c) => save_calibration(&p, c)?,
                    None => log::warn!("homography fallback: no calibration to write to {}", p.display()),
                }
            }
            if let Some(p) = metrics_out {
                write_json(&p, &evaluate(&res, (t.width(), t.height()))?)?;
            }
        }
        Command::Estimate { reference, target, matches, calib_out, tuning } => {
            let cfg = pipeline_config(&tuning)?;
            let (r, t) = (load_png(&reference)?, load_png(&target)?);
            let corrs = load_matches(&matches)?;
            let (calib, inliers) =
                estimate_calibration((r.width(), r.height()), (t.width(), t.height()), &corrs, &cfg)?;
            log::info!("{} of {} matches are inliers", inliers.len(), corrs.len());
            save_calibration(&calib_out, &calib)?;
        }
        Command::Synth { spec, out_dir } => {
            let spec: SceneSpec = serde_json::from_str(&fs::read_to_string(&spec)?)?;
            let pair = make_scene_pair(&spec)?;
            fs::create_dir_all(&out_dir)?;
            let size = (spec.width, spec.height);
            save_png(&out_dir.join("ref.png"), &pair.reference)?;
            save_png(&out_dir.join("tgt.png"), &pair.target)?;
            save_matches(&out_dir.join("matches.json"), size, size, &pair.correspondences)?;
            write_json(&out_dir.join("calib.json"), &CalibrationFile::from(&pair.truth))?;
        }
        Command::Eval { pano, calib, matches, r#ref, tgt, out, tuning } => {
            let cfg = pipeline_config(&tuning)?;
            let calib = load_calibration(&calib)?;
            let file = read_match_file(&matches)?;
            let corrs = file.correspondences();
            let tgt_size = (file.size1[0], file.size1[1]);
            let ref_size = (file.size2[0], file.size2[1]);
            let pano = load_png(&pano)?;
            let report = match (r#ref, tgt) {
                (Some(rp), Some(tp)) => {
                    let (r, t) = (load_png(&rp)?, load_png(&tp)?);
                    let res = stitch_with_calibration(&r, &t, &corrs, &calib, &cfg)?;
                    check_canvas(&pano, res.panorama.width(), res.panorama.height())?;
                    serde_json::to_value(evaluate(&res, tgt_size)?)?
                }
                _ => {
                    let (map, inliers) = map_with_calibration(ref_size, tgt_size, &corrs, &calib, &cfg)?;
                    check_canvas(&pano, map.canvas.width, map.canvas.height)?;
                    let (mean, max, n) = projectivity(&calib.f, &map, &inliers, tgt_size)?;
                    serde_json::json!({
                        "projectivity_mean_px": mean,
                        "projectivity_max_px": max,
                        "n_eval_points": n,
                    })
                }
            };
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
    }
    Ok(())
}

fn check_canvas(pano: &epistitch::ImageBuffer, w: usize, h: usize) -> epistitch::Result<()> {
    if (pano.width(), pano.height()) != (w, h) {
        return Err(Error::Config(format!(
            "panorama is {}x{} but the calibration yields a {w}x{h} canvas",
            pano.width(),
            pano.height()
        )));
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_OTHER,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
