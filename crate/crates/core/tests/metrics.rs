mod common;

use common::*;
use epistitch::geometry::transfer;
use epistitch::metrics::*;
use epistitch::synth::{Scene, View};
use epistitch::*;
use nalgebra::Point2;

fn scene_image() -> ImageBuffer {
    Scene::new(SceneSpec { width: 96, height: 72, ..example_spec() }).unwrap().render(View::Target)
}

/// Independent uniform noise: high variance inside every window.
fn noise_image(seed: u64) -> ImageBuffer {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..64 * 48).map(|_| rng.random::<u8>()).collect();
    ImageBuffer::from_raw(64, 48, 1, data).unwrap()
}

fn full(img: &ImageBuffer) -> Vec<bool> {
    vec![true; img.width() * img.height()]
}

/// Direct 2-D Gaussian-window SSIM, written without the separable filter.
#[allow(clippy::needless_range_loop)]
fn naive_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (w, h) = (a.width(), a.height());
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut g = [[0.0; 11]; 11];
    let mut s = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (mut total, mut n) = (0.0, 0);
    for y in 5..h - 5 {
        for x in 5..w - 5 {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i][j] / s;
                    let (p, q) = (a.luma(x + j - 5, y + i - 5), b.luma(x + j - 5, y + i - 5));
                    ma += wt * p;
                    mb += wt * q;
                    aa += wt * p * p;
                    bb += wt * q * q;
                    ab += wt * p * q;
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    total / n as f64
}

fn map(img: &ImageBuffer, f: impl Fn(u8) -> u8) -> ImageBuffer {
    let mut out = img.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

#[test]
fn ssim_of_identical_images_is_one() {
    let a = scene_image();
    assert!((ssim(&a, &a, &full(&a)).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_of_constant_images() {
    let a = ImageBuffer::filled(40, 40, 1, 100);
    let b = ImageBuffer::filled(40, 40, 1, 110);
    let s = ssim(&a, &b, &full(&a)).unwrap();
    assert!((s - 0.995476).abs() < 1e-6, "{s}");
}

#[test]
fn ssim_matches_naive_and_flags_negative() {
    let a = noise_image(1);
    let neg = map(&a, |v| 255 - v);
    let s = ssim(&a, &neg, &full(&a)).unwrap();
    assert!(s < 0.2, "{s}");
    assert!((s - naive_ssim(&a, &neg)).abs() < 1e-9);
    let shifted = map(&a, |v| v.saturating_add(3));
    let s2 = ssim(&a, &shifted, &full(&a)).unwrap();
    assert!((s2 - naive_ssim(&a, &shifted)).abs() < 1e-9);
}

#[test]
fn ssim_is_symmetric() {
    let a = scene_image();
    let b = map(&a, |v| v / 2 + 40);
    let m = full(&a);
    assert_eq!(ssim(&a, &b, &m).unwrap(), ssim(&b, &a, &m).unwrap());
}

/// Holds for nearly aligned pairs (the use case). For pairs with very
/// different means the C1 term makes the luminance factor shift-dependent.
#[test]
fn common_offset_barely_moves_ssim() {
    let a = scene_image();
    let mut b = a.clone();
    for (i, v) in b.data_mut().iter_mut().enumerate() {
        *v = if (i / 3 + i / (3 * 96)) % 2 == 0 { v.saturating_add(3) } else { v.saturating_sub(3) };
    }
    let m = full(&a);
    let base = ssim(&a, &b, &m).unwrap();
    for k in 1..=10u8 {
        let (a2, b2) = (map(&a, |v| v.saturating_add(k)), map(&b, |v| v + k));
        // the rendered texture never saturates, so the offset is exact
        assert!(a.data().iter().all(|v| *v <= 245));
        let s = ssim(&a2, &b2, &m).unwrap();
        assert!((s - base).abs() < 1e-3, "{k}: {s} vs {base}");
    }
}

#[test]
fn psnr_oracles() {
    let a = ImageBuffer::filled(20, 20, 3, 100);
    let m = full(&a);
    let b = ImageBuffer::filled(20, 20, 3, 101);
    assert!((psnr(&a, &b, &m).unwrap() - 48.1308).abs() < 1e-4);
    let (z, o) = (ImageBuffer::filled(20, 20, 1, 0), ImageBuffer::filled(20, 20, 1, 255));
    assert!(psnr(&z, &o, &full(&z)).unwrap().abs() < 1e-12);
    assert_eq!(psnr(&a, &a, &m).unwrap(), PSNR_CAP);
}

#[test]
fn empty_overlap_is_an_error() {
    let a = scene_image();
    let none = vec![false; a.width() * a.height()];
    assert!(matches!(ssim(&a, &a, &none), Err(Error::EmptyOverlap)));
    assert!(matches!(psnr(&a, &a, &none), Err(Error::EmptyOverlap)));
    // a 10x10 true patch has no complete 11x11 window
    let mut patch = none.clone();
    for y in 0..10 {
        for x in 0..10 {
            patch[y * a.width() + x] = true;
        }
    }
    assert!(matches!(ssim(&a, &a, &patch), Err(Error::EmptyOverlap)));
}

#[test]
fn overlap_mask_is_eroded_intersection() {
    let (w, h) = (40, 30);
    let mut a = ImageBuffer::new(w, h, 1);
    let mut b = ImageBuffer::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            if x < 30 {
                a.set_pixel(x, y, &[1]);
            }
            if x >= 10 {
                b.set_pixel(x, y, &[1]);
            }
        }
    }
    let m = overlap_mask(&a, &b);
    // intersection is columns 10..30; erosion by 5 leaves 15..25, rows 5..25
    assert_eq!(m.iter().filter(|v| **v).count(), 10 * 20);
    assert!(m[10 * w + 15] && !m[10 * w + 14] && !m[10 * w + 25]);
}

#[test]
fn projectivity_vanishes_for_exact_transfer() {
    let spec = generic_spec(9);
    let gt = truth(&spec);
    let f = gt.f.unwrap();
    let inl = corrs(&spec);
    // treat the right half of the target as overlap
    let pts = select_eval_points(&f, &inl, (spec.width, spec.height), |p| p.x > 320.0);
    assert_eq!(pts.len() % 3, 0);
    assert!(pts.len() >= 150);
    assert!(pts.iter().all(|p| p.y.x <= 320.0 + 2.0));
    let (mean, max) = projectivity_metric(&f, |y| transfer(&gt.h_inf, y), &pts).unwrap();
    assert!(mean < 1e-9 && max < 1e-9, "{mean} {max}");
    // a shifted map is measured in pixels
    let (mean, _) =
        projectivity_metric(&f, |y| transfer(&gt.h_inf, y).map(|q| q + nalgebra::Vector2::new(0.0, 3.0)), &pts)
            .unwrap();
    assert!(mean > 0.5 && mean <= 3.0 + 1e-9, "{mean}");
}

#[test]
fn no_eval_points_is_an_error() {
    let spec = generic_spec(9);
    let f = truth(&spec).f.unwrap();
    let inl = corrs(&spec);
    let pts = select_eval_points(&f, &inl, (spec.width, spec.height), |_| true);
    assert!(pts.is_empty());
    assert!(matches!(projectivity_metric(&f, |y| Some(*y), &pts), Err(Error::NoEvalPoints)));
    let one = [EvalPoint { x: Point2::new(1.0, 1.0), y: Point2::new(2.0, 2.0) }];
    assert!(matches!(projectivity_metric(&f, |_| None, &one), Err(Error::NoEvalPoints)));
}
