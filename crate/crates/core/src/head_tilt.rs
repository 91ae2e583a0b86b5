//! Camera tilt from temporal context.
//!
//! A head-mounted camera is level on average, so the mean of the frames
//! around `i` approximates a level view. The SSIM between frame `i` and that
//! mean is the frame's tilt score: 1 when it matches, lower as it rotates away.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::luma;
use crate::error::{Error, Result};
use crate::util::centered_window;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiltConfig {
    /// Temporal window, odd.
    pub window: usize,
    /// Side of the square SSIM block.
    pub block: usize,
    /// Step between SSIM blocks.
    pub stride: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for TiltConfig {
    fn default() -> Self {
        TiltConfig {
            window: 31,
            block: 8,
            stride: 4,
            c1: (0.01f64 * 255.0).powi(2),
            c2: (0.03f64 * 255.0).powi(2),
        }
    }
}

impl TiltConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "head tilt window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if self.block < 1 || self.stride < 1 {
            return Err(Error::InvalidInput("SSIM block and stride must be positive".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::InvalidInput("SSIM constants must be positive".into()));
        }
        Ok(())
    }
}

/// Per-pixel, per-channel mean, rounded half up.
pub fn average_frame(frames: &[&RgbImage]) -> Result<RgbImage> {
    let first = frames
        .first()
        .ok_or_else(|| Error::EmptyInput("no frames to average".into()))?;
    let (w, h) = first.dimensions();
    if let Some(f) = frames.iter().find(|f| f.dimensions() != (w, h)) {
        return Err(Error::InvalidInput(format!(
            "cannot average {}x{} with {}x{}",
            w,
            h,
            f.width(),
            f.height()
        )));
    }
    let n = frames.len() as u32;
    let mut sums = vec![0u32; (w * h * 3) as usize];
    for f in frames {
        for (s, v) in sums.iter_mut().zip(f.as_raw()) {
            *s += *v as u32;
        }
    }
    // floor(sum / n + 1/2) in integers
    let data: Vec<u8> = sums.iter().map(|&s| ((2 * s + n) / (2 * n)) as u8).collect();
    Ok(RgbImage::from_raw(w, h, data).expect("buffer matches dimensions"))
}

fn luma_plane(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|p| luma(p.0)).collect()
}

/// Mean SSIM over `block x block` luminance windows placed every `stride` pixels.
pub fn ssim(a: &RgbImage, b: &RgbImage, cfg: &TiltConfig) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::InvalidInput(format!(
            "SSIM needs equal sizes, got {:?} and {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < cfg.block || h < cfg.block || cfg.block == 0 || cfg.stride == 0 {
        return Err(Error::InvalidInput(format!(
            "{w}x{h} frame is smaller than one {0}x{0} SSIM block",
            cfg.block
        )));
    }
    Ok(ssim_planes(&luma_plane(a), &luma_plane(b), w, h, cfg))
}

fn block_starts(len: usize, block: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=len - block).step_by(stride).collect();
    // cover the trailing edge too
    if *v.last().unwrap() != len - block {
        v.push(len - block);
    }
    v
}

fn ssim_planes(a: &[f64], b: &[f64], w: usize, h: usize, cfg: &TiltConfig) -> f64 {
    let k = cfg.block;
    let n = (k * k) as f64;
    let xs = block_starts(w, k, cfg.stride);
    let ys = block_starts(h, k, cfg.stride);
    let mut total = 0.0;
    for &y0 in &ys {
        for &x0 in &xs {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y0 + k {
                let row = y * w;
                for x in x0..x0 + k {
                    sa += a[row + x];
                    sb += b[row + x];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in y0..y0 + k {
                let row = y * w;
                for x in x0..x0 + k {
                    let da = a[row + x] - ma;
                    let db = b[row + x] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + cfg.c1) * (2.0 * cov + cfg.c2))
                / ((ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2));
        }
    }
    total / (xs.len() * ys.len()) as f64
}

/// Tilt score of `frames[index]` against the mean of its window, truncated
/// to `[lo, hi)`.
pub fn head_score_in(
    index: usize,
    frames: &[RgbImage],
    lo: usize,
    hi: usize,
    cfg: &TiltConfig,
) -> Result<f64> {
    if index >= frames.len() || !(lo <= index && index < hi && hi <= frames.len()) {
        return Err(Error::InvalidInput(format!("frame {index} outside the sequence")));
    }
    let (start, end) = centered_window(index, cfg.window, lo, hi);
    let window: Vec<&RgbImage> = frames[start..end].iter().collect();
    let mean = average_frame(&window)?;
    ssim(&frames[index], &mean, cfg)
}

/// Tilt score of one frame over the whole sequence.
pub fn head_score(index: usize, frames: &[RgbImage], cfg: &TiltConfig) -> Result<f64> {
    head_score_in(index, frames, 0, frames.len(), cfg)
}

/// Scores every frame in parallel; windows stop at segment starts.
pub fn head_scores(
    frames: &[RgbImage],
    segment_starts: &[usize],
    cfg: &TiltConfig,
) -> Result<Vec<f64>> {
    let bounds = crate::shots::segment_bounds(frames.len(), segment_starts);
    (0..frames.len())
        .into_par_iter()
        .map(|i| head_score_in(i, frames, bounds[i].0, bounds[i].1, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
    }

    /// Direct evaluation of the SSIM formula for one window covering the
    /// whole image, summing in a different order than the implementation.
    fn single_window_oracle(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().rev().sum::<f64>() / n;
        let mb = b.iter().rev().sum::<f64>() / n;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        lum * cs
    }

    #[test]
    fn average_of_identical_frames() {
        let f = noise(16, 12, 1);
        let avg = average_frame(&[&f, &f, &f]).unwrap();
        assert_eq!(avg, f);
    }

    #[test]
    fn average_rounds_half_up() {
        let black = RgbImage::from_pixel(4, 4, image::Rgb([0, 0, 0]));
        let white = RgbImage::from_pixel(4, 4, image::Rgb([255, 255, 255]));
        let avg = average_frame(&[&black, &white]).unwrap();
        assert!(avg.pixels().all(|p| p.0 == [128, 128, 128]));
    }

    #[test]
    fn average_matches_pixel_loop_oracle() {
        let frames: Vec<_> = (0..5).map(|s| noise(9, 7, s)).collect();
        let refs: Vec<_> = frames.iter().collect();
        let avg = average_frame(&refs).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                for c in 0..3 {
                    let sum: f64 = frames.iter().map(|f| f.get_pixel(x, y).0[c] as f64).sum();
                    let expected = (sum / 5.0 + 0.5).floor() as u8;
                    assert_eq!(avg.get_pixel(x, y).0[c], expected);
                }
            }
        }
    }

    #[test]
    fn average_is_permutation_invariant() {
        let frames: Vec<_> = (0..4).map(|s| noise(8, 8, s + 10)).collect();
        let a = average_frame(&[&frames[0], &frames[1], &frames[2], &frames[3]]).unwrap();
        let b = average_frame(&[&frames[3], &frames[1], &frames[0], &frames[2]]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn average_rejects_mismatched_sizes() {
        let a = RgbImage::new(8, 8);
        let b = RgbImage::new(8, 9);
        assert!(matches!(average_frame(&[&a, &b]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ssim_identity() {
        let cfg = TiltConfig::default();
        for seed in 0..5 {
            let f = noise(40, 33, seed);
            assert_eq!(ssim(&f, &f, &cfg).unwrap(), 1.0);
        }
    }

    #[test]
    fn ssim_constant_offset_matches_closed_form() {
        let cfg = TiltConfig::default();
        let a = RgbImage::from_pixel(16, 16, image::Rgb([100, 100, 100]));
        let b = RgbImage::from_pixel(16, 16, image::Rgb([110, 110, 110]));
        let got = ssim(&a, &b, &cfg).unwrap();
        // zero variance: SSIM reduces to the luminance term
        let (ma, mb) = (luma([100; 3]), luma([110; 3]));
        let expected = (2.0 * ma * mb + cfg.c1) / (ma * ma + mb * mb + cfg.c1);
        assert!((got - expected).abs() < 1e-6);
        assert!(got < 1.0);
    }

    #[test]
    fn ssim_inverted_matches_oracle() {
        // one 8x8 block, so the oracle is the plain formula over all pixels
        let cfg = TiltConfig::default();
        let a = noise(8, 8, 3);
        let inv = RgbImage::from_fn(8, 8, |x, y| image::Rgb(a.get_pixel(x, y).0.map(|c| 255 - c)));
        let got = ssim(&a, &inv, &cfg).unwrap();
        let expected = single_window_oracle(&luma_plane(&a), &luma_plane(&inv), cfg.c1, cfg.c2);
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        assert!(got < 0.0);
    }

    #[test]
    fn ssim_blocks_match_oracle_average() {
        // 16x16 with block 8 stride 8 -> four independent blocks
        let cfg = TiltConfig {
            stride: 8,
            ..TiltConfig::default()
        };
        let a = noise(16, 16, 4);
        let b = noise(16, 16, 5);
        let (la, lb) = (luma_plane(&a), luma_plane(&b));
        let mut sum = 0.0;
        for (by, bx) in [(0, 0), (0, 8), (8, 0), (8, 8)] {
            let mut pa = Vec::new();
            let mut pb = Vec::new();
            for y in by..by + 8 {
                for x in bx..bx + 8 {
                    pa.push(la[y * 16 + x]);
                    pb.push(lb[y * 16 + x]);
                }
            }
            sum += single_window_oracle(&pa, &pb, cfg.c1, cfg.c2);
        }
        let got = ssim(&a, &b, &cfg).unwrap();
        assert!((got - sum / 4.0).abs() < 1e-6);
    }

    #[test]
    fn ssim_is_symmetric() {
        let cfg = TiltConfig::default();
        for seed in 0..5 {
            let a = noise(37, 29, seed);
            let b = noise(37, 29, seed + 100);
            let d = ssim(&a, &b, &cfg).unwrap() - ssim(&b, &a, &cfg).unwrap();
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_rejects_tiny_frames() {
        let cfg = TiltConfig::default();
        let a = RgbImage::new(7, 20);
        assert!(ssim(&a, &a, &cfg).is_err());
        assert!(ssim(&RgbImage::new(8, 8), &RgbImage::new(9, 8), &cfg).is_err());
    }

    #[test]
    fn static_scene_scores_one() {
        let f = noise(24, 24, 8);
        let frames = vec![f; 9];
        let cfg = TiltConfig {
            window: 5,
            ..TiltConfig::default()
        };
        for s in head_scores(&frames, &[], &cfg).unwrap() {
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn single_frame_window_scores_one() {
        let frames = vec![noise(16, 16, 1), noise(16, 16, 2), noise(16, 16, 3)];
        let cfg = TiltConfig::default();
        // segment boundaries at every frame leave a window of one
        let scores = head_scores(&frames, &[1, 2], &cfg).unwrap();
        assert_eq!(scores, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TiltConfig { window: 4, ..TiltConfig::default() }.validate().is_err());
        assert!(TiltConfig { window: 1, ..TiltConfig::default() }.validate().is_err());
        assert!(TiltConfig::default().validate().is_ok());
    }
}
