//! Mirror-symmetry detection from matched scale-space keypoints.
//!
//! Keypoints are difference-of-Gaussian extrema with upright gradient
//! descriptors. A keypoint pairs with another when its descriptor is close to
//! the other's mirrored descriptor. The scale space is built in fixed-point
//! integers with symmetric kernels and decimation, so detection on a flipped
//! frame yields exactly the flipped keypoints and the score is reflection
//! invariant bit for bit.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractional bits of the fixed-point gray levels.
const FRAC_BITS: u32 = 8;
/// Half-width of the descriptor patch in octave pixels.
const PATCH: i64 = 8;
/// Keypoints closer than this to the octave border are dropped.
const MARGIN: usize = PATCH as usize + 2;
const MIN_OCTAVE_SIDE: usize = 2 * MARGIN + 8;
const CELLS: usize = 4;
const FEATURES: usize = 8;
const DESC_LEN: usize = CELLS * CELLS * FEATURES;
/// Cumulative 5-tap binomial passes for each level; every pass adds unit
/// variance, so levels sit at sigma^2 = 2, 4, 8, 16, 32.
const LEVEL_PASSES: [usize; 5] = [2, 2, 4, 8, 16];
/// Level handed down (decimated) to seed the next octave.
const NEXT_OCTAVE_LEVEL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorAxis {
    /// Top-bottom reflection about a horizontal line.
    Horizontal,
    /// Left-right reflection about a vertical line.
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymmetryConfig {
    /// Number of strongest keypoints kept (ties at the cut are all kept).
    pub k: usize,
    pub match_ratio: f64,
    pub axes: Vec<MirrorAxis>,
    /// Fewest consistent pairs that count as a detected symmetry.
    pub min_pairs: usize,
    /// Minimum |DoG| response in gray levels.
    pub contrast_threshold: f64,
    /// Principal-curvature ratio above which edge-like extrema are rejected.
    pub edge_ratio: f64,
    /// Tolerance, as a fraction of the frame side, on the reflected position
    /// and on agreement between pair axes.
    pub position_tolerance: f64,
}

impl Default for SymmetryConfig {
    fn default() -> Self {
        SymmetryConfig {
            k: 200,
            match_ratio: 0.8,
            axes: vec![MirrorAxis::Horizontal, MirrorAxis::Vertical],
            min_pairs: 4,
            contrast_threshold: 2.0,
            edge_ratio: 10.0,
            position_tolerance: 0.03,
        }
    }
}

impl SymmetryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidInput("symmetry k must be at least 2".into()));
        }
        if !(self.match_ratio > 0.0 && self.match_ratio < 1.0) {
            return Err(Error::InvalidInput("match_ratio must be in (0, 1)".into()));
        }
        if self.axes.is_empty() {
            return Err(Error::InvalidInput("at least one symmetry axis is required".into()));
        }
        if self.min_pairs < 1 {
            return Err(Error::InvalidInput("min_pairs must be at least 1".into()));
        }
        if !(self.contrast_threshold >= 0.0) || !(self.edge_ratio > 1.0) {
            return Err(Error::InvalidInput("bad keypoint thresholds".into()));
        }
        if !(self.position_tolerance > 0.0 && self.position_tolerance < 1.0) {
            return Err(Error::InvalidInput("position_tolerance must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryResult {
    /// Fraction of the frame covered by the detected symmetric region.
    pub score: f64,
    pub axis: Option<MirrorAxis>,
    /// Axis position in normalized coordinates (x for vertical, y for horizontal).
    pub axis_position: Option<f64>,
    /// Region as `[x0, y0, x1, y1]` in pixels.
    pub region: Option<[f64; 4]>,
    /// Supporting pairs in pixel coordinates.
    pub pairs: Vec<[(f64, f64); 2]>,
    pub keypoints: usize,
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<i32>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> i32 {
        self.data[y * self.w + x]
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

fn gray_plane(raster: &RgbImage) -> Plane {
    let data = raster
        .pixels()
        .map(|p| {
            let v = 299 * p[0] as i64 + 587 * p[1] as i64 + 114 * p[2] as i64;
            ((v << FRAC_BITS) + 500) / 1000
        })
        .map(|v| v as i32)
        .collect();
    Plane {
        w: raster.width() as usize,
        h: raster.height() as usize,
        data,
    }
}

/// One separable [1 4 6 4 1] / 16 pass. Neighbours are paired before
/// weighting so the result is identical on a reflected plane.
fn binomial_pass(src: &Plane) -> Plane {
    let (w, h) = (src.w, src.h);
    let tap = |c: i32, l1: i32, r1: i32, l2: i32, r2: i32| -> i32 {
        let s = 6 * c as i64 + 4 * (l1 as i64 + r1 as i64) + (l2 as i64 + r2 as i64);
        ((s + 8) >> 4) as i32
    };
    let mut tmp = vec![0i32; w * h];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            let xi = x as isize;
            tmp[y * w + x] = tap(
                row[x],
                row[reflect(xi - 1, w)],
                row[reflect(xi + 1, w)],
                row[reflect(xi - 2, w)],
                row[reflect(xi + 2, w)],
            );
        }
    }
    let mut out = vec![0i32; w * h];
    for y in 0..h {
        let yi = y as isize;
        let (u1, d1) = (reflect(yi - 1, h) * w, reflect(yi + 1, h) * w);
        let (u2, d2) = (reflect(yi - 2, h) * w, reflect(yi + 2, h) * w);
        for x in 0..w {
            out[y * w + x] = tap(tmp[y * w + x], tmp[u1 + x], tmp[d1 + x], tmp[u2 + x], tmp[d2 + x]);
        }
    }
    Plane { w, h, data: out }
}

/// Axis map from octave to base pixel coordinates: `base = scale * i + offset`.
#[derive(Clone, Copy)]
struct AxisMap {
    scale: f64,
    offset: f64,
}

/// Halves one axis: even lengths average pixel pairs, odd lengths keep the
/// even samples. Both commute with reflection.
fn decimate(src: &Plane, maps: (AxisMap, AxisMap)) -> (Plane, (AxisMap, AxisMap)) {
    let half = |n: usize, m: AxisMap| -> (usize, AxisMap) {
        if n % 2 == 0 {
            (n / 2, AxisMap { scale: 2.0 * m.scale, offset: m.offset + 0.5 * m.scale })
        } else {
            ((n + 1) / 2, AxisMap { scale: 2.0 * m.scale, offset: m.offset })
        }
    };
    let (nw, mx) = half(src.w, maps.0);
    let (nh, my) = half(src.h, maps.1);
    let sample = |get: &dyn Fn(usize) -> i32, i: usize, n: usize| -> i32 {
        if n % 2 == 0 {
            ((get(2 * i) as i64 + get(2 * i + 1) as i64 + 1) >> 1) as i32
        } else {
            get(2 * i)
        }
    };
    let mut tmp = vec![0i32; nw * src.h];
    for y in 0..src.h {
        let row = &src.data[y * src.w..(y + 1) * src.w];
        for x in 0..nw {
            tmp[y * nw + x] = sample(&|i| row[i], x, src.w);
        }
    }
    let mut out = vec![0i32; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            out[y * nw + x] = sample(&|i| tmp[i * nw + x], y, src.h);
        }
    }
    (Plane { w: nw, h: nh, data: out }, (mx, my))
}

struct Keypoint {
    /// Base pixel coordinates.
    x: f64,
    y: f64,
    /// Support radius in base pixels.
    radius: f64,
    strength: i64,
    desc: [u8; DESC_LEN],
}

fn describe(level: &Plane, x: usize, y: usize) -> [u8; DESC_LEN] {
    let mut acc = [0i64; DESC_LEN];
    // offsets -8..-1 and 1..8: symmetric about the keypoint
    let offsets: Vec<i64> = (-PATCH..=PATCH).filter(|&d| d != 0).collect();
    for (iy, &dy) in offsets.iter().enumerate() {
        for (ix, &dx) in offsets.iter().enumerate() {
            let px = (x as i64 + dx) as usize;
            let py = (y as i64 + dy) as usize;
            let gx = level.at(px + 1, py) as i64 - level.at(px - 1, py) as i64;
            let gy = level.at(px, py + 1) as i64 - level.at(px, py - 1) as i64;
            let w = (PATCH + 1 - dx.abs()) * (PATCH + 1 - dy.abs());
            let cell = (iy / 4) * CELLS + ix / 4;
            let base = cell * FEATURES;
            let d1 = gx + gy;
            let d2 = gx - gy;
            for (f, v) in [gx, -gx, gy, -gy, d1, -d1, d2, -d2].into_iter().enumerate() {
                if v > 0 {
                    acc[base + f] += w * v;
                }
            }
        }
    }
    quantize(&acc)
}

fn quantize(acc: &[i64; DESC_LEN]) -> [u8; DESC_LEN] {
    let mut out = [0u8; DESC_LEN];
    let norm2: i128 = acc.iter().map(|&v| v as i128 * v as i128).sum();
    if norm2 == 0 {
        return out;
    }
    let clip = (0.2 * (norm2 as f64).sqrt()).floor() as i64;
    let clipped: Vec<i64> = acc.iter().map(|&v| v.min(clip)).collect();
    let norm2: i128 = clipped.iter().map(|&v| v as i128 * v as i128).sum();
    if norm2 == 0 {
        return out;
    }
    let norm = (norm2 as f64).sqrt();
    for (o, &v) in out.iter_mut().zip(&clipped) {
        *o = ((512.0 * v as f64 / norm).floor()).min(255.0) as u8;
    }
    out
}

/// Descriptor permutation induced by reflecting the frame.
fn mirror_permutation(axis: MirrorAxis) -> [usize; DESC_LEN] {
    let feature = match axis {
        // gx flips: d1 <-> -d2
        MirrorAxis::Vertical => [1, 0, 2, 3, 7, 6, 5, 4],
        // gy flips: d1 <-> d2
        MirrorAxis::Horizontal => [0, 1, 3, 2, 6, 7, 4, 5],
    };
    let mut perm = [0usize; DESC_LEN];
    for cy in 0..CELLS {
        for cx in 0..CELLS {
            let (mx, my) = match axis {
                MirrorAxis::Vertical => (CELLS - 1 - cx, cy),
                MirrorAxis::Horizontal => (cx, CELLS - 1 - cy),
            };
            for f in 0..FEATURES {
                perm[(cy * CELLS + cx) * FEATURES + f] = (my * CELLS + mx) * FEATURES + feature[f];
            }
        }
    }
    perm
}

fn detect(raster: &RgbImage, cfg: &SymmetryConfig) -> Vec<Keypoint> {
    let mut base = gray_plane(raster);
    if base.w < MIN_OCTAVE_SIDE || base.h < MIN_OCTAVE_SIDE {
        return Vec::new();
    }
    let threshold = (cfg.contrast_threshold * (1 << FRAC_BITS) as f64).ceil() as i64;
    let r = cfg.edge_ratio;
    let mut maps = (AxisMap { scale: 1.0, offset: 0.0 }, AxisMap { scale: 1.0, offset: 0.0 });
    let mut found = Vec::new();
    loop {
        let mut levels = Vec::with_capacity(LEVEL_PASSES.len());
        let mut current = base;
        for &passes in &LEVEL_PASSES {
            for _ in 0..passes {
                current = binomial_pass(&current);
            }
            levels.push(Plane { w: current.w, h: current.h, data: current.data.clone() });
        }
        let (w, h) = (levels[0].w, levels[0].h);
        let dogs: Vec<Vec<i32>> = (0..levels.len() - 1)
            .map(|k| {
                levels[k + 1]
                    .data
                    .iter()
                    .zip(&levels[k].data)
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect();
        for k in 1..dogs.len() - 1 {
            let d = &dogs[k];
            for y in MARGIN..h - MARGIN {
                for x in MARGIN..w - MARGIN {
                    let v = d[y * w + x];
                    if (v as i64).abs() < threshold {
                        continue;
                    }
                    if !is_extremum(&dogs, k, x, y, w) {
                        continue;
                    }
                    let at = |dx: isize, dy: isize| {
                        d[(y as isize + dy) as usize * w + (x as isize + dx) as usize] as i64
                    };
                    let dxx = (at(1, 0) + at(-1, 0)) - 2 * at(0, 0);
                    let dyy = (at(0, 1) + at(0, -1)) - 2 * at(0, 0);
                    let dxy4 = (at(1, 1) + at(-1, -1)) - (at(1, -1) + at(-1, 1));
                    let tr = (dxx + dyy) as f64;
                    let det16 = (16 * dxx * dyy - dxy4 * dxy4) as f64;
                    if det16 <= 0.0 || 16.0 * tr * tr * r >= (r + 1.0) * (r + 1.0) * det16 {
                        continue;
                    }
                    found.push(Keypoint {
                        x: maps.0.scale * x as f64 + maps.0.offset,
                        y: maps.1.scale * y as f64 + maps.1.offset,
                        radius: (PATCH as f64 + 1.0) * maps.0.scale,
                        strength: (v as i64).abs(),
                        desc: describe(&levels[k], x, y),
                    });
                }
            }
        }
        let seed = levels.swap_remove(NEXT_OCTAVE_LEVEL);
        let (next, next_maps) = decimate(&seed, maps);
        if next.w < MIN_OCTAVE_SIDE || next.h < MIN_OCTAVE_SIDE {
            break;
        }
        base = next;
        maps = next_maps;
    }
    if found.len() > cfg.k {
        let mut strengths: Vec<i64> = found.iter().map(|kp| kp.strength).collect();
        strengths.sort_unstable_by(|a, b| b.cmp(a));
        let cut = strengths[cfg.k - 1];
        found.retain(|kp| kp.strength >= cut);
    }
    found
}

fn is_extremum(dogs: &[Vec<i32>], k: usize, x: usize, y: usize, w: usize) -> bool {
    let v = dogs[k][y * w + x];
    let mut is_max = true;
    let mut is_min = true;
    for layer in &dogs[k - 1..=k + 1] {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                let u = layer[ny * w + nx];
                if std::ptr::eq(layer, &dogs[k]) && nx == x && ny == y {
                    continue;
                }
                if u >= v {
                    is_max = false;
                }
                if u <= v {
                    is_min = false;
                }
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

fn desc_distance(a: &[u8; DESC_LEN], b: &[u8; DESC_LEN], perm: &[usize; DESC_LEN]) -> u64 {
    let mut s = 0u64;
    for i in 0..DESC_LEN {
        let d = a[i] as i64 - b[perm[i]] as i64;
        s += (d * d) as u64;
    }
    s
}

/// Pairs of keypoint indices whose descriptors match under reflection and
/// pass the ratio test.
fn mirror_matches(kps: &[Keypoint], axis: MirrorAxis, ratio: f64) -> Vec<(usize, usize)> {
    let perm = mirror_permutation(axis);
    let mut pairs = Vec::new();
    for (i, p) in kps.iter().enumerate() {
        let mut best = (u64::MAX, usize::MAX);
        let mut second = u64::MAX;
        for (j, q) in kps.iter().enumerate() {
            let d = desc_distance(&p.desc, &q.desc, &perm);
            if d < best.0 {
                second = best.0;
                best = (d, j);
            } else if d < second {
                second = d;
            }
        }
        if best.1 == usize::MAX || second == u64::MAX {
            continue;
        }
        if (best.0 as f64) < ratio * ratio * second as f64 {
            let (a, b) = (i.min(best.1), i.max(best.1));
            pairs.push((a, b));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

struct AxisOutcome {
    area: f64,
    axis_position: f64,
    region: [f64; 4],
    support: Vec<(usize, usize)>,
}

fn best_region(
    kps: &[Keypoint],
    pairs: &[(usize, usize)],
    axis: MirrorAxis,
    w: f64,
    h: f64,
    cfg: &SymmetryConfig,
) -> Option<AxisOutcome> {
    // (along-axis coordinate, across-axis coordinate)
    let coords = |kp: &Keypoint| match axis {
        MirrorAxis::Vertical => (kp.x + 0.5, kp.y + 0.5),
        MirrorAxis::Horizontal => (kp.y + 0.5, kp.x + 0.5),
    };
    let (span_across, span_along) = match axis {
        MirrorAxis::Vertical => (w, h),
        MirrorAxis::Horizontal => (h, w),
    };
    // reflected position must line up along the axis direction
    let consistent: Vec<(usize, usize, f64)> = pairs
        .iter()
        .filter_map(|&(a, b)| {
            let (pa, qa) = coords(&kps[a]);
            let (pb, qb) = coords(&kps[b]);
            ((qa - qb).abs() <= cfg.position_tolerance * span_along)
                .then_some((a, b, 0.5 * (pa + pb)))
        })
        .collect();
    if consistent.len() < cfg.min_pairs {
        return None;
    }
    let tol = cfg.position_tolerance * span_across;
    let mut best: Option<AxisOutcome> = None;
    for &(_, _, candidate) in &consistent {
        let support: Vec<(usize, usize)> = consistent
            .iter()
            .filter(|&&(_, _, m)| (m - candidate).abs() <= tol)
            .map(|&(a, b, _)| (a, b))
            .collect();
        if support.len() < cfg.min_pairs {
            continue;
        }
        let mut region = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &(a, b) in &support {
            for kp in [&kps[a], &kps[b]] {
                let (cx, cy) = (kp.x + 0.5, kp.y + 0.5);
                region[0] = region[0].min((cx - kp.radius).max(0.0));
                region[1] = region[1].min((cy - kp.radius).max(0.0));
                region[2] = region[2].max((cx + kp.radius).min(w));
                region[3] = region[3].max((cy + kp.radius).min(h));
            }
        }
        let area = (region[2] - region[0]) * (region[3] - region[1]) / (w * h);
        if best.as_ref().is_none_or(|b| area > b.area) {
            best = Some(AxisOutcome {
                area,
                axis_position: candidate / span_across,
                region,
                support,
            });
        }
    }
    best
}

/// Full symmetry analysis, including the supporting pairs.
pub fn symmetry_analysis(raster: &RgbImage, cfg: &SymmetryConfig) -> Result<SymmetryResult> {
    cfg.validate()?;
    let kps = detect(raster, cfg);
    let (w, h) = (raster.width() as f64, raster.height() as f64);
    let mut result = SymmetryResult {
        score: 0.0,
        axis: None,
        axis_position: None,
        region: None,
        pairs: Vec::new(),
        keypoints: kps.len(),
    };
    for axis in [MirrorAxis::Horizontal, MirrorAxis::Vertical] {
        if !cfg.axes.contains(&axis) {
            continue;
        }
        let pairs = mirror_matches(&kps, axis, cfg.match_ratio);
        if let Some(out) = best_region(&kps, &pairs, axis, w, h, cfg) {
            if out.area > result.score {
                result.score = out.area.clamp(0.0, 1.0);
                result.axis = Some(axis);
                result.axis_position = Some(out.axis_position);
                result.region = Some(out.region);
                result.pairs = out
                    .support
                    .iter()
                    .map(|&(a, b)| [(kps[a].x, kps[a].y), (kps[b].x, kps[b].y)])
                    .collect();
            }
        }
    }
    Ok(result)
}

/// Fraction of the frame covered by its best mirror-symmetric region.
pub fn symmetry_score(raster: &RgbImage, cfg: &SymmetryConfig) -> Result<f64> {
    Ok(symmetry_analysis(raster, cfg)?.score)
}

/// Writes the frame with the detected region and pairs drawn over it.
pub fn write_symmetry_overlay(raster: &RgbImage, result: &SymmetryResult, path: &Path) -> Result<()> {
    let mut img = raster.clone();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut put = |x: i64, y: i64, c: Rgb<u8>| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    let box_color = Rgb([255, 255, 0]);
    if let Some([x0, y0, x1, y1]) = result.region {
        let (x0, y0, x1, y1) = (x0 as i64, y0 as i64, x1 as i64 - 1, y1 as i64 - 1);
        for x in x0..=x1 {
            put(x, y0, box_color);
            put(x, y1, box_color);
        }
        for y in y0..=y1 {
            put(x0, y, box_color);
            put(x1, y, box_color);
        }
    }
    for pair in &result.pairs {
        let (a, b) = (pair[0], pair[1]);
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as i64).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            put(
                (a.0 + t * (b.0 - a.0)).round() as i64,
                (a.1 + t * (b.1 - a.1)).round() as i64,
                Rgb([0, 255, 255]),
            );
        }
    }
    img.save(path).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured_half(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..250)
            .map(|_| {
                (
                    rng.random_range(0.0..w as f64 / 2.0),
                    rng.random_range(0.0..h as f64),
                    rng.random_range(2.0..8.0),
                    [rng.random_range(-120.0..120.0), rng.random_range(-120.0..120.0), rng.random_range(-120.0..120.0)],
                )
            })
            .collect();
        RgbImage::from_fn(w, h, |x, y| {
            let x = if x < w / 2 { x } else { w - 1 - x };
            let mut c = [110.0, 120.0, 100.0];
            for (bx, by, r, col) in &blobs {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                let g = (-d2 / (2.0 * r * r)).exp();
                for i in 0..3 {
                    c[i] += col[i] * g;
                }
            }
            Rgb(c.map(|v| v.clamp(0.0, 255.0) as u8))
        })
    }

    fn flip(img: &RgbImage) -> RgbImage {
        image::imageops::flip_horizontal(img)
    }

    #[test]
    fn blank_frame_scores_zero() {
        let img = RgbImage::from_pixel(120, 90, Rgb([128, 128, 128]));
        let r = symmetry_analysis(&img, &SymmetryConfig::default()).unwrap();
        assert_eq!(r.keypoints, 0);
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn mirrored_texture_covers_most_of_the_frame() {
        for seed in 0..3 {
            let img = textured_half(240, 180, seed);
            let r = symmetry_analysis(&img, &SymmetryConfig::default()).unwrap();
            assert!(r.score >= 0.8, "seed {seed}: {r:?}");
            assert_eq!(r.axis, Some(MirrorAxis::Vertical));
            assert!((r.axis_position.unwrap() - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn noise_scores_low() {
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let img = RgbImage::from_fn(160, 120, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
            total += symmetry_score(&img, &SymmetryConfig::default()).unwrap();
        }
        assert!(total / 20.0 <= 0.1, "mean {}", total / 20.0);
    }

    #[test]
    fn flip_invariance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for (w, h) in [(160u32, 120u32), (161, 121), (150, 97)] {
            let base = textured_half(w, h, rng.random());
            // break the symmetry partially so scores are not trivially 1
            let img = RgbImage::from_fn(w, h, |x, y| {
                if x < w / 3 && y < h / 2 { Rgb([rng.random(), 50, 90]) } else { *base.get_pixel(x, y) }
            });
            let a = symmetry_analysis(&img, &SymmetryConfig::default()).unwrap();
            let b = symmetry_analysis(&flip(&img), &SymmetryConfig::default()).unwrap();
            assert_eq!(a.keypoints, b.keypoints);
            assert!((a.score - b.score).abs() <= 1e-12, "{} vs {}", a.score, b.score);
        }
    }

    #[test]
    fn keypoints_commute_with_flip() {
        let img = textured_half(150, 100, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = RgbImage::from_fn(150, 100, |x, y| {
            let p = img.get_pixel(x, y).0;
            Rgb(p.map(|c| c.saturating_add(rng.random_range(0..30))))
        });
        let cfg = SymmetryConfig::default();
        let a = detect(&img, &cfg);
        let b = detect(&flip(&img), &cfg);
        let mut pa: Vec<(i64, i64)> = a.iter().map(|k| ((2.0 * k.x) as i64, (2.0 * k.y) as i64)).collect();
        let mut pb: Vec<(i64, i64)> = b
            .iter()
            .map(|k| ((2.0 * (149.0 - k.x)) as i64, (2.0 * k.y) as i64))
            .collect();
        pa.sort_unstable();
        pb.sort_unstable();
        assert!(!pa.is_empty());
        assert_eq!(pa, pb);
    }

    #[test]
    fn mirror_permutation_is_an_involution() {
        for axis in [MirrorAxis::Horizontal, MirrorAxis::Vertical] {
            let p = mirror_permutation(axis);
            for i in 0..DESC_LEN {
                assert_eq!(p[p[i]], i);
            }
        }
    }

    #[test]
    fn decimation_commutes_with_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for w in [9usize, 10] {
            let data: Vec<i32> = (0..w * 3).map(|_| rng.random_range(0..60000)).collect();
            let plane = Plane { w, h: 3, data };
            let flipped = Plane {
                w,
                h: 3,
                data: (0..w * 3).map(|i| plane.data[(i / w) * w + (w - 1 - i % w)]).collect(),
            };
            let id = AxisMap { scale: 1.0, offset: 0.0 };
            let (a, _) = decimate(&binomial_pass(&plane), (id, id));
            let (b, _) = decimate(&binomial_pass(&flipped), (id, id));
            for y in 0..a.h {
                for x in 0..a.w {
                    assert_eq!(a.at(x, y), b.at(a.w - 1 - x, y));
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SymmetryConfig::default();
        c.k = 1;
        assert!(c.validate().is_err());
        let mut c = SymmetryConfig::default();
        c.match_ratio = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn overlay_writes() {
        let dir = tempfile::tempdir().unwrap();
        let img = textured_half(120, 90, 4);
        let r = symmetry_analysis(&img, &SymmetryConfig::default()).unwrap();
        let p = dir.path().join("sym.png");
        write_symmetry_overlay(&img, &r, &p).unwrap();
        assert!(p.exists());
    }
}
