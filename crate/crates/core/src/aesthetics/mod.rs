//! Per-frame photographic scores: composition, symmetry and vibrancy.

mod bins;
mod symmetry;

pub use bins::{ColorBin, ColorBinTable};
pub use symmetry::{
    symmetry_analysis, symmetry_score, write_symmetry_overlay, MirrorAxis, SymmetryConfig,
    SymmetryResult,
};

use serde::{Deserialize, Serialize};

use crate::color::srgb_to_lab;
use crate::error::{Error, Result};
use crate::segmentation::{segment_raster, simplicity_weight, SegmentMap, SegmentationConfig};

/// The four rule-of-thirds intersections, x to the right and y down.
pub const THIRDS_POINTS: [(f64, f64); 4] = [
    (1.0 / 3.0, 1.0 / 3.0),
    (2.0 / 3.0, 1.0 / 3.0),
    (1.0 / 3.0, 2.0 / 3.0),
    (2.0 / 3.0, 2.0 / 3.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThirdsGeometry {
    pub points: [(f64, f64); 4],
    /// Lower clamp on centroid-to-point distance, in normalized units.
    pub d_epsilon: f64,
}

impl Default for ThirdsGeometry {
    fn default() -> Self {
        ThirdsGeometry {
            points: THIRDS_POINTS,
            d_epsilon: 0.05,
        }
    }
}

impl ThirdsGeometry {
    pub fn with_epsilon(d_epsilon: f64) -> Result<Self> {
        if !(d_epsilon > 0.0) || !d_epsilon.is_finite() {
            return Err(Error::InvalidInput("d_epsilon must be positive".into()));
        }
        Ok(ThirdsGeometry {
            d_epsilon,
            ..Default::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionResult {
    /// Simplicity-weighted score at the best point.
    pub score: f64,
    /// Index into the thirds points of the maximizing point.
    pub best_point: usize,
    /// Simplicity-weighted score had each point been chosen.
    pub point_scores: [f64; 4],
    pub simplicity: f64,
    pub segments: usize,
}

/// Sum that does not depend on the order of `terms`.
pub(crate) fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Composition of a segmented frame against a single thirds point.
fn score_at_point(segmap: &SegmentMap, weights: &[f64], point: (f64, f64), d_epsilon: f64) -> f64 {
    let total = (segmap.width * segmap.height) as f64;
    let terms: Vec<f64> = segmap
        .segments
        .iter()
        .zip(weights)
        .map(|(s, &w)| {
            let d = ((s.centroid.0 - point.0).powi(2) + (s.centroid.1 - point.1).powi(2)).sqrt();
            (s.size as f64 / total) * w / d.max(d_epsilon)
        })
        .collect();
    canonical_sum(terms) / segmap.count() as f64
}

/// Composition score: the mean of `s_j * w(c_j) / d_j` over segments, with
/// `s_j` the area fraction and `d_j` the clamped distance to the best thirds
/// point, scaled by the simplicity weight. Ties between points go to the
/// lowest index.
pub fn composition_score(
    segmap: &SegmentMap,
    geom: &ThirdsGeometry,
    table: &ColorBinTable,
    simplicity_plateau: usize,
) -> Result<CompositionResult> {
    if segmap.count() == 0 {
        return Err(Error::InvalidInput("segment map has no segments".into()));
    }
    let simplicity = simplicity_weight(segmap.count(), simplicity_plateau)?;
    let weights: Vec<f64> = segmap
        .segments
        .iter()
        .map(|s| table.color_weight(&s.mean_lab).1)
        .collect();
    let mut point_scores = [0.0; 4];
    for (slot, &p) in point_scores.iter_mut().zip(&geom.points) {
        *slot = simplicity * score_at_point(segmap, &weights, p, geom.d_epsilon);
    }
    let mut best_point = 0;
    for i in 1..4 {
        if point_scores[i] > point_scores[best_point] {
            best_point = i;
        }
    }
    Ok(CompositionResult {
        score: point_scores[best_point],
        best_point,
        point_scores,
        simplicity,
        segments: segmap.count(),
    })
}

/// Vibrancy: `sum_b w_b * size_b / dist_b` over the populated color bins, with
/// `size_b` the pixel fraction and `dist_b` the mean LAB distance of the
/// bin's pixels to its representative, floored at `distance_floor`.
pub fn vibrancy_score(
    raster: &image::RgbImage,
    table: &ColorBinTable,
    distance_floor: f64,
) -> Result<f64> {
    if !(distance_floor > 0.0) {
        return Err(Error::InvalidInput("bin distance floor must be positive".into()));
    }
    let n = raster.width() as usize * raster.height() as usize;
    if n == 0 {
        return Err(Error::InvalidInput("empty raster".into()));
    }
    // Work on the color histogram so the result depends only on pixel counts.
    let mut packed: Vec<u32> = raster
        .pixels()
        .map(|p| (p[0] as u32) << 16 | (p[1] as u32) << 8 | p[2] as u32)
        .collect();
    packed.sort_unstable();
    let mut counts = vec![0usize; table.len()];
    let mut dist_sums = vec![0.0f64; table.len()];
    let mut i = 0;
    while i < packed.len() {
        let c = packed[i];
        let mut j = i + 1;
        while j < packed.len() && packed[j] == c {
            j += 1;
        }
        let run = j - i;
        let lab = srgb_to_lab([(c >> 16) as u8, (c >> 8) as u8, c as u8]);
        let (bin, _) = table.color_weight(&lab);
        counts[bin] += run;
        dist_sums[bin] += run as f64 * lab.distance(&table.bins()[bin].representative_lab);
        i = j;
    }
    let mut total = 0.0;
    for (b, bin) in table.bins().iter().enumerate() {
        if counts[b] == 0 {
            continue;
        }
        let mean_dist = dist_sums[b] / counts[b] as f64;
        total += bin.weight * (counts[b] as f64 / n as f64) / mean_dist.max(distance_floor);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AestheticsConfig {
    pub segmentation: SegmentationConfig,
    pub d_epsilon: f64,
    pub bin_distance_floor: f64,
    pub symmetry: SymmetryConfig,
}

impl Default for AestheticsConfig {
    fn default() -> Self {
        AestheticsConfig {
            segmentation: SegmentationConfig::default(),
            d_epsilon: 0.05,
            bin_distance_floor: 1.0,
            symmetry: SymmetryConfig::default(),
        }
    }
}

impl AestheticsConfig {
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.symmetry.validate()?;
        ThirdsGeometry::with_epsilon(self.d_epsilon)?;
        if !(self.bin_distance_floor > 0.0) {
            return Err(Error::InvalidInput("bin_distance_floor must be positive".into()));
        }
        Ok(())
    }
}

/// The frame-local scores, shared by the video pipeline and still photos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StillScores {
    pub composition: CompositionResult,
    pub symmetry: f64,
    pub vibrancy: f64,
}

pub fn score_still(
    raster: &image::RgbImage,
    cfg: &AestheticsConfig,
    table: &ColorBinTable,
) -> Result<StillScores> {
    let segmap = segment_raster(raster, &cfg.segmentation)?;
    let geom = ThirdsGeometry::with_epsilon(cfg.d_epsilon)?;
    Ok(StillScores {
        composition: composition_score(
            &segmap,
            &geom,
            table,
            cfg.segmentation.simplicity_plateau,
        )?,
        symmetry: symmetry_score(raster, &cfg.symmetry)?,
        vibrancy: vibrancy_score(raster, table, cfg.bin_distance_floor)?,
    })
}

/// All per-frame scores feeding the ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub gamma: f64,
    pub s_comp: f64,
    pub s_sym: f64,
    pub s_vib: f64,
    pub s_head: f64,
    pub s_final: f64,
    pub shot_id: usize,
}

impl FrameScores {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.s_comp, self.s_sym, self.s_vib, self.s_head, self.s_final];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("frame scores must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.s_sym) || !(-1.0..=1.0).contains(&self.s_head) {
            return Err(Error::InvalidInput("symmetry or head score out of range".into()));
        }
        Ok(())
    }
}
