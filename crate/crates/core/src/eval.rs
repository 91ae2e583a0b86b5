//! Crop-improvement experiment: do human crops of a photo raise its scores?

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aesthetics::{score_still, AestheticsConfig, ColorBinTable};
use crate::error::{Error, Result};
use crate::ingest::to_analysis_resolution;
use crate::ranking::combine;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropCase {
    pub case_id: String,
    pub dataset_id: String,
    pub original: PathBuf,
    pub crops: Vec<PathBuf>,
}

/// Reads a dataset laid out as one directory per case holding
/// `original.<ext>` and `crop_01.<ext>`, `crop_02.<ext>`, ...
/// Cases come back sorted by directory name.
pub fn load_dataset(dir: &Path) -> Result<Vec<CropCase>> {
    let dataset_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut case_dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    case_dirs.sort();
    let mut cases = Vec::new();
    for case_dir in case_dirs {
        let mut original = None;
        let mut crops = Vec::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&case_dir)
            .map_err(|e| Error::io(&case_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            let ext_ok = p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else { continue };
            if !ext_ok {
                continue;
            }
            if stem == "original" {
                original = Some(p.clone());
            } else if let Some(n) = stem.strip_prefix("crop_") {
                if n.chars().all(|c| c.is_ascii_digit()) && !n.is_empty() {
                    crops.push(p.clone());
                }
            }
        }
        let case_id = case_dir.file_name().unwrap().to_string_lossy().into_owned();
        let Some(original) = original else {
            log::warn!("case {case_id}: no original image, skipped");
            continue;
        };
        if crops.is_empty() {
            log::warn!("case {case_id}: no crops, skipped");
            continue;
        }
        cases.push(CropCase { case_id, dataset_id: dataset_id.clone(), original, crops });
    }
    if cases.is_empty() {
        return Err(Error::EmptyInput(format!("no crop cases under {}", dir.display())));
    }
    Ok(cases)
}

/// Component scores of one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub comp: f64,
    pub sym: f64,
    pub vib: f64,
}

impl ComponentScores {
    pub fn final_score(&self, lambda1: f64, lambda2: f64) -> f64 {
        combine(self.vib, self.comp, self.sym, lambda1, lambda2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub case_id: String,
    pub original: ComponentScores,
    pub crops: Vec<ComponentScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCases {
    pub scored: Vec<CaseScores>,
    /// Cases that could not be scored, with the reason.
    pub excluded: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricCounts {
    pub comp: usize,
    pub sym: usize,
    pub vib: usize,
    #[serde(rename = "final")]
    pub final_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub lambda1: f64,
    pub lambda2: f64,
    /// All cases, including excluded ones.
    pub total: usize,
    pub evaluated: usize,
    pub excluded: usize,
    pub improved: MetricCounts,
    /// Percentages of evaluated cases improved, per metric.
    pub comp_pct: f64,
    pub sym_pct: f64,
    pub vib_pct: f64,
    pub final_pct: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_cases: Vec<String>,
}

fn score_image(path: &Path, cfg: &AestheticsConfig, table: &ColorBinTable, max_side: u32) -> Result<ComponentScores> {
    let img = image::open(path)
        .map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?
        .to_rgb8();
    let img = to_analysis_resolution(img, max_side);
    let s = score_still(&img, cfg, table)?;
    Ok(ComponentScores { comp: s.composition.score, sym: s.symmetry, vib: s.vibrancy })
}

/// Scores originals and crops once; cases with any unreadable image are excluded.
pub fn score_cases(
    cases: &[CropCase],
    cfg: &AestheticsConfig,
    table: &ColorBinTable,
    max_side: u32,
) -> Result<ScoredCases> {
    cfg.validate()?;
    let results: Vec<std::result::Result<CaseScores, (String, String)>> = cases
        .par_iter()
        .map(|case| {
            let fail = |e: Error| (case.case_id.clone(), e.to_string());
            let original = score_image(&case.original, cfg, table, max_side).map_err(fail)?;
            let crops = case
                .crops
                .iter()
                .map(|c| score_image(c, cfg, table, max_side))
                .collect::<Result<Vec<_>>>()
                .map_err(fail)?;
            Ok(CaseScores { case_id: case.case_id.clone(), original, crops })
        })
        .collect();
    let mut out = ScoredCases { scored: Vec::new(), excluded: Vec::new() };
    for r in results {
        match r {
            Ok(c) => out.scored.push(c),
            Err((id, why)) => {
                log::warn!("case {id} excluded: {why}");
                out.excluded.push((id, why));
            }
        }
    }
    Ok(out)
}

/// Strict majority of crops above the original.
fn majority_higher(original: f64, crops: impl Iterator<Item = f64>) -> bool {
    let (mut higher, mut n) = (0usize, 0usize);
    for c in crops {
        n += 1;
        if c > original {
            higher += 1;
        }
    }
    2 * higher > n
}

fn pct(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// Aggregates already-scored cases for one lambda setting.
pub fn improvement_from_scores(scored: &ScoredCases, lambda1: f64, lambda2: f64) -> ImprovementReport {
    let mut improved = MetricCounts::default();
    for case in &scored.scored {
        let o = &case.original;
        let cs = &case.crops;
        improved.comp += majority_higher(o.comp, cs.iter().map(|c| c.comp)) as usize;
        improved.sym += majority_higher(o.sym, cs.iter().map(|c| c.sym)) as usize;
        improved.vib += majority_higher(o.vib, cs.iter().map(|c| c.vib)) as usize;
        improved.final_ += majority_higher(
            o.final_score(lambda1, lambda2),
            cs.iter().map(|c| c.final_score(lambda1, lambda2)),
        ) as usize;
    }
    let evaluated = scored.scored.len();
    ImprovementReport {
        lambda1,
        lambda2,
        total: evaluated + scored.excluded.len(),
        evaluated,
        excluded: scored.excluded.len(),
        improved,
        comp_pct: pct(improved.comp, evaluated),
        sym_pct: pct(improved.sym, evaluated),
        vib_pct: pct(improved.vib, evaluated),
        final_pct: pct(improved.final_, evaluated),
        excluded_cases: scored.excluded.iter().map(|(id, _)| id.clone()).collect(),
    }
}

pub fn crop_improvement(
    cases: &[CropCase],
    cfg: &AestheticsConfig,
    table: &ColorBinTable,
    max_side: u32,
    lambda1: f64,
    lambda2: f64,
) -> Result<ImprovementReport> {
    let scored = score_cases(cases, cfg, table, max_side)?;
    Ok(improvement_from_scores(&scored, lambda1, lambda2))
}

/// `lambda1` over `0, 0.1, ..., 1.0` with `lambda2 = 1 - lambda1`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<ImprovementReport>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lambda1", "lambda2", "final_pct", "comp_pct", "sym_pct", "vib_pct", "evaluated", "excluded"])
            .map_err(|e| Error::parse("sweep csv", e))?;
        for p in &self.points {
            w.write_record([
                p.lambda1.to_string(),
                p.lambda2.to_string(),
                p.final_pct.to_string(),
                p.comp_pct.to_string(),
                p.sym_pct.to_string(),
                p.vib_pct.to_string(),
                p.evaluated.to_string(),
                p.excluded.to_string(),
            ])
            .map_err(|e| Error::parse("sweep csv", e))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::parse("sweep csv", e))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn lambda_sweep_from_scores(scored: &ScoredCases, grid: &[f64]) -> Result<SweepReport> {
    if let Some(bad) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidInput(format!("lambda1 {bad} outside [0, 1]")));
    }
    Ok(SweepReport {
        points: grid.iter().map(|&l1| improvement_from_scores(scored, l1, 1.0 - l1)).collect(),
    })
}

pub fn lambda_sweep(
    cases: &[CropCase],
    cfg: &AestheticsConfig,
    table: &ColorBinTable,
    max_side: u32,
    grid: &[f64],
) -> Result<SweepReport> {
    let scored = score_cases(cases, cfg, table, max_side)?;
    lambda_sweep_from_scores(&scored, grid)
}
