//! Final score, highlight selection, album export and the uniform baselines.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aesthetics::FrameScores;
use crate::error::{Error, Result};
use crate::geo::GpsPoint;
use crate::ingest::FrameEntry;
use crate::shots::ShotAssignment;
use crate::util::{file_sha256, sha256_hex, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    /// Weight of composition.
    pub lambda1: f64,
    /// Weight of symmetry.
    pub lambda2: f64,
    pub album_size: usize,
    pub per_shot_cap: usize,
    /// A substitute frame must reach `(1 - delta)` of the candidate's final score.
    pub delta: f64,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            lambda1: 0.8,
            lambda2: 0.2,
            album_size: 100,
            per_shot_cap: 1,
            delta: 0.1,
        }
    }
}

impl RankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return Err(Error::InvalidInput("lambda1 and lambda2 must be non-negative".into()));
        }
        if self.album_size < 1 {
            return Err(Error::InvalidInput("album_size must be at least 1".into()));
        }
        if self.per_shot_cap < 1 {
            return Err(Error::InvalidInput("per_shot_cap must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidInput("delta must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `S_vib * (lambda1 * S_comp + lambda2 * S_sym)`.
pub fn final_score(s: &FrameScores, cfg: &RankConfig) -> f64 {
    combine(s.s_vib, s.s_comp, s.s_sym, cfg.lambda1, cfg.lambda2)
}

pub fn combine(vib: f64, comp: f64, sym: f64, lambda1: f64, lambda2: f64) -> f64 {
    vib * (lambda1 * comp + lambda2 * sym)
}

/// Frame order by final score, descending, ties to the lower index.
pub fn rank_order(scores: &[FrameScores]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .s_final
            .total_cmp(&scores[a].s_final)
            .then(a.cmp(&b))
    });
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected frame positions in selection order.
    pub frames: Vec<usize>,
    /// Fewer frames than requested could be selected.
    pub truncated: bool,
}

/// Walks the ranking; each candidate is replaced by the most level frame of
/// its shot among those scoring at least `(1 - delta)` of it, and shots that
/// already hold `per_shot_cap` entries are skipped.
pub fn select_highlights(
    scores: &[FrameScores],
    shots: &ShotAssignment,
    cfg: &RankConfig,
) -> Result<Selection> {
    cfg.validate()?;
    if shots.shot_ids.len() != scores.len() {
        return Err(Error::InvalidInput(format!(
            "{} shot ids for {} scored frames",
            shots.shot_ids.len(),
            scores.len()
        )));
    }
    for s in scores {
        s.validate()?;
    }
    let shot_ids = &shots.shot_ids;
    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &sid) in shot_ids.iter().enumerate() {
        members.entry(sid).or_default().push(i);
    }
    let mut taken: HashSet<usize> = HashSet::new();
    let mut per_shot: HashMap<usize, usize> = HashMap::new();
    let mut frames = Vec::new();
    for c in rank_order(scores) {
        if frames.len() == cfg.album_size {
            break;
        }
        let sid = shot_ids[c];
        if per_shot.get(&sid).copied().unwrap_or(0) >= cfg.per_shot_cap || taken.contains(&c) {
            continue;
        }
        let floor = (1.0 - cfg.delta) * scores[c].s_final;
        let mut best: Option<usize> = None;
        for &j in &members[&sid] {
            if taken.contains(&j) || scores[j].s_final < floor {
                continue;
            }
            // members are in index order, so strict > keeps the lowest index on ties
            if best.is_none_or(|b| scores[j].s_head > scores[b].s_head) {
                best = Some(j);
            }
        }
        let pick = best.unwrap_or(c);
        taken.insert(pick);
        *per_shot.entry(sid).or_default() += 1;
        frames.push(pick);
    }
    let truncated = frames.len() < cfg.album_size;
    if truncated {
        log::warn!(
            "album truncated: {} of {} requested frames available",
            frames.len(),
            cfg.album_size
        );
    }
    Ok(Selection { frames, truncated })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryScores {
    pub gamma: f64,
    pub comp: f64,
    pub sym: f64,
    pub vib: f64,
    pub head: f64,
    #[serde(rename = "final")]
    pub final_: f64,
}

impl From<&FrameScores> for EntryScores {
    fn from(s: &FrameScores) -> Self {
        EntryScores {
            gamma: s.gamma,
            comp: s.s_comp,
            sym: s.s_sym,
            vib: s.s_vib,
            head: s.s_head,
            final_: s.s_final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbumEntry {
    pub rank: usize,
    pub source_id: String,
    pub frame_index: u64,
    pub timestamp: f64,
    pub scores: EntryScores,
    pub shot_id: usize,
    /// Exported file name, relative to the album directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(skip)]
    pub source_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightAlbum {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub corpus_hash: String,
    pub entries: Vec<AlbumEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl HighlightAlbum {
    /// Assembles album entries for `selection` over frames and their scores.
    pub fn from_selection(
        selection: &Selection,
        frames: &[FrameEntry],
        scores: &[FrameScores],
        config: serde_json::Value,
        corpus_hash: String,
        requested: usize,
    ) -> Result<Self> {
        if frames.len() != scores.len() {
            return Err(Error::InvalidInput("frames and scores differ in length".into()));
        }
        let entries = selection
            .frames
            .iter()
            .enumerate()
            .map(|(r, &i)| AlbumEntry {
                rank: r + 1,
                source_id: frames[i].source_id.clone(),
                frame_index: frames[i].index,
                timestamp: frames[i].timestamp,
                scores: EntryScores::from(&scores[i]),
                shot_id: scores[i].shot_id,
                file: None,
                sha256: None,
                source_path: frames[i].path.clone(),
            })
            .collect();
        let mut warnings = Vec::new();
        if selection.truncated {
            warnings.push(format!(
                "album truncated to {} of {} requested entries",
                selection.frames.len(),
                requested
            ));
        }
        Ok(HighlightAlbum {
            config_hash: sha256_hex(&serde_json::to_vec(&config).expect("json value serializes")),
            config,
            corpus_hash,
            entries,
            warnings,
        })
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("album serializes");
        bytes.push(b'\n');
        bytes
    }
}

fn file_name_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Copies the original-resolution frames into `out_dir` as
/// `rank_%03d_<source>_<index>.png` and writes `album.json` next to them.
/// Returns the manifest path.
pub fn export_album(album: &mut HighlightAlbum, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for entry in &mut album.entries {
        let name = format!(
            "rank_{:03}_{}_{}.png",
            entry.rank,
            file_name_component(&entry.source_id),
            entry.frame_index
        );
        let dest = out_dir.join(&name);
        let is_png = entry
            .source_path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let bytes = std::fs::read(&entry.source_path).map_err(|e| Error::io(&entry.source_path, e))?;
            write_atomic(&dest, &bytes)?;
        } else {
            let img = image::open(&entry.source_path).map_err(|e| Error::Decode {
                path: entry.source_path.clone(),
                message: e.to_string(),
            })?;
            let mut buf = std::io::Cursor::new(Vec::new());
            img.write_to(&mut buf, image::ImageFormat::Png)
                .map_err(|e| Error::io(&dest, std::io::Error::other(e)))?;
            write_atomic(&dest, buf.get_ref())?;
        }
        entry.sha256 = Some(file_sha256(&dest)?);
        entry.file = Some(name);
    }
    let manifest = out_dir.join("album.json");
    write_atomic(&manifest, &album.to_json_bytes())?;
    Ok(manifest)
}

fn uniform_positions(x: usize) -> Vec<f64> {
    if x == 1 {
        return vec![0.5];
    }
    (0..x).map(|k| k as f64 / (x - 1) as f64).collect()
}

/// Position of the frame nearest in time to `t`; ties go to the earlier
/// frame, then the lower position.
fn nearest_frame(sorted: &[(f64, usize)], t: f64) -> usize {
    let i = sorted.partition_point(|&(ts, _)| ts < t);
    let mut best: Option<(f64, f64, usize)> = None;
    for j in [i.wrapping_sub(1), i] {
        if let Some(&(ts, pos)) = sorted.get(j) {
            let d = (ts - t).abs();
            let key = (d, ts, pos);
            if best.is_none_or(|b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                best = Some(key);
            }
        }
    }
    // equal timestamps: take the lowest position among them
    let (_, ts, pos) = best.expect("non-empty frame list");
    let first = sorted.partition_point(|&(s, _)| s < ts);
    sorted[first..]
        .iter()
        .take_while(|&&(s, _)| s == ts)
        .map(|&(_, p)| p)
        .min()
        .unwrap_or(pos)
}

fn sorted_times(frames: &[FrameEntry]) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = frames.iter().enumerate().map(|(i, f)| (f.timestamp, i)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

fn dedup_keep_order(picks: Vec<usize>) -> Vec<usize> {
    let mut seen = HashSet::new();
    picks.into_iter().filter(|p| seen.insert(*p)).collect()
}

/// `x` GPS samples spread evenly by index over the track (the middle one
/// when `x == 1`), each mapped to the frame nearest in time. Repeated frames
/// are kept once, so fewer than `x` positions may come back.
pub fn baseline_geo_uniform(track: &[GpsPoint], frames: &[FrameEntry], x: usize) -> Result<Vec<usize>> {
    if track.is_empty() {
        return Err(Error::InvalidInput(
            "the geo baseline needs a GPS track; use the chrono baseline instead".into(),
        ));
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to sample".into()));
    }
    if x == 0 {
        return Err(Error::InvalidInput("x must be at least 1".into()));
    }
    let n = track.len();
    let x = x.min(n);
    let sorted = sorted_times(frames);
    let picks = uniform_positions(x)
        .into_iter()
        .map(|u| {
            let idx = if x == 1 { (n - 1) / 2 } else { (u * (n - 1) as f64).round() as usize };
            nearest_frame(&sorted, track[idx].timestamp)
        })
        .collect();
    Ok(dedup_keep_order(picks))
}

/// `x` frames at evenly spaced times over the concatenated duration of
/// `intervals` (the whole frame span when `None`), snapped to the nearest
/// frame. The single-sample case takes the midpoint.
pub fn baseline_chrono_uniform(
    frames: &[FrameEntry],
    intervals: Option<&[(f64, f64)]>,
    x: usize,
) -> Result<Vec<usize>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("the filtered corpus is empty".into()));
    }
    if x == 0 {
        return Err(Error::InvalidInput("x must be at least 1".into()));
    }
    let sorted = sorted_times(frames);
    let spans: Vec<(f64, f64)> = match intervals {
        Some(iv) if !iv.is_empty() => iv.to_vec(),
        _ => vec![(sorted[0].0, sorted[sorted.len() - 1].0)],
    };
    let total: f64 = spans.iter().map(|(a, b)| b - a).sum();
    let at = |offset: f64| -> f64 {
        let mut rest = offset;
        for &(a, b) in &spans {
            if rest <= b - a {
                return a + rest;
            }
            rest -= b - a;
        }
        spans[spans.len() - 1].1
    };
    let picks = uniform_positions(x)
        .into_iter()
        .map(|u| nearest_frame(&sorted, at(u * total)))
        .collect();
    Ok(dedup_keep_order(picks))
}
