//! End-to-end run: GPS filter, descriptors, shots, aesthetics, head tilt,
//! ranking and export, with per-stage content-hash caching.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aesthetics::{
    composition_score, symmetry_analysis, vibrancy_score, write_symmetry_overlay,
    AestheticsConfig, ColorBinTable, FrameScores, ThirdsGeometry,
};
use crate::descriptor::{read_descriptor_cache, write_descriptor_cache, GistConfig, GistDescriptor, GistExtractor};
use crate::error::{Error, Result};
use crate::geo::{
    aggregate_nodes, importance_intervals, read_track, resolve_threshold, score_nodes, GeoConfig,
    GeoNode, OfflineClient, PoiCache, PoiClient,
};
use crate::head_tilt::{head_score_in, TiltConfig};
use crate::ingest::{decode_frame, filter_entries, list_frames, CorpusManifest, FrameEntry};
use crate::ranking::{export_album, final_score, select_highlights, HighlightAlbum, RankConfig};
use crate::segmentation::segment_raster;
use crate::shots::{assign_shots_with, gamma_scores, ShotAssignment, ShotConfig};
use crate::util::{file_sha256, json_hash, sha256_hex, write_atomic};

/// Frames decoded and scored together; bounds peak memory.
const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugExports {
    /// Write each frame's segment label map as a PNG.
    pub segment_maps: bool,
    /// Write each frame with its symmetry region drawn in.
    pub symmetry_overlays: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Longest side frames are downscaled to before analysis (0 keeps the original).
    pub analysis_max_side: u32,
    pub geo: GeoConfig,
    pub gist: GistConfig,
    pub shots: ShotConfig,
    pub aesthetics: AestheticsConfig,
    /// Color bin table to load instead of the bundled one.
    pub color_bins: Option<PathBuf>,
    pub tilt: TiltConfig,
    pub rank: RankConfig,
    /// Stage cache directory; caching is off when unset.
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub parallelism: usize,
    pub debug: DebugExports,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            analysis_max_side: 480,
            geo: GeoConfig::default(),
            gist: GistConfig::default(),
            shots: ShotConfig::default(),
            aesthetics: AestheticsConfig::default(),
            color_bins: None,
            tilt: TiltConfig::default(),
            rank: RankConfig::default(),
            cache_dir: None,
            output_dir: PathBuf::from("out"),
            parallelism: 0,
            debug: DebugExports::default(),
        }
    }
}

/// Fields that only affect how a run executes, not what it computes.
const RUNTIME_KEYS: [&str; 4] = ["cache_dir", "output_dir", "parallelism", "debug"];

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geo.validate()?;
        self.gist.validate()?;
        self.shots.validate()?;
        self.aesthetics.validate()?;
        self.tilt.validate()?;
        self.rank.validate()?;
        Ok(())
    }

    /// The configuration echoed into reports: everything except runtime knobs.
    pub fn scoring_config(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            for k in RUNTIME_KEYS {
                obj.remove(k);
            }
        }
        v
    }

    pub fn config_hash(&self) -> String {
        json_hash(&self.scoring_config())
    }

    pub fn color_table(&self) -> Result<ColorBinTable> {
        match &self.color_bins {
            Some(p) => ColorBinTable::load(p),
            None => Ok(ColorBinTable::default_table()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Computed,
    CacheHit,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoSummary {
    pub nodes: usize,
    pub unknown_score_nodes: usize,
    pub threshold: f64,
    pub intervals: Vec<(f64, f64)>,
    pub frames_before: usize,
    pub frames_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub source_id: String,
    pub index: u64,
    pub message: String,
}

/// One row of the score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub source_id: String,
    pub index: u64,
    pub timestamp: f64,
    pub gps_linked: bool,
    pub shot_id: usize,
    pub gamma: f64,
    pub comp: f64,
    pub sym: f64,
    pub vib: f64,
    pub head: f64,
    #[serde(rename = "final")]
    pub final_: f64,
    /// Index of the chosen thirds point.
    pub thirds_point: usize,
    pub thirds_xy: (f64, f64),
    pub segments: usize,
}

impl FrameReport {
    pub fn id(&self) -> String {
        format!("{}:{}", self.source_id, self.index)
    }

    pub fn scores(&self) -> FrameScores {
        FrameScores {
            gamma: self.gamma,
            s_comp: self.comp,
            s_sym: self.sym,
            s_vib: self.vib,
            s_head: self.head,
            s_final: self.final_,
            shot_id: self.shot_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub corpus_hash: String,
    pub analysis_max_side: u32,
    pub descriptor_dimension: usize,
    pub shot_count: usize,
    pub geo: Option<GeoSummary>,
    pub notes: Vec<String>,
    pub decode_failures: Vec<FrameFailure>,
    pub frames: Vec<FrameReport>,
}

impl ScoreReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    /// Finds a frame by `source:index`, or by bare index when it is unique.
    pub fn find_frame(&self, id: &str) -> Option<&FrameReport> {
        if let Some((src, idx)) = id.rsplit_once(':') {
            let idx: u64 = idx.parse().ok()?;
            return self.frames.iter().find(|f| f.source_id == src && f.index == idx);
        }
        let idx: u64 = id.parse().ok()?;
        let mut hits = self.frames.iter().filter(|f| f.index == idx);
        let first = hits.next()?;
        hits.next().is_none().then_some(first)
    }
}

pub struct PipelineOptions<'a> {
    /// POI provider for unscored nodes; defaults to cache-only.
    pub poi_client: Option<&'a dyn PoiClient>,
    /// Where POI lookups are cached; defaults to `<cache_dir>/poi`.
    pub poi_cache_dir: Option<PathBuf>,
    /// Copy frames and write `album.json`; off for score-only runs.
    pub export_album: bool,
}

impl Default for PipelineOptions<'_> {
    fn default() -> Self {
        PipelineOptions {
            poi_client: None,
            poi_cache_dir: None,
            export_album: true,
        }
    }
}

pub struct PipelineOutput {
    pub report: ScoreReport,
    pub album: HighlightAlbum,
    pub report_path: PathBuf,
    pub album_path: Option<PathBuf>,
    pub stages: Vec<StageRecord>,
}

struct StageCache {
    dir: Option<PathBuf>,
}

impl StageCache {
    fn path(&self, stage: &str, key: &str, ext: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("stages").join(format!("{stage}-{key}.{ext}")))
    }

    fn get<T: for<'de> Deserialize<'de>>(&self, stage: &str, key: &str) -> Option<T> {
        let path = self.path(stage, key, "json")?;
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring unreadable cache {}: {e}", path.display());
                None
            }
        }
    }

    fn put<T: Serialize>(&self, stage: &str, key: &str, value: &T) -> Result<()> {
        let Some(path) = self.path(stage, key, "json") else { return Ok(()) };
        let parent = path.parent().expect("stage path has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        write_atomic(&path, &serde_json::to_vec(value).expect("stage output serializes"))
    }
}

fn stage_key(parts: &[&str]) -> String {
    sha256_hex(parts.join("\n").as_bytes())
}

fn stage_err(stage: &'static str, detail: impl std::fmt::Display) -> Error {
    Error::Stage { stage, detail: detail.to_string() }
}

/// Scored location nodes and the time intervals they keep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoOutcome {
    pub nodes: Vec<GeoNode>,
    pub threshold: f64,
    pub intervals: Vec<(f64, f64)>,
    /// Nodes whose POI lookup failed (kept as important).
    pub lookup_failures: usize,
}

/// Aggregates the track into nodes, scores them through `client` (behind the
/// POI cache at `poi_cache_dir`) and derives the importance intervals.
pub fn compute_geo(
    track_path: &Path,
    geo: &GeoConfig,
    client: &dyn PoiClient,
    poi_cache_dir: &Path,
) -> Result<GeoOutcome> {
    let track = read_track(track_path)?;
    let mut nodes = aggregate_nodes(&track, geo).map_err(|e| stage_err("geo", e))?;
    let poi_cache = PoiCache::new(poi_cache_dir);
    let lookup_failures = score_nodes(&mut nodes, client, &poi_cache, geo.poi_radius_km);
    let threshold = resolve_threshold(&nodes, geo.node_score_threshold);
    let intervals = importance_intervals(&nodes, threshold);
    Ok(GeoOutcome { nodes, threshold, intervals, lookup_failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AestheticRow {
    comp: f64,
    thirds_point: usize,
    segments: usize,
    sym: f64,
    vib: f64,
}

/// Per-frame stage output; `None` marks a frame that failed to decode.
type PerFrame<T> = Vec<Option<T>>;

fn frame_hashes(entries: &[FrameEntry]) -> Result<Vec<String>> {
    entries.par_iter().map(|e| file_sha256(&e.path)).collect()
}

fn corpus_hash(entries: &[FrameEntry], hashes: &[String], track_hash: Option<&str>) -> String {
    let rows: Vec<(&str, u64, f64, &str)> = entries
        .iter()
        .zip(hashes)
        .map(|(e, h)| (e.source_id.as_str(), e.index, e.timestamp, h.as_str()))
        .collect();
    json_hash(&(rows, track_hash))
}

/// Positions where a new source starts.
fn source_starts(entries: &[&FrameEntry]) -> Vec<usize> {
    (1..entries.len())
        .filter(|&i| entries[i].source_id != entries[i - 1].source_id)
        .collect()
}

fn debug_name(prefix: &str, e: &FrameEntry) -> String {
    let src: String = e
        .source_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{prefix}_{src}_{:08}.png", e.index)
}

struct FramePass<'a> {
    cfg: &'a PipelineConfig,
    table: &'a ColorBinTable,
    extractor: Option<GistExtractor>,
    want_aesthetics: bool,
}

impl FramePass<'_> {
    fn aesthetics(&self, e: &FrameEntry, raster: &RgbImage) -> Result<AestheticRow> {
        let a = &self.cfg.aesthetics;
        let segmap = segment_raster(raster, &a.segmentation)?;
        let geom = ThirdsGeometry::with_epsilon(a.d_epsilon)?;
        let comp = composition_score(&segmap, &geom, self.table, a.segmentation.simplicity_plateau)?;
        let sym = symmetry_analysis(raster, &a.symmetry)?;
        let vib = vibrancy_score(raster, self.table, a.bin_distance_floor)?;
        let debug_dir = self.cfg.output_dir.join("debug");
        if self.cfg.debug.segment_maps || self.cfg.debug.symmetry_overlays {
            std::fs::create_dir_all(&debug_dir).map_err(|e| Error::io(&debug_dir, e))?;
        }
        if self.cfg.debug.segment_maps {
            segmap.write_debug_png(&debug_dir.join(debug_name("segments", e)))?;
        }
        if self.cfg.debug.symmetry_overlays {
            write_symmetry_overlay(raster, &sym, &debug_dir.join(debug_name("symmetry", e)))?;
        }
        Ok(AestheticRow {
            comp: comp.score,
            thirds_point: comp.best_point,
            segments: comp.segments,
            sym: sym.score,
            vib,
        })
    }

    /// Decodes every entry once, in chunks, and computes the requested
    /// per-frame outputs.
    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        entries: &[FrameEntry],
    ) -> Result<(PerFrame<GistDescriptor>, PerFrame<AestheticRow>, Vec<FrameFailure>)> {
        let mut descs = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        let mut failures = Vec::new();
        for chunk in entries.chunks(CHUNK) {
            let out: Vec<Result<Option<(Option<GistDescriptor>, Option<AestheticRow>)>>> = chunk
                .par_iter()
                .map(|e| {
                    let frame = match decode_frame(e, self.cfg.analysis_max_side) {
                        Ok(f) => f,
                        Err(_) => return Ok(None),
                    };
                    let d = self.extractor.as_ref().map(|x| x.describe(&frame.raster));
                    let a = if self.want_aesthetics {
                        Some(self.aesthetics(e, &frame.raster).map_err(|err| {
                            stage_err("aesthetics", format!("{}:{}: {err}", e.source_id, e.index))
                        })?)
                    } else {
                        None
                    };
                    Ok(Some((d, a)))
                })
                .collect();
            for (e, res) in chunk.iter().zip(out) {
                match res? {
                    Some((d, a)) => {
                        descs.push(d);
                        rows.push(a);
                    }
                    None => {
                        let message = decode_frame(e, self.cfg.analysis_max_side)
                            .err()
                            .map_or_else(|| "decode failed".to_string(), |err| err.to_string());
                        log::warn!("skipping frame {}:{}: {message}", e.source_id, e.index);
                        failures.push(FrameFailure {
                            source_id: e.source_id.clone(),
                            index: e.index,
                            message,
                        });
                        descs.push(None);
                        rows.push(None);
                    }
                }
            }
        }
        Ok((descs, rows, failures))
    }
}

/// Head-tilt scores over the decodable frames. Frames are decoded in chunks
/// with enough neighbours on each side to fill every window.
fn tilt_pass(frames: &[&FrameEntry], starts: &[usize], cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let n = frames.len();
    let bounds = crate::shots::segment_bounds(n, starts);
    let halo = cfg.tilt.window / 2 + 1;
    let mut out = Vec::with_capacity(n);
    let mut a = 0;
    while a < n {
        let b = (a + CHUNK).min(n);
        let lo = a.saturating_sub(halo);
        let hi = (b + halo).min(n);
        let rasters: Vec<RgbImage> = frames[lo..hi]
            .par_iter()
            .map(|e| {
                decode_frame(e, cfg.analysis_max_side)
                    .map(|f| f.raster)
                    .map_err(|err| stage_err("head_tilt", format!("{}:{}: {err}", e.source_id, e.index)))
            })
            .collect::<Result<_>>()?;
        let scores: Vec<f64> = (a..b)
            .into_par_iter()
            .map(|i| {
                let (slo, shi) = bounds[i];
                head_score_in(i - lo, &rasters, slo.max(lo) - lo, shi.min(hi) - lo, &cfg.tilt).map_err(|err| {
                    stage_err("head_tilt", format!("{}:{}: {err}", frames[i].source_id, frames[i].index))
                })
            })
            .collect::<Result<_>>()?;
        out.extend(scores);
        a = b;
    }
    Ok(out)
}

/// Runs every stage and writes `score_report.json` (and, when requested, the
/// album) under `config.output_dir`.
pub fn run_pipeline(
    manifest_path: &Path,
    config: &PipelineConfig,
    options: &PipelineOptions<'_>,
) -> Result<PipelineOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| stage_err("setup", e))?;
    pool.install(|| run_stages(manifest_path, config, options))
}

fn run_stages(
    manifest_path: &Path,
    config: &PipelineConfig,
    options: &PipelineOptions<'_>,
) -> Result<PipelineOutput> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let table = config.color_table()?;
    let cache = StageCache { dir: config.cache_dir.clone() };
    let config_value = config.scoring_config();
    let config_hash = json_hash(&config_value);
    let mut stages = Vec::new();
    let mut notes = Vec::new();
    let mut record = |stage: &str, status: StageStatus| {
        log::info!("stage {stage}: {status:?}");
        stages.push(StageRecord { stage: stage.to_string(), status });
    };

    let all_entries = list_frames(&manifest)?;
    let frames_before = all_entries.len();

    // GPS filter
    let mut track_hash = None;
    let (entries, geo_summary) = match &manifest.gps_track {
        None => {
            notes.push("no GPS track in the manifest; geo filter skipped".to_string());
            record("geo", StageStatus::Skipped);
            (all_entries, None)
        }
        Some(track_path) => {
            let th = file_sha256(track_path)?;
            let key = stage_key(&["geo", &th, &json_hash(&config.geo)]);
            track_hash = Some(th);
            let stage: GeoOutcome = match cache.get("geo", &key) {
                Some(s) => {
                    record("geo", StageStatus::CacheHit);
                    s
                }
                None => {
                    let poi_dir = options
                        .poi_cache_dir
                        .clone()
                        .or_else(|| config.cache_dir.as_ref().map(|d| d.join("poi")))
                        .unwrap_or_else(|| config.output_dir.join("poi-cache"));
                    let offline = OfflineClient;
                    let client = options.poi_client.unwrap_or(&offline);
                    let stage = compute_geo(track_path, &config.geo, client, &poi_dir)?;
                    // a later run with a working POI client should retry the lookups
                    if stage.lookup_failures == 0 {
                        cache.put("geo", &key, &stage)?;
                    }
                    record("geo", StageStatus::Computed);
                    stage
                }
            };
            let unknown = stage.nodes.iter().filter(|n| n.score.is_none()).count();
            if unknown > 0 {
                notes.push(format!("{unknown} GPS nodes have no POI score and were kept"));
            }
            let kept = filter_entries(all_entries, &stage.intervals);
            let summary = GeoSummary {
                nodes: stage.nodes.len(),
                unknown_score_nodes: unknown,
                threshold: stage.threshold,
                intervals: stage.intervals.clone(),
                frames_before,
                frames_after: kept.len(),
            };
            (kept, Some(summary))
        }
    };
    if entries.is_empty() {
        return Err(stage_err("geo", "no frames remain after the GPS filter"));
    }
    let gps_linked = geo_summary.is_some();

    let hashes = frame_hashes(&entries)?;
    let corpus = corpus_hash(&entries, &hashes, track_hash.as_deref());
    let res = config.analysis_max_side.to_string();

    // descriptors and aesthetics share one decoding pass
    let desc_key = stage_key(&["descriptors", &corpus, &json_hash(&config.gist), &res]);
    let aes_key = stage_key(&[
        "aesthetics",
        &corpus,
        &json_hash(&config.aesthetics),
        &json_hash(&table),
        &res,
    ]);
    let desc_path = cache.path("descriptors", &desc_key, "bin");
    let cached_desc = match &desc_path {
        Some(p) => read_descriptor_cache(p, &desc_key)?,
        None => None,
    };
    let cached_aes: Option<(PerFrame<AestheticRow>, Vec<FrameFailure>)> = cache.get("aesthetics", &aes_key);
    let pass = FramePass {
        cfg: config,
        table: &table,
        extractor: if cached_desc.is_none() {
            Some(GistExtractor::new(config.gist.clone())?)
        } else {
            None
        },
        want_aesthetics: cached_aes.is_none(),
    };
    let (mut descs, mut rows, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    if cached_desc.is_none() || cached_aes.is_none() {
        (descs, rows, failures) = pass.run(&entries)?;
    }
    let descs: PerFrame<GistDescriptor> = match cached_desc {
        Some(records) => {
            record("descriptors", StageStatus::CacheHit);
            let mut v: PerFrame<GistDescriptor> = vec![None; entries.len()];
            for (pos, d) in records {
                if let Some(slot) = v.get_mut(pos as usize) {
                    *slot = Some(d);
                }
            }
            v
        }
        None => {
            if let Some(p) = &desc_path {
                let records: Vec<(u64, GistDescriptor)> = descs
                    .iter()
                    .enumerate()
                    .filter_map(|(i, d)| d.clone().map(|d| (i as u64, d)))
                    .collect();
                write_descriptor_cache(p, &desc_key, &records)?;
            }
            record("descriptors", StageStatus::Computed);
            descs
        }
    };
    let (rows, failures) = match cached_aes {
        Some(hit) => {
            record("aesthetics", StageStatus::CacheHit);
            hit
        }
        None => {
            let out = (std::mem::take(&mut rows), std::mem::take(&mut failures));
            cache.put("aesthetics", &aes_key, &out)?;
            record("aesthetics", StageStatus::Computed);
            out
        }
    };

    let alive: Vec<usize> = (0..entries.len()).filter(|&i| descs[i].is_some() && rows[i].is_some()).collect();
    if alive.is_empty() {
        return Err(Error::EmptyInput("no frame in the corpus could be decoded".into()));
    }
    let frames: Vec<&FrameEntry> = alive.iter().map(|&i| &entries[i]).collect();
    let starts = source_starts(&frames);

    // shots
    let shot_key = stage_key(&["shots", &desc_key, &json_hash(&config.shots)]);
    let shots: ShotAssignment = match cache.get("shots", &shot_key) {
        Some(s) => {
            record("shots", StageStatus::CacheHit);
            s
        }
        None => {
            let live: Vec<GistDescriptor> = alive.iter().map(|&i| descs[i].clone().expect("alive")).collect();
            let gammas = gamma_scores(&live, config.shots.window, &starts).map_err(|e| stage_err("shots", e))?;
            let s = assign_shots_with(&gammas, &config.shots, &starts);
            cache.put("shots", &shot_key, &s)?;
            record("shots", StageStatus::Computed);
            s
        }
    };

    // head tilt
    let tilt_key = stage_key(&["head_tilt", &corpus, &json_hash(&config.tilt), &res]);
    let heads: Vec<f64> = match cache.get("head_tilt", &tilt_key) {
        Some(h) => {
            record("head_tilt", StageStatus::CacheHit);
            h
        }
        None => {
            let h = tilt_pass(&frames, &starts, config)?;
            cache.put("head_tilt", &tilt_key, &h)?;
            record("head_tilt", StageStatus::Computed);
            h
        }
    };

    // ranking
    let scores: Vec<FrameScores> = alive
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let r = rows[i].as_ref().expect("alive");
            let mut s = FrameScores {
                gamma: shots.gammas[k],
                s_comp: r.comp,
                s_sym: r.sym,
                s_vib: r.vib,
                s_head: heads[k],
                s_final: 0.0,
                shot_id: shots.shot_ids[k],
            };
            s.s_final = final_score(&s, &config.rank);
            s
        })
        .collect();
    let selection = select_highlights(&scores, &shots, &config.rank)?;
    let frame_list: Vec<FrameEntry> = frames.iter().map(|&e| e.clone()).collect();
    let mut album = HighlightAlbum::from_selection(
        &selection,
        &frame_list,
        &scores,
        config_value.clone(),
        corpus.clone(),
        config.rank.album_size,
    )?;

    let report = ScoreReport {
        config: config_value,
        config_hash,
        corpus_hash: corpus,
        analysis_max_side: config.analysis_max_side,
        descriptor_dimension: config.gist.dimension(),
        shot_count: shots.shot_count(),
        geo: geo_summary,
        notes,
        decode_failures: failures,
        frames: frames
            .iter()
            .zip(&alive)
            .zip(&scores)
            .map(|((e, &i), s)| {
                let r = rows[i].as_ref().expect("alive");
                FrameReport {
                    source_id: e.source_id.clone(),
                    index: e.index,
                    timestamp: e.timestamp,
                    gps_linked,
                    shot_id: s.shot_id,
                    gamma: s.gamma,
                    comp: s.s_comp,
                    sym: s.s_sym,
                    vib: s.s_vib,
                    head: s.s_head,
                    final_: s.s_final,
                    thirds_point: r.thirds_point,
                    thirds_xy: crate::aesthetics::THIRDS_POINTS[r.thirds_point],
                    segments: r.segments,
                }
            })
            .collect(),
    };

    let out_dir = &config.output_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let report_path = out_dir.join("score_report.json");
    write_atomic(&report_path, &report.to_json_bytes())?;
    let album_path = if options.export_album {
        let p = export_album(&mut album, out_dir).map_err(|e| stage_err("export", e))?;
        record("export", StageStatus::Computed);
        Some(p)
    } else {
        record("export", StageStatus::Skipped);
        None
    };
    Ok(PipelineOutput { report, album, report_path, album_path, stages })
}
