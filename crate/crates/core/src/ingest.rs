//! Corpus manifests, frame listing and decoding.
//!
//! A corpus is one directory of pre-extracted frames per video source,
//! named `frame_%08d.png` (JPEG also accepted). Frames are decoded lazily and
//! downscaled to the analysis resolution; export copies the original file.

use std::collections::{HashSet, VecDeque};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_FRAME_SIDE: u32 = 32;
const DECODE_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub source_id: String,
    /// Directory of extracted frames; relative paths resolve against the manifest.
    pub path: PathBuf,
    /// Timestamp of frame 0, seconds since the epoch (same clock as the GPS track).
    pub start_timestamp: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub sources: Vec<SourceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps_track: Option<PathBuf>,
}

impl CorpusManifest {
    /// Loads a manifest and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: CorpusManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut manifest.sources {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
        }
        if let Some(track) = &mut manifest.gps_track {
            if track.is_relative() {
                *track = base.join(&*track);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sources {
            if !(s.fps > 0.0) || !s.fps.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "source `{}`: fps must be positive",
                    s.source_id
                )));
            }
            if !s.start_timestamp.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "source `{}`: start timestamp not finite",
                    s.source_id
                )));
            }
            if !seen.insert(s.source_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate source id `{}`",
                    s.source_id
                )));
            }
        }
        Ok(())
    }
}

/// A frame known from the listing, not yet decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub source_id: String,
    pub index: u64,
    pub timestamp: f64,
    pub path: PathBuf,
}

/// A decoded frame at analysis resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: u64,
    pub source_id: String,
    pub timestamp: f64,
    pub raster: RgbImage,
    pub gps_linked: bool,
    /// Original-resolution file.
    pub path: PathBuf,
}

impl FrameRecord {
    /// Wraps an in-memory raster, e.g. a still photo or a test fixture.
    pub fn from_raster(raster: RgbImage) -> Self {
        FrameRecord {
            index: 0,
            source_id: String::new(),
            timestamp: 0.0,
            raster,
            gps_linked: false,
            path: PathBuf::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.raster.dimensions();
        if w < MIN_FRAME_SIDE || h < MIN_FRAME_SIDE {
            return Err(Error::InvalidInput(format!(
                "frame {}:{} is {w}x{h}, below the {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE} minimum",
                self.source_id, self.index
            )));
        }
        Ok(())
    }
}

/// A frame that could not be decoded and was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeFailure {
    pub source_id: String,
    pub index: u64,
    pub path: PathBuf,
    pub message: String,
}

fn frame_index_from_name(name: &str) -> Option<u64> {
    let stem = name.strip_prefix("frame_")?;
    let (digits, ext) = stem.split_once('.')?;
    if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Lists every frame of every source in `(source, index)` order.
pub fn list_frames(manifest: &CorpusManifest) -> Result<Vec<FrameEntry>> {
    let mut all = Vec::new();
    for src in &manifest.sources {
        let dir = std::fs::read_dir(&src.path).map_err(|e| Error::io(&src.path, e))?;
        let mut frames = Vec::new();
        for entry in dir {
            let entry = entry.map_err(|e| Error::io(&src.path, e))?;
            let name = entry.file_name();
            let Some(index) = name.to_str().and_then(frame_index_from_name) else {
                continue;
            };
            frames.push(FrameEntry {
                source_id: src.source_id.clone(),
                index,
                timestamp: src.start_timestamp + index as f64 / src.fps,
                path: entry.path(),
            });
        }
        frames.sort_by(|a, b| a.index.cmp(&b.index).then_with(|| a.path.cmp(&b.path)));
        if let Some(w) = frames.windows(2).find(|w| w[0].index == w[1].index) {
            return Err(Error::InvalidInput(format!(
                "source `{}` has two files for frame {}",
                src.source_id, w[0].index
            )));
        }
        all.extend(frames);
    }
    if all.is_empty() {
        return Err(Error::EmptyInput("corpus contains no frames".into()));
    }
    Ok(all)
}

/// Shrinks `img` so its longest side is at most `max_side` (0 disables).
pub fn to_analysis_resolution(img: RgbImage, max_side: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let longest = w.max(h);
    if max_side == 0 || longest <= max_side {
        return img;
    }
    let scale = max_side as f64 / longest as f64;
    let nw = ((w as f64 * scale).round() as u32).max(1);
    let nh = ((h as f64 * scale).round() as u32).max(1);
    image::imageops::resize(&img, nw, nh, FilterType::Triangle)
}

/// Decodes one listed frame.
pub fn decode_frame(entry: &FrameEntry, max_side: u32) -> Result<FrameRecord> {
    let img = image::open(&entry.path).map_err(|e| Error::Decode {
        path: entry.path.clone(),
        message: e.to_string(),
    })?;
    let record = FrameRecord {
        index: entry.index,
        source_id: entry.source_id.clone(),
        timestamp: entry.timestamp,
        raster: to_analysis_resolution(img.to_rgb8(), max_side),
        gps_linked: false,
        path: entry.path.clone(),
    };
    record.validate().map_err(|e| Error::Decode {
        path: entry.path.clone(),
        message: e.to_string(),
    })?;
    Ok(record)
}

/// Decodes a batch in parallel, preserving order.
pub fn decode_batch(
    entries: &[FrameEntry],
    max_side: u32,
) -> Vec<std::result::Result<FrameRecord, DecodeFailure>> {
    entries
        .par_iter()
        .map(|e| {
            decode_frame(e, max_side).map_err(|err| DecodeFailure {
                source_id: e.source_id.clone(),
                index: e.index,
                path: e.path.clone(),
                message: err.to_string(),
            })
        })
        .collect()
}

/// Lazily decoded frames. Decoding runs in parallel batches; frames come out
/// in listing order and undecodable files are recorded and skipped.
pub struct CorpusStream {
    pending: VecDeque<FrameEntry>,
    ready: VecDeque<FrameRecord>,
    failures: Vec<DecodeFailure>,
    max_side: u32,
}

impl CorpusStream {
    pub fn new(entries: Vec<FrameEntry>, max_side: u32) -> Self {
        CorpusStream {
            pending: entries.into(),
            ready: VecDeque::new(),
            failures: Vec::new(),
            max_side,
        }
    }

    pub fn failures(&self) -> &[DecodeFailure] {
        &self.failures
    }

    fn refill(&mut self) {
        while self.ready.is_empty() && !self.pending.is_empty() {
            let take = DECODE_BATCH.min(self.pending.len());
            let batch: Vec<FrameEntry> = self.pending.drain(..take).collect();
            for res in decode_batch(&batch, self.max_side) {
                match res {
                    Ok(frame) => self.ready.push_back(frame),
                    Err(f) => {
                        log::warn!("skipping {}: {}", f.path.display(), f.message);
                        self.failures.push(f);
                    }
                }
            }
        }
    }
}

impl Iterator for CorpusStream {
    type Item = FrameRecord;

    fn next(&mut self) -> Option<FrameRecord> {
        self.refill();
        self.ready.pop_front()
    }
}

/// Opens every source of the manifest as one ordered frame stream.
pub fn load_corpus(manifest: &CorpusManifest, max_side: u32) -> Result<CorpusStream> {
    Ok(CorpusStream::new(list_frames(manifest)?, max_side))
}

/// Whether `t` falls inside one of the sorted, disjoint closed intervals.
pub fn in_intervals(t: f64, intervals: &[(f64, f64)]) -> bool {
    let idx = intervals.partition_point(|iv| iv.1 < t);
    intervals.get(idx).is_some_and(|iv| iv.0 <= t && t <= iv.1)
}

/// Keeps frames whose timestamp falls inside an interval and marks them GPS-linked.
pub fn filter_by_intervals<'a, I>(
    frames: I,
    intervals: &'a [(f64, f64)],
) -> impl Iterator<Item = FrameRecord> + 'a
where
    I: IntoIterator<Item = FrameRecord>,
    I::IntoIter: 'a,
{
    frames.into_iter().filter_map(move |mut f| {
        in_intervals(f.timestamp, intervals).then(|| {
            f.gps_linked = true;
            f
        })
    })
}

/// Listing-level variant of [`filter_by_intervals`], used before decoding.
pub fn filter_entries(entries: Vec<FrameEntry>, intervals: &[(f64, f64)]) -> Vec<FrameEntry> {
    entries
        .into_iter()
        .filter(|e| in_intervals(e.timestamp, intervals))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_frames(dir: &Path, n: u64, size: u32) {
        std::fs::create_dir_all(dir).unwrap();
        for i in 0..n {
            let img = RgbImage::from_fn(size, size, |x, y| {
                image::Rgb([(x * 4) as u8, (y * 4) as u8, (i * 20) as u8])
            });
            img.save(dir.join(format!("frame_{i:08}.png"))).unwrap();
        }
    }

    fn manifest(root: &Path, sources: &[(&str, f64, f64)]) -> CorpusManifest {
        CorpusManifest {
            sources: sources
                .iter()
                .map(|(id, start, fps)| SourceSpec {
                    source_id: id.to_string(),
                    path: root.join(id),
                    start_timestamp: *start,
                    fps: *fps,
                })
                .collect(),
            gps_track: None,
        }
    }

    #[test]
    fn ten_frames_at_30fps() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(&dir.path().join("cam"), 10, 40);
        let m = manifest(dir.path(), &[("cam", 0.0, 30.0)]);
        let frames: Vec<_> = load_corpus(&m, 0).unwrap().collect();
        assert_eq!(frames.len(), 10);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.index, i as u64);
            assert_eq!(f.timestamp, i as f64 / 30.0);
            assert!(!f.gps_linked);
        }
    }

    #[test]
    fn corrupt_frame_is_skipped_and_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let cam = dir.path().join("cam");
        write_frames(&cam, 10, 40);
        std::fs::write(cam.join("frame_00000004.png"), b"not a png").unwrap();
        let m = manifest(dir.path(), &[("cam", 0.0, 30.0)]);
        let mut stream = load_corpus(&m, 0).unwrap();
        let frames: Vec<_> = stream.by_ref().collect();
        assert_eq!(frames.len(), 9);
        assert!(frames.iter().all(|f| f.index != 4));
        assert_eq!(stream.failures().len(), 1);
        assert_eq!(stream.failures()[0].index, 4);
    }

    #[test]
    fn sources_are_not_interleaved() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(&dir.path().join("b"), 3, 40);
        write_frames(&dir.path().join("a"), 3, 40);
        // b listed first and starting later in time; listing order wins
        let m = manifest(dir.path(), &[("b", 100.0, 1.0), ("a", 0.0, 1.0)]);
        let ids: Vec<_> = load_corpus(&m, 0)
            .unwrap()
            .map(|f| (f.source_id, f.index))
            .collect();
        assert_eq!(
            ids,
            vec![
                ("b".into(), 0),
                ("b".into(), 1),
                ("b".into(), 2),
                ("a".into(), 0),
                ("a".into(), 1),
                ("a".into(), 2)
            ]
        );
    }

    #[test]
    fn empty_corpus_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("cam")).unwrap();
        let m = manifest(dir.path(), &[("cam", 0.0, 30.0)]);
        assert!(matches!(load_corpus(&m, 0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(dir.path(), &[("a", 0.0, 30.0), ("a", 0.0, 30.0)]);
        assert!(m.validate().is_err());
        m.sources.pop();
        m.sources[0].fps = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_rejects_unknown_keys_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"{"sources":[{"source_id":"a","path":"a","start_timestamp":0,"fps":30}],"gps_track":"t.csv"}"#,
        )
        .unwrap();
        let m = CorpusManifest::load(&p).unwrap();
        assert_eq!(m.sources[0].path, dir.path().join("a"));
        assert_eq!(m.gps_track, Some(dir.path().join("t.csv")));

        std::fs::write(&p, r#"{"sources":[],"extra":1}"#).unwrap();
        assert!(CorpusManifest::load(&p).is_err());
    }

    #[test]
    fn analysis_resolution_keeps_aspect() {
        let img = RgbImage::new(1920, 1080);
        let small = to_analysis_resolution(img, 480);
        assert_eq!(small.dimensions(), (480, 270));
        let tiny = to_analysis_resolution(RgbImage::new(100, 50), 480);
        assert_eq!(tiny.dimensions(), (100, 50));
    }

    #[test]
    fn small_frames_rejected() {
        let f = FrameRecord::from_raster(RgbImage::new(31, 64));
        assert!(f.validate().is_err());
    }

    fn synthetic(n: usize, fps: f64) -> Vec<FrameRecord> {
        (0..n)
            .map(|i| FrameRecord {
                index: i as u64,
                source_id: "s".into(),
                timestamp: i as f64 / fps,
                raster: RgbImage::new(1, 1),
                gps_linked: false,
                path: PathBuf::new(),
            })
            .collect()
    }

    #[test]
    fn filter_examples() {
        let frames = synthetic(91, 30.0); // t = 0 ..= 3
        assert_eq!(filter_by_intervals(frames.clone(), &[]).count(), 0);

        let all: Vec<_> = filter_by_intervals(frames.clone(), &[(0.0, 3.0)]).collect();
        assert_eq!(all.len(), frames.len());
        assert!(all.iter().all(|f| f.gps_linked));

        let kept: Vec<_> = filter_by_intervals(frames.clone(), &[(1.0, 2.0)]).collect();
        // enumeration: i / 30 in [1, 2] <=> 30 <= i <= 60
        let expected = frames
            .iter()
            .filter(|f| f.timestamp >= 1.0 && f.timestamp <= 2.0)
            .count();
        assert_eq!(expected, 31);
        assert_eq!(kept.len(), 31);
        assert_eq!(kept[0].index, 30);
        assert_eq!(kept[30].index, 60);
    }

    #[test]
    fn complement_partitions_stream() {
        let frames = synthetic(100, 10.0);
        let inside = [(1.0, 3.0), (5.0, 6.5)];
        let outside = [(0.0, 0.99), (3.01, 4.99), (6.51, 10.0)];
        let a = filter_by_intervals(frames.clone(), &inside).count();
        let b = filter_by_intervals(frames.clone(), &outside).count();
        assert_eq!(a + b, frames.len());
    }

    #[test]
    fn frame_names() {
        assert_eq!(frame_index_from_name("frame_00000012.png"), Some(12));
        assert_eq!(frame_index_from_name("frame_00000012.JPG"), Some(12));
        assert_eq!(frame_index_from_name("frame_.png"), None);
        assert_eq!(frame_index_from_name("thumb_00000001.png"), None);
        assert_eq!(frame_index_from_name("frame_0001.txt"), None);
    }
}
