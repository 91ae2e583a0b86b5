use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use picturesque::geo::{PoiRecord, StaticPoiClient};
use picturesque::pipeline::{run_pipeline, PipelineConfig, PipelineOptions, ScoreReport, StageStatus};
use picturesque::ranking::RankConfig;
use picturesque::HighlightAlbum;

fn frame(scene: usize, i: usize) -> RgbImage {
    RgbImage::from_fn(96, 72, |x, y| {
        let t = (i % 4) as u8;
        match scene % 3 {
            0 => Rgb([200, 40 + (x % 12) as u8 * 8 + t, 50]),
            1 => Rgb([30 + t, 100, 140 + (y % 9) as u8 * 10]),
            _ => Rgb([((x / 8 + y / 8) % 2 * 210) as u8, 150 + t, 70]),
        }
    })
}

/// Two cameras of 20 frames at 1 fps: `a` starts at t=0 and `b` at t=100.
fn two_sources(dir: &Path, track: Option<&str>) -> PathBuf {
    for (src, scene) in [("a", 0), ("b", 1)] {
        let d = dir.join(src);
        std::fs::create_dir_all(&d).unwrap();
        for i in 0..20 {
            frame(scene + i / 10, i).save(d.join(format!("frame_{i:08}.png"))).unwrap();
        }
    }
    let mut manifest = serde_json::json!({
        "sources": [
            {"source_id": "a", "path": "a", "start_timestamp": 0.0, "fps": 1.0},
            {"source_id": "b", "path": "b", "start_timestamp": 100.0, "fps": 1.0}
        ]
    });
    if let Some(t) = track {
        manifest["gps_track"] = serde_json::json!(t);
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_string()).unwrap();
    path
}

fn config(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        cache_dir: Some(dir.join("cache")),
        output_dir: dir.join("out"),
        rank: RankConfig { album_size: 6, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn shots_never_span_two_sources() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_sources(dir.path(), None);
    let out = run_pipeline(&manifest, &config(dir.path()), &PipelineOptions::default()).unwrap();
    let frames = &out.report.frames;
    assert_eq!(frames.len(), 40);
    let first_b = frames.iter().position(|f| f.source_id == "b").unwrap();
    assert_eq!(first_b, 20);
    assert!(frames[first_b].shot_id > frames[first_b - 1].shot_id);
    let a_shots: Vec<usize> = frames[..20].iter().map(|f| f.shot_id).collect();
    assert!(frames[20..].iter().all(|f| !a_shots.contains(&f.shot_id)));
    assert!(frames.iter().all(|f| !f.gps_linked));
}

#[test]
fn gps_filter_drops_frames_at_unimportant_places() {
    let dir = tempfile::tempdir().unwrap();
    // parked near A for t in [0, 40], then 10 km north for t in [60, 130]
    let mut csv = String::from("timestamp,lat,lon,speed\n");
    for t in (0..=40).step_by(5) {
        csv += &format!("{t},46.0,8.0,0\n");
    }
    for t in (60..=130).step_by(5) {
        csv += &format!("{t},46.09,8.0,0\n");
    }
    std::fs::write(dir.path().join("track.csv"), csv).unwrap();
    let manifest = two_sources(dir.path(), Some("track.csv"));

    // only the first place has a POI, so the second node scores zero
    let client = StaticPoiClient::new(vec![PoiRecord {
        name: "lake".into(),
        review_count: 120,
        rating: 4.5,
        location: picturesque::geo::Coordinate::new(46.0, 8.0),
    }]);
    let options = PipelineOptions { poi_client: Some(&client), ..Default::default() };
    let mut cfg = config(dir.path());
    cfg.geo.node_score_threshold = picturesque::geo::NodeThreshold::Absolute(1.0);
    let out = run_pipeline(&manifest, &cfg, &options).unwrap();

    let geo = out.report.geo.as_ref().unwrap();
    assert_eq!(geo.nodes, 2);
    assert_eq!(geo.intervals, vec![(0.0, 40.0)]);
    assert_eq!(geo.frames_before, 40);
    assert_eq!(geo.frames_after, 20);
    assert!(out.report.frames.iter().all(|f| f.source_id == "a" && f.gps_linked));
    assert!(out.album.entries.iter().all(|e| e.source_id == "a"));

    // the scored geo stage is cached; POIs are not needed again
    let again = run_pipeline(&manifest, &cfg, &PipelineOptions::default()).unwrap();
    let geo_stage = again.stages.iter().find(|s| s.stage == "geo").unwrap();
    assert_eq!(geo_stage.status, StageStatus::CacheHit);
    assert_eq!(again.report, out.report);
}

#[test]
fn unscored_nodes_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("track.csv"), "timestamp,lat,lon\n0,46.0,8.0\n150,46.0,8.0\n").unwrap();
    let manifest = two_sources(dir.path(), Some("track.csv"));
    let out = run_pipeline(&manifest, &config(dir.path()), &PipelineOptions::default()).unwrap();
    assert_eq!(out.report.frames.len(), 40);
    assert!(out.report.notes.iter().any(|n| n.contains("no POI score")));
    assert_eq!(out.report.geo.as_ref().unwrap().unknown_score_nodes, 1);
}

#[test]
fn ranking_change_reuses_frame_stages() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_sources(dir.path(), None);
    let cfg = config(dir.path());
    let first = run_pipeline(&manifest, &cfg, &PipelineOptions::default()).unwrap();

    let reweighted = PipelineConfig { rank: RankConfig { lambda1: 0.2, lambda2: 0.8, ..cfg.rank.clone() }, ..cfg.clone() };
    let second = run_pipeline(&manifest, &reweighted, &PipelineOptions::default()).unwrap();
    for s in &second.stages {
        if ["descriptors", "aesthetics", "shots", "head_tilt"].contains(&s.stage.as_str()) {
            assert_eq!(s.status, StageStatus::CacheHit, "{}", s.stage);
        }
    }
    assert_ne!(first.report.config_hash, second.report.config_hash);
    for (a, b) in first.report.frames.iter().zip(&second.report.frames) {
        assert_eq!((a.comp, a.sym, a.vib), (b.comp, b.sym, b.vib));
        assert!((b.final_ - b.vib * (0.2 * b.comp + 0.8 * b.sym)).abs() < 1e-12);
    }

    // a different window invalidates the shot stage but not the descriptors
    let rewindowed = PipelineConfig { shots: picturesque::shots::ShotConfig { window: 5, ..cfg.shots.clone() }, ..cfg };
    let third = run_pipeline(&manifest, &rewindowed, &PipelineOptions::default()).unwrap();
    let status = |name: &str| third.stages.iter().find(|s| s.stage == name).unwrap().status;
    assert_eq!(status("descriptors"), StageStatus::CacheHit);
    assert_eq!(status("shots"), StageStatus::Computed);
}

#[test]
fn report_and_album_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_sources(dir.path(), None);
    let cfg = config(dir.path());
    let out = run_pipeline(&manifest, &cfg, &PipelineOptions::default()).unwrap();

    let report = ScoreReport::load(&out.report_path).unwrap();
    assert_eq!(report, out.report);
    assert_eq!(report.descriptor_dimension, 512);
    assert!(report.find_frame("b:3").is_some());
    // index 3 exists in both sources, so a bare index is ambiguous
    assert!(report.find_frame("3").is_none());

    let album: HighlightAlbum =
        serde_json::from_slice(&std::fs::read(out.album_path.as_ref().unwrap()).unwrap()).unwrap();
    assert_eq!(album.entries.len(), out.album.entries.len());
    let mut last = f64::INFINITY;
    for (rank, e) in album.entries.iter().enumerate() {
        assert_eq!(e.rank, rank + 1);
        assert!(e.scores.final_ <= last);
        last = e.scores.final_;
        let file = cfg.output_dir.join(e.file.as_ref().unwrap());
        assert_eq!(&picturesque::file_sha256(&file).unwrap(), e.sha256.as_ref().unwrap());
    }
    let shots: std::collections::HashSet<usize> = album.entries.iter().map(|e| e.shot_id).collect();
    assert_eq!(shots.len(), album.entries.len(), "per-shot cap of 1");
}

#[test]
fn debug_exports_land_in_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_sources(dir.path(), None);
    let mut cfg = config(dir.path());
    cfg.cache_dir = None;
    cfg.debug.segment_maps = true;
    cfg.debug.symmetry_overlays = true;
    let out = run_pipeline(&manifest, &cfg, &PipelineOptions { export_album: false, ..Default::default() }).unwrap();
    assert!(out.album_path.is_none());
    let names: Vec<String> = std::fs::read_dir(cfg.output_dir.join("debug"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("segments")).count(), 40);
    assert_eq!(names.iter().filter(|n| n.starts_with("symmetry")).count(), 40);
    // debug switches do not change the scoring config
    assert!(out.report.config.get("debug").is_none());
}
