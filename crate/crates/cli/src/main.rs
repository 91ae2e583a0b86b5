use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use picturesque::eval::{default_lambda_grid, improvement_from_scores, lambda_sweep_from_scores, load_dataset, score_cases};
use picturesque::geo::{aggregate_nodes, nodes_to_geojson, read_track, GeoConfig, NodeThreshold, OfflineClient, PoiClient};
use picturesque::ingest::{filter_entries, list_frames, CorpusManifest, FrameEntry};
use picturesque::pipeline::{compute_geo, run_pipeline, PipelineConfig, PipelineOptions, ScoreReport};
use picturesque::ranking::{baseline_chrono_uniform, baseline_geo_uniform};
use picturesque::Error;

#[derive(Parser)]
#[command(name = "picturesque", version, about = "Pick highlight frames out of travel videos")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every frame and write the score report.
    Score(RunArgs),
    /// Run the full pipeline and export the highlight album.
    Album(RunArgs),
    /// GPS node aggregation and importance intervals.
    #[command(subcommand)]
    Geo(GeoCommand),
    /// Uniform baseline selections.
    Baseline(BaselineArgs),
    /// Crop-improvement experiment on a photo dataset.
    EvalCrops(EvalArgs),
    /// Print every score recorded for one frame.
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON pipeline configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Stage cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Disable stage caching.
    #[arg(long, conflicts_with = "cache")]
    no_cache: bool,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Longest frame side used for analysis.
    #[arg(long)]
    max_side: Option<u32>,
    /// Shot window in frames.
    #[arg(long)]
    window: Option<usize>,
    /// Shot threshold on the appearance score.
    #[arg(long)]
    beta: Option<f64>,
    /// Shortest shot a threshold breach may end; 1 disables the debounce.
    #[arg(long)]
    min_shot_len: Option<usize>,
    /// Head-tilt window in frames (odd).
    #[arg(long)]
    tilt_window: Option<usize>,
    /// Composition weight.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Symmetry weight.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Album entries allowed per shot.
    #[arg(long)]
    per_shot_cap: Option<usize>,
    /// A level substitute must keep (1 - delta) of the final score.
    #[arg(long)]
    delta: Option<f64>,
    /// JSON color-bin table replacing the built-in one.
    #[arg(long)]
    color_bins: Option<PathBuf>,
    /// Region merge threshold in LAB units.
    #[arg(long)]
    coarseness: Option<f64>,
    /// Node radius in km at walking speed.
    #[arg(long)]
    d_max: Option<f64>,
    /// Node radius floor in km.
    #[arg(long)]
    d_min: Option<f64>,
    /// Absolute node score threshold.
    #[arg(long, conflicts_with = "percentile")]
    threshold: Option<f64>,
    /// Node score threshold as a percentile of known scores.
    #[arg(long)]
    percentile: Option<f64>,
    /// Category filter for online POI lookups.
    #[arg(long)]
    poi_category: Option<String>,
    /// Write segment label maps under <output>/debug.
    #[arg(long)]
    debug_segments: bool,
    /// Write symmetry overlays under <output>/debug.
    #[arg(long)]
    debug_symmetry: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Corpus manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Album size.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    poi: PoiArgs,
}

#[derive(Args, Clone)]
struct PoiArgs {
    /// POI cache directory (defaults to <cache>/poi).
    #[arg(long)]
    poi_cache: Option<PathBuf>,
    /// Query the online POI provider for nodes missing from the cache.
    #[arg(long)]
    online: bool,
}

#[derive(Subcommand)]
enum GeoCommand {
    /// Aggregate a track into nodes and print them as GeoJSON.
    Nodes {
        #[arg(long)]
        track: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        d_max: f64,
        #[arg(long, default_value_t = 0.5)]
        d_min: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score nodes from the POI cache and print the importance intervals.
    Score {
        #[arg(long)]
        track: PathBuf,
        /// POI cache directory.
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value_t = 1.0, conflicts_with = "percentile")]
        threshold: f64,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long, default_value_t = 10.0)]
        d_max: f64,
        #[arg(long, default_value_t = 0.5)]
        d_min: f64,
        /// POI search radius in km.
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long)]
        online: bool,
        /// Category filter for online lookups.
        #[arg(long)]
        category: Option<String>,
        /// Write scored nodes as GeoJSON here.
        #[arg(long)]
        nodes_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMode {
    Geo,
    Chrono,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    mode: BaselineMode,
    #[arg(long)]
    x: usize,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    poi: PoiArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory with one sub-directory per case.
    #[arg(long)]
    dataset: PathBuf,
    /// Also sweep lambda1 over 0, 0.1, ..., 1.
    #[arg(long)]
    sweep: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct InspectArgs {
    /// `source:index`, or a bare index when unambiguous.
    #[arg(long)]
    frame: String,
    /// Score report to read (defaults to <output>/score_report.json).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    output: PathBuf,
}

fn build_config(a: &ConfigArgs) -> Result<PipelineConfig, Error> {
    let mut c = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &a.output {
        c.output_dir = v.clone();
    }
    if let Some(v) = &a.cache {
        c.cache_dir = Some(v.clone());
    } else if a.no_cache {
        c.cache_dir = None;
    } else if c.cache_dir.is_none() {
        c.cache_dir = Some(c.output_dir.join("cache"));
    }
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(c.parallelism, a.parallelism);
    set!(c.analysis_max_side, a.max_side);
    set!(c.shots.window, a.window);
    set!(c.shots.beta, a.beta);
    set!(c.shots.min_shot_len, a.min_shot_len);
    set!(c.tilt.window, a.tilt_window);
    set!(c.rank.lambda1, a.lambda1);
    set!(c.rank.lambda2, a.lambda2);
    set!(c.rank.per_shot_cap, a.per_shot_cap);
    set!(c.rank.delta, a.delta);
    set!(c.aesthetics.segmentation.coarseness, a.coarseness);
    set!(c.geo.d_max_km, a.d_max);
    set!(c.geo.d_min_km, a.d_min);
    if let Some(p) = &a.color_bins {
        c.color_bins = Some(p.clone());
    }
    if let Some(cat) = &a.poi_category {
        c.geo.poi_category = Some(cat.clone());
    }
    if let Some(t) = a.threshold {
        c.geo.node_score_threshold = NodeThreshold::Absolute(t);
    }
    if let Some(p) = a.percentile {
        c.geo.node_score_threshold = NodeThreshold::Percentile(p);
    }
    c.debug.segment_maps |= a.debug_segments;
    c.debug.symmetry_overlays |= a.debug_symmetry;
    c.validate()?;
    Ok(c)
}

#[cfg(feature = "yelp")]
fn online_client(category: Option<String>) -> Result<Box<dyn PoiClient>, Error> {
    let key = std::env::var("YELP_API_KEY")
        .map_err(|_| Error::InvalidInput("--online needs YELP_API_KEY in the environment".into()))?;
    Ok(Box::new(picturesque::geo::YelpClient::new(key, category)))
}

#[cfg(not(feature = "yelp"))]
fn online_client(_category: Option<String>) -> Result<Box<dyn PoiClient>, Error> {
    Err(Error::InvalidInput("this build has no online POI provider; rebuild with --features yelp".into()))
}

fn poi_client(online: bool, geo: &GeoConfig) -> Result<Box<dyn PoiClient>, Error> {
    if online {
        online_client(geo.poi_category.clone())
    } else {
        Ok(Box::new(OfflineClient))
    }
}

fn write_or_print(out: Option<&Path>, value: &serde_json::Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_command(args: RunArgs, export: bool) -> Result<(), Error> {
    let mut cfg = build_config(&args.cfg)?;
    if let Some(k) = args.k {
        cfg.rank.album_size = k;
    }
    cfg.validate()?;
    let client = poi_client(args.poi.online, &cfg.geo)?;
    let options = PipelineOptions {
        poi_client: Some(client.as_ref()),
        poi_cache_dir: args.poi.poi_cache.clone(),
        export_album: export,
    };
    let out = run_pipeline(&args.manifest, &cfg, &options)?;
    let hits = out.stages.iter().filter(|s| s.status == picturesque::pipeline::StageStatus::CacheHit).count();
    log::info!("{} of {} stages served from cache", hits, out.stages.len());
    eprintln!(
        "scored {} frames in {} shots; report: {}",
        out.report.frames.len(),
        out.report.shot_count,
        out.report_path.display()
    );
    if let Some(p) = out.album_path {
        eprintln!("album of {} frames: {}", out.album.entries.len(), p.display());
    }
    Ok(())
}

fn geo_command(cmd: GeoCommand) -> Result<(), Error> {
    match cmd {
        GeoCommand::Nodes { track, d_max, d_min, out } => {
            let cfg = GeoConfig { d_max_km: d_max, d_min_km: d_min, ..Default::default() };
            let points = read_track(&track)?;
            let nodes = aggregate_nodes(&points, &cfg)?;
            write_or_print(out.as_deref(), &nodes_to_geojson(&nodes))
        }
        GeoCommand::Score { track, cache, threshold, percentile, d_max, d_min, radius, online, category, nodes_out, out } => {
            let cfg = GeoConfig {
                d_max_km: d_max,
                d_min_km: d_min,
                poi_radius_km: radius,
                poi_category: category,
                node_score_threshold: match percentile {
                    Some(p) => NodeThreshold::Percentile(p),
                    None => NodeThreshold::Absolute(threshold),
                },
                ..Default::default()
            };
            cfg.validate()?;
            let client = poi_client(online, &cfg)?;
            let outcome = compute_geo(&track, &cfg, client.as_ref(), &cache)?;
            if let Some(p) = nodes_out {
                write_or_print(Some(&p), &nodes_to_geojson(&outcome.nodes))?;
            }
            let value = serde_json::json!({
                "threshold": outcome.threshold,
                "nodes": outcome.nodes.len(),
                "unknown_score_nodes": outcome.lookup_failures,
                "intervals": outcome.intervals,
            });
            write_or_print(out.as_deref(), &value)
        }
    }
}

fn frame_refs(frames: &[FrameEntry], picks: &[usize]) -> serde_json::Value {
    serde_json::Value::Array(
        picks
            .iter()
            .map(|&i| {
                let f = &frames[i];
                serde_json::json!({
                    "source_id": f.source_id,
                    "frame_index": f.index,
                    "timestamp": f.timestamp,
                    "path": f.path,
                })
            })
            .collect(),
    )
}

fn baseline_command(args: BaselineArgs) -> Result<(), Error> {
    let cfg = build_config(&args.cfg)?;
    let manifest = CorpusManifest::load(&args.manifest)?;
    let frames = list_frames(&manifest)?;
    let (picks, frames) = match args.mode {
        BaselineMode::Geo => {
            let track_path = manifest.gps_track.as_ref().ok_or_else(|| {
                Error::InvalidInput("the manifest has no GPS track; use --mode chrono".into())
            })?;
            let track = read_track(track_path)?;
            (baseline_geo_uniform(&track, &frames, args.x)?, frames)
        }
        BaselineMode::Chrono => match &manifest.gps_track {
            Some(track_path) => {
                let client = poi_client(args.poi.online, &cfg.geo)?;
                let poi_dir = args
                    .poi
                    .poi_cache
                    .clone()
                    .or_else(|| cfg.cache_dir.as_ref().map(|d| d.join("poi")))
                    .unwrap_or_else(|| cfg.output_dir.join("poi-cache"));
                let geo = compute_geo(track_path, &cfg.geo, client.as_ref(), &poi_dir)?;
                let kept = filter_entries(frames, &geo.intervals);
                (baseline_chrono_uniform(&kept, Some(&geo.intervals), args.x)?, kept)
            }
            None => (baseline_chrono_uniform(&frames, None, args.x)?, frames),
        },
    };
    write_or_print(args.out.as_deref(), &frame_refs(&frames, &picks))
}

fn eval_command(args: EvalArgs) -> Result<(), Error> {
    let cfg = build_config(&args.cfg)?;
    let table = cfg.color_table()?;
    let cases = load_dataset(&args.dataset)?;
    let scored = score_cases(&cases, &cfg.aesthetics, &table, cfg.analysis_max_side)?;
    let report = improvement_from_scores(&scored, cfg.rank.lambda1, cfg.rank.lambda2);
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let value = serde_json::json!({ "config": cfg.scoring_config(), "report": report, "cases": scored });
    write_or_print(Some(&out.join("crop_report.json")), &value)?;
    eprintln!(
        "{} cases ({} excluded): final {:.2}%, comp {:.2}%, sym {:.2}%, vib {:.2}%",
        report.total, report.excluded, report.final_pct, report.comp_pct, report.sym_pct, report.vib_pct
    );
    if args.sweep {
        let sweep = lambda_sweep_from_scores(&scored, &default_lambda_grid())?;
        write_or_print(Some(&out.join("sweep.json")), &serde_json::to_value(&sweep).expect("sweep serializes"))?;
        let csv_path = out.join("sweep.csv");
        std::fs::write(&csv_path, sweep.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        for p in &sweep.points {
            eprintln!("lambda1 {:.1}: final {:.2}%", p.lambda1, p.final_pct);
        }
    }
    Ok(())
}

fn inspect_command(args: InspectArgs) -> Result<(), Error> {
    let path = args.report.unwrap_or_else(|| args.output.join("score_report.json"));
    let report = ScoreReport::load(&path)?;
    let frame = report
        .find_frame(&args.frame)
        .ok_or_else(|| Error::InvalidInput(format!("no frame `{}` in {}", args.frame, path.display())))?;
    write_or_print(None, &serde_json::to_value(frame).expect("frame serializes"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        "error"
    } else {
        match cli.verbose {
            0 => "warn",
            1 => "info",
            _ => "debug",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Score(a) => run_command(a, false),
        Command::Album(a) => run_command(a, true),
        Command::Geo(g) => geo_command(g),
        Command::Baseline(b) => baseline_command(b),
        Command::EvalCrops(e) => eval_command(e),
        Command::Inspect(i) => inspect_command(i),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
