//! GPS track aggregation and location importance.
//!
//! A track is split into nodes: a node starts at an anchor point and absorbs
//! every following point until one lies farther from the anchor than a
//! speed-scaled radius. Nodes are then scored from nearby points of interest
//! and the low-scoring ones are turned into time intervals to drop.

mod poi;
mod track;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use poi::{
    fetch_pois, score_nodes, OfflineClient, PoiCache, PoiCacheEntry, PoiClient, PoiRecord,
    StaticPoiClient,
};
#[cfg(feature = "yelp")]
pub use poi::YelpClient;
pub use track::{derive_speeds, parse_csv_track, parse_gpx_track, read_track};

/// Mean Earth radius (IUGG), kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub lat: f64,
    pub lon: f64,
}

impl Coordinate {
    pub fn new(lat: f64, lon: f64) -> Self {
        Coordinate { lat, lon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::InvalidInput(format!(
                "coordinate out of range: lat {}, lon {}",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// One timestamped GPS sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub lat: f64,
    pub lon: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    /// Meters per second. Filled in from neighbours when the source omits it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elevation: Option<f64>,
}

impl GpsPoint {
    pub fn new(lat: f64, lon: f64, timestamp: f64) -> Self {
        GpsPoint {
            lat,
            lon,
            timestamp,
            speed: None,
            elevation: None,
        }
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = Some(speed);
        self
    }

    pub fn coordinate(&self) -> Coordinate {
        Coordinate::new(self.lat, self.lon)
    }
}

/// Threshold applied to node scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum NodeThreshold {
    /// Keep nodes scoring at least this value.
    Absolute(f64),
    /// Keep nodes at or above this percentile (0..=100) of the known scores.
    Percentile(f64),
}

impl Default for NodeThreshold {
    fn default() -> Self {
        NodeThreshold::Absolute(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    pub d_max_km: f64,
    pub d_min_km: f64,
    /// Speed (m/s) that maps to a radius multiplier of one. Speeds are
    /// divided by this before multiplying `d_max_km`.
    pub reference_speed_ms: f64,
    pub node_score_threshold: NodeThreshold,
    /// Search radius for points of interest around a node anchor.
    pub poi_radius_km: f64,
    pub poi_category: Option<String>,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig {
            d_max_km: 10.0,
            d_min_km: 0.5,
            reference_speed_ms: 1.4,
            node_score_threshold: NodeThreshold::default(),
            poi_radius_km: 0.5,
            poi_category: None,
        }
    }
}

impl GeoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max_km > 0.0) {
            return Err(Error::InvalidInput("d_max must be positive".into()));
        }
        if !(self.d_min_km >= 0.0) {
            return Err(Error::InvalidInput("d_min must be non-negative".into()));
        }
        if !(self.reference_speed_ms > 0.0) {
            return Err(Error::InvalidInput(
                "reference speed must be positive".into(),
            ));
        }
        if !(self.poi_radius_km > 0.0) {
            return Err(Error::InvalidInput("POI radius must be positive".into()));
        }
        if let NodeThreshold::Percentile(p) = self.node_score_threshold {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::InvalidInput(format!("percentile {p} not in 0..=100")));
            }
        }
        Ok(())
    }

    /// Distance a point moving at `speed_ms` may be from the anchor before a
    /// new node starts.
    pub fn break_radius_km(&self, speed_ms: f64) -> f64 {
        speed_ms.max(0.0) / self.reference_speed_ms * self.d_max_km + self.d_min_km
    }
}

/// A cluster of consecutive track points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoNode {
    pub anchor: GpsPoint,
    pub members: Vec<GpsPoint>,
    pub time_span: (f64, f64),
    /// `None` until scored, and left `None` when the POI lookup failed.
    pub score: Option<f64>,
    pub pois: Vec<PoiRecord>,
}

impl GeoNode {
    fn start(anchor: GpsPoint) -> Self {
        GeoNode {
            anchor,
            members: vec![anchor],
            time_span: (anchor.timestamp, anchor.timestamp),
            score: None,
            pois: Vec::new(),
        }
    }

    fn push(&mut self, p: GpsPoint) {
        self.time_span.1 = p.timestamp;
        self.members.push(p);
    }
}

/// Great-circle distance in kilometers.
pub fn haversine_km(a: &GpsPoint, b: &GpsPoint) -> Result<f64> {
    let (a, b) = (a.coordinate(), b.coordinate());
    a.validate()?;
    b.validate()?;
    Ok(haversine_unchecked(a, b))
}

pub(crate) fn haversine_unchecked(a: Coordinate, b: Coordinate) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Splits a time-sorted track into location nodes.
///
/// A point `p` opens a new node when its distance to the current anchor
/// exceeds `speed(p) / reference_speed * d_max + d_min`.
pub fn aggregate_nodes(track: &[GpsPoint], cfg: &GeoConfig) -> Result<Vec<GeoNode>> {
    if track.is_empty() {
        return Err(Error::EmptyInput("GPS track has no points".into()));
    }
    cfg.validate()?;
    track::validate_track(track)?;

    let mut points = track.to_vec();
    derive_speeds(&mut points);

    let mut nodes = Vec::new();
    let mut current = GeoNode::start(points[0]);
    for &p in &points[1..] {
        let dist = haversine_unchecked(current.anchor.coordinate(), p.coordinate());
        if dist > cfg.break_radius_km(p.speed.unwrap_or(0.0)) {
            nodes.push(std::mem::replace(&mut current, GeoNode::start(p)));
        } else {
            current.push(p);
        }
    }
    nodes.push(current);
    Ok(nodes)
}

/// Mean of `review_count * rating` over the node's POIs; zero when there are none.
pub fn score_node(node: &GeoNode) -> f64 {
    score_pois(&node.pois)
}

pub(crate) fn score_pois(pois: &[PoiRecord]) -> f64 {
    if pois.is_empty() {
        return 0.0;
    }
    let total: f64 = pois.iter().map(|p| p.review_count as f64 * p.rating).sum();
    total / pois.len() as f64
}

/// Resolves a threshold against the known node scores.
pub fn resolve_threshold(nodes: &[GeoNode], threshold: NodeThreshold) -> f64 {
    match threshold {
        NodeThreshold::Absolute(t) => t,
        NodeThreshold::Percentile(p) => {
            let mut known: Vec<f64> = nodes.iter().filter_map(|n| n.score).collect();
            if known.is_empty() {
                return 0.0;
            }
            known.sort_by(f64::total_cmp);
            // nearest-rank percentile
            let rank = ((p / 100.0) * known.len() as f64).ceil() as usize;
            known[rank.clamp(1, known.len()) - 1]
        }
    }
}

/// Time intervals covered by nodes whose score reaches `threshold`.
///
/// Nodes with an unknown score count as passing. Consecutive passing nodes
/// are joined into one interval, as are overlapping or touching spans.
pub fn importance_intervals(nodes: &[GeoNode], threshold: f64) -> Vec<(f64, f64)> {
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for node in nodes {
        let passes = node.score.map_or(true, |s| s >= threshold);
        if passes {
            open = Some(match open {
                Some((start, end)) => (start, end.max(node.time_span.1)),
                None => node.time_span,
            });
        } else if let Some(run) = open.take() {
            runs.push(run);
        }
    }
    runs.extend(open);

    runs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(runs.len());
    for (start, end) in runs {
        match merged.last_mut() {
            Some(last) if start <= last.1 => last.1 = last.1.max(end),
            _ => merged.push((start, end)),
        }
    }
    merged
}

/// GeoJSON FeatureCollection with one point feature per node anchor.
pub fn nodes_to_geojson(nodes: &[GeoNode]) -> serde_json::Value {
    let features: Vec<_> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            serde_json::json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [n.anchor.lon, n.anchor.lat],
                },
                "properties": {
                    "node": i,
                    "members": n.members.len(),
                    "start": n.time_span.0,
                    "end": n.time_span.1,
                    "score": n.score,
                    "pois": n.pois.len(),
                },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}
