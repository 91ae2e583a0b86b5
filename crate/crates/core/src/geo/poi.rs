//! Points of interest around node anchors, with an on-disk cache so reruns
//! never need the network.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{haversine_unchecked, score_pois, Coordinate, GeoNode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub name: String,
    pub review_count: u64,
    /// Average rating, 0..=5.
    pub rating: f64,
    pub location: Coordinate,
}

impl PoiRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=5.0).contains(&self.rating) {
            return Err(Error::InvalidInput(format!(
                "POI `{}` rating {} outside 0..=5",
                self.name, self.rating
            )));
        }
        self.location.validate()
    }
}

/// Source of POIs near a location. Score magnitudes depend on the provider.
pub trait PoiClient: Sync {
    fn search(&self, center: Coordinate, radius_km: f64) -> Result<Vec<PoiRecord>>;
}

/// Client for cache-only runs; every lookup fails.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineClient;

impl PoiClient for OfflineClient {
    fn search(&self, center: Coordinate, _radius_km: f64) -> Result<Vec<PoiRecord>> {
        Err(Error::Lookup(format!(
            "no network client configured and no cache entry for ({}, {})",
            center.lat, center.lon
        )))
    }
}

/// In-memory POI list filtered by distance. Useful for fixtures and for
/// providers exported to a flat file.
#[derive(Debug, Default, Clone)]
pub struct StaticPoiClient {
    pub pois: Vec<PoiRecord>,
}

impl StaticPoiClient {
    pub fn new(pois: Vec<PoiRecord>) -> Self {
        StaticPoiClient { pois }
    }
}

impl PoiClient for StaticPoiClient {
    fn search(&self, center: Coordinate, radius_km: f64) -> Result<Vec<PoiRecord>> {
        Ok(self
            .pois
            .iter()
            .filter(|p| haversine_unchecked(center, p.location) <= radius_km)
            .cloned()
            .collect())
    }
}

/// One cached lookup, stored as its own JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiCacheEntry {
    pub lat: f64,
    pub lon: f64,
    pub radius_km: f64,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
    pub pois: Vec<PoiRecord>,
}

/// Directory of cached lookups keyed by rounded `(lat, lon, radius)`.
///
/// Reads are lock-free; writes are serialized and land atomically via
/// rename, so concurrent readers never see partial files.
#[derive(Debug)]
pub struct PoiCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

fn round_key(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    // "-0.0000" and "0.0000" must be the same key
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

impl PoiCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PoiCache {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(center: Coordinate, radius_km: f64) -> String {
        format!(
            "poi_{}_{}_{}",
            round_key(center.lat, 4),
            round_key(center.lon, 4),
            round_key(radius_km, 3)
        )
    }

    pub fn path_for(&self, center: Coordinate, radius_km: f64) -> PathBuf {
        self.dir.join(format!("{}.json", Self::key(center, radius_km)))
    }

    pub fn get(&self, center: Coordinate, radius_km: f64) -> Result<Option<PoiCacheEntry>> {
        let path = self.path_for(center, radius_km);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let entry: PoiCacheEntry = serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        for p in &entry.pois {
            p.validate()?;
        }
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &PoiCacheEntry) -> Result<PathBuf> {
        let center = Coordinate::new(entry.lat, entry.lon);
        let path = self.path_for(center, entry.radius_km);
        let json = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        crate::util::write_atomic(&path, &json)?;
        Ok(path)
    }
}

/// POIs around `node.anchor`, served from the cache when possible.
pub fn fetch_pois(
    node: &GeoNode,
    client: &dyn PoiClient,
    cache: &PoiCache,
    radius_km: f64,
) -> Result<Vec<PoiRecord>> {
    let center = node.anchor.coordinate();
    if let Some(entry) = cache.get(center, radius_km)? {
        return Ok(entry.pois);
    }
    let pois = client.search(center, radius_km)?;
    for p in &pois {
        p.validate()?;
    }
    let fetched_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    cache.put(&PoiCacheEntry {
        lat: center.lat,
        lon: center.lon,
        radius_km,
        fetched_at,
        pois: pois.clone(),
    })?;
    Ok(pois)
}

/// Looks up and scores every node in parallel. Nodes whose lookup fails keep
/// `score == None`; the number of such failures is returned.
pub fn score_nodes(
    nodes: &mut [GeoNode],
    client: &dyn PoiClient,
    cache: &PoiCache,
    radius_km: f64,
) -> usize {
    let results: Vec<Result<Vec<PoiRecord>>> = nodes
        .par_iter()
        .map(|n| fetch_pois(n, client, cache, radius_km))
        .collect();
    let mut failures = 0;
    for (node, res) in nodes.iter_mut().zip(results) {
        match res {
            Ok(pois) => {
                node.score = Some(score_pois(&pois));
                node.pois = pois;
            }
            Err(e) => {
                log::warn!(
                    "POI lookup for node at ({:.5}, {:.5}) failed: {e}",
                    node.anchor.lat,
                    node.anchor.lon
                );
                node.score = None;
                node.pois.clear();
                failures += 1;
            }
        }
    }
    failures
}

/// Yelp Fusion business search.
#[cfg(feature = "yelp")]
pub struct YelpClient {
    api_key: String,
    category: Option<String>,
    http: reqwest::blocking::Client,
}

#[cfg(feature = "yelp")]
impl YelpClient {
    const ENDPOINT: &'static str = "https://api.yelp.com/v3/businesses/search";
    /// The API caps the radius at 40 km.
    const MAX_RADIUS_M: u32 = 40_000;

    pub fn new(api_key: impl Into<String>, category: Option<String>) -> Self {
        YelpClient {
            api_key: api_key.into(),
            category,
            http: reqwest::blocking::Client::new(),
        }
    }
}

#[cfg(feature = "yelp")]
impl PoiClient for YelpClient {
    fn search(&self, center: Coordinate, radius_km: f64) -> Result<Vec<PoiRecord>> {
        #[derive(Deserialize)]
        struct Coords {
            latitude: f64,
            longitude: f64,
        }
        #[derive(Deserialize)]
        struct Business {
            name: String,
            review_count: u64,
            rating: f64,
            coordinates: Coords,
        }
        #[derive(Deserialize)]
        struct Response {
            businesses: Vec<Business>,
        }

        let radius_m = ((radius_km * 1000.0).round() as u32).min(Self::MAX_RADIUS_M);
        let mut query = vec![
            ("latitude", center.lat.to_string()),
            ("longitude", center.lon.to_string()),
            ("radius", radius_m.to_string()),
            ("limit", "50".to_string()),
        ];
        if let Some(cat) = &self.category {
            query.push(("categories", cat.clone()));
        }
        let resp: Response = self
            .http
            .get(Self::ENDPOINT)
            .bearer_auth(&self.api_key)
            .query(&query)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| Error::Lookup(e.to_string()))?;
        Ok(resp
            .businesses
            .into_iter()
            .map(|b| PoiRecord {
                name: b.name,
                review_count: b.review_count,
                rating: b.rating,
                location: Coordinate::new(b.coordinates.latitude, b.coordinates.longitude),
            })
            .collect())
    }
}
