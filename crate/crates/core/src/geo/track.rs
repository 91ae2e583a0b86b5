use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::{haversine_unchecked, GpsPoint};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct CsvRow {
    timestamp: f64,
    lat: f64,
    lon: f64,
    #[serde(default)]
    speed: Option<f64>,
    #[serde(default)]
    elevation: Option<f64>,
}

/// Reads a track from `.csv` or `.gpx`, chosen by extension.
pub fn read_track(path: &Path) -> Result<Vec<GpsPoint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let track = match ext.as_deref() {
        Some("gpx") => parse_gpx_track(file)?,
        Some("csv") => parse_csv_track(file)?,
        _ => {
            return Err(Error::InvalidInput(format!(
                "{}: expected a .csv or .gpx track",
                path.display()
            )))
        }
    };
    validate_track(&track)?;
    Ok(track)
}

/// CSV with header `timestamp,lat,lon[,speed][,elevation]`.
pub fn parse_csv_track<R: Read>(reader: R) -> Result<Vec<GpsPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut points = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::parse("GPS csv", e))?;
        points.push(GpsPoint {
            lat: row.lat,
            lon: row.lon,
            timestamp: row.timestamp,
            speed: row.speed,
            elevation: row.elevation,
        });
    }
    Ok(points)
}

/// GPX 1.1 track points (`trkpt` with `time`, optional `ele` and `speed`).
pub fn parse_gpx_track<R: Read>(reader: R) -> Result<Vec<GpsPoint>> {
    let gpx = gpx::read(reader).map_err(|e| Error::parse("GPX", e))?;
    let mut points = Vec::new();
    for track in &gpx.tracks {
        for segment in &track.segments {
            for wp in &segment.points {
                let time = wp
                    .time
                    .ok_or_else(|| Error::parse("GPX", "track point without <time>"))?;
                let time: time::OffsetDateTime = time.into();
                let loc = wp.point();
                points.push(GpsPoint {
                    lat: loc.y(),
                    lon: loc.x(),
                    timestamp: time.unix_timestamp_nanos() as f64 * 1e-9,
                    speed: wp.speed,
                    elevation: wp.elevation,
                });
            }
        }
    }
    Ok(points)
}

pub(crate) fn validate_track(track: &[GpsPoint]) -> Result<()> {
    for (i, p) in track.iter().enumerate() {
        p.coordinate().validate()?;
        if !p.timestamp.is_finite() {
            return Err(Error::InvalidInput(format!("point {i}: timestamp not finite")));
        }
        if let Some(s) = p.speed {
            if !(s >= 0.0) {
                return Err(Error::InvalidInput(format!("point {i}: negative speed {s}")));
            }
        }
        if i > 0 && p.timestamp < track[i - 1].timestamp {
            return Err(Error::InvalidInput(format!(
                "point {i}: timestamps must be non-decreasing"
            )));
        }
    }
    Ok(())
}

/// Fills missing speeds from consecutive points (meters per second).
///
/// A zero time step carries the previous speed over; the first point takes
/// the speed of the first segment.
pub fn derive_speeds(track: &mut [GpsPoint]) {
    let n = track.len();
    if n == 0 {
        return;
    }
    let mut derived = vec![0.0; n];
    for i in 1..n {
        let dt = track[i].timestamp - track[i - 1].timestamp;
        derived[i] = if dt > 0.0 {
            haversine_unchecked(track[i - 1].coordinate(), track[i].coordinate()) * 1000.0 / dt
        } else {
            derived[i - 1]
        };
    }
    if n > 1 {
        derived[0] = derived[1];
    }
    for (p, d) in track.iter_mut().zip(derived) {
        if p.speed.is_none() {
            p.speed = Some(d);
        }
    }
}
