//! Coordinate math and the map/report outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::exec::Execution;
use crate::wikidata::Qid;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DEFAULT_BUCKET_KM: f64 = 500.0;
pub const DEFAULT_MAP_WIDTH: u32 = 1600;

/// Approximate centroid of Sweden, the default reference for distance reports.
pub const SWEDEN_CENTER: GeoPoint = GeoPoint { lat: 62.0, lon: 15.0 };

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("bucket width must be positive, got {0}")]
    Bucket(f64),
}

/// WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(GeoError::Latitude(lat));
        }
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
            return Err(GeoError::Longitude(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// A linked entry with its coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedPlace {
    pub entry_id: String,
    pub headword: String,
    pub qid: Qid,
    pub point: GeoPoint,
    pub similarity: f64,
}

/// Great-circle distance on a sphere of radius 6371 km.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub reference: GeoPoint,
    pub bucket_km: f64,
    /// Bucket index `floor(distance / bucket_km)` to number of points.
    pub counts: BTreeMap<u64, usize>,
}

impl DistanceHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// CSV with header `bucket_lower_km,count`, one row per bucket from 0 up
    /// to the farthest occupied one, empty buckets included.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_lower_km,count\n");
        if let Some(&last) = self.counts.keys().next_back() {
            for idx in 0..=last {
                let lower = idx as f64 * self.bucket_km;
                let _ = writeln!(out, "{},{}", lower, self.counts.get(&idx).copied().unwrap_or(0));
            }
        }
        out
    }
}

pub fn distance_histogram(points: &[GeoPoint], reference: GeoPoint, bucket_km: f64) -> Result<DistanceHistogram, GeoError> {
    distance_histogram_with(points, reference, bucket_km, Execution::default())
}

pub fn distance_histogram_with(
    points: &[GeoPoint],
    reference: GeoPoint,
    bucket_km: f64,
    exec: Execution,
) -> Result<DistanceHistogram, GeoError> {
    if !(bucket_km > 0.0 && bucket_km.is_finite()) {
        return Err(GeoError::Bucket(bucket_km));
    }
    let buckets = exec.map(points, |p| (haversine_km(reference, *p) / bucket_km).floor() as u64);
    let mut counts = BTreeMap::new();
    for b in buckets {
        *counts.entry(b).or_insert(0) += 1;
    }
    Ok(DistanceHistogram { reference, bucket_km, counts })
}

/// RFC 7946 FeatureCollection with `[lon, lat]` point geometries.
pub fn to_geojson(places: &[LinkedPlace]) -> Value {
    let features: Vec<Value> = places
        .iter()
        .map(|p| {
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [p.point.lon, p.point.lat] },
                "properties": {
                    "entry_id": p.entry_id,
                    "headword": p.headword,
                    "qid": p.qid.to_string(),
                    "similarity": p.similarity,
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn geojson_string(places: &[LinkedPlace]) -> String {
    let mut text = serde_json::to_string_pretty(&to_geojson(places)).expect("GeoJSON values always serialize");
    text.push('\n');
    text
}

/// Equirectangular projection onto a `width × width/2` canvas.
pub fn project(point: GeoPoint, width: f64) -> (f64, f64) {
    ((point.lon + 180.0) / 360.0 * width, (90.0 - point.lat) / 180.0 * (width / 2.0))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter map of `places` as an SVG 1.1 document, with a 30° graticule.
/// Circles are ordered by entry id, so equal inputs give identical bytes.
pub fn render_svg_map(places: &[LinkedPlace], width_px: u32) -> String {
    let w = f64::from(width_px);
    let h = w / 2.0;
    let mut sorted: Vec<&LinkedPlace> = places.iter().collect();
    sorted.sort_by(|a, b| a.entry_id.cmp(&b.entry_id));

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#f4f1ea"/>"##);
    let _ = writeln!(svg, r##"<g id="graticule" stroke="#c8c2b4" stroke-width="0.5">"##);
    for lon in (-180..=180).step_by(30) {
        let x = (f64::from(lon) + 180.0) / 360.0 * w;
        let _ = writeln!(svg, r#"<line x1="{x:.3}" y1="0" x2="{x:.3}" y2="{h}"/>"#);
    }
    for lat in (-90..=90).step_by(30) {
        let y = (90.0 - f64::from(lat)) / 180.0 * h;
        let _ = writeln!(svg, r#"<line x1="0" y1="{y:.3}" x2="{w}" y2="{y:.3}"/>"#);
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r##"<g id="places" fill="#b03a2e" fill-opacity="0.6">"##);
    for p in sorted {
        let (x, y) = project(p.point, w);
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.3}" cy="{y:.3}" r="2"><title>{} ({})</title></circle>"#,
            xml_escape(&p.headword),
            p.qid
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, "</svg>");
    svg
}
