//! Output checkers written against the formats themselves rather than the
//! library's serializers.

#![allow(dead_code)]

use serde_json::Value;

/// Structural RFC 7946 check for a FeatureCollection of Point features.
/// Returns the features' (lon, lat) pairs.
pub fn geojson_points(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let doc: Value = serde_json::from_str(text).map_err(|e| format!("not JSON: {e}"))?;
    let obj = doc.as_object().ok_or("top level is not an object")?;
    if obj.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err("type is not FeatureCollection".into());
    }
    let features = obj.get("features").and_then(Value::as_array).ok_or("features is not an array")?;
    let mut points = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let f = f.as_object().ok_or(format!("feature {i} is not an object"))?;
        if f.get("type").and_then(Value::as_str) != Some("Feature") {
            return Err(format!("feature {i}: type is not Feature"));
        }
        match f.get("properties") {
            Some(Value::Object(_)) | Some(Value::Null) => {}
            _ => return Err(format!("feature {i}: properties must be an object or null")),
        }
        let g = f.get("geometry").and_then(Value::as_object).ok_or(format!("feature {i}: no geometry"))?;
        if g.get("type").and_then(Value::as_str) != Some("Point") {
            return Err(format!("feature {i}: geometry is not a Point"));
        }
        let c = g.get("coordinates").and_then(Value::as_array).ok_or(format!("feature {i}: no coordinates"))?;
        if c.len() < 2 || c.len() > 3 {
            return Err(format!("feature {i}: position needs 2 or 3 numbers"));
        }
        let lon = c[0].as_f64().ok_or(format!("feature {i}: longitude is not a number"))?;
        let lat = c[1].as_f64().ok_or(format!("feature {i}: latitude is not a number"))?;
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(format!("feature {i}: position ({lon}, {lat}) out of range"));
        }
        points.push((lon, lat));
    }
    Ok(points)
}

/// Parses an SVG document and returns the number of circle elements.
pub fn svg_circle_count(text: &str) -> Result<usize, String> {
    let doc = roxmltree::Document::parse(text).map_err(|e| e.to_string())?;
    let root = doc.root_element();
    if root.tag_name().name() != "svg" || root.tag_name().namespace() != Some("http://www.w3.org/2000/svg") {
        return Err("root element is not an SVG svg element".into());
    }
    Ok(root.descendants().filter(|n| n.has_tag_name("circle")).count())
}

/// Parses `bucket_lower_km,count` rows.
pub fn histogram_rows(text: &str) -> Result<Vec<(u64, usize)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("bucket_lower_km,count") {
        return Err("bad header".into());
    }
    lines
        .map(|l| {
            let (a, b) = l.split_once(',').ok_or(format!("bad row {l:?}"))?;
            Ok((a.parse().map_err(|_| format!("bad bucket {a:?}"))?, b.parse().map_err(|_| format!("bad count {b:?}"))?))
        })
        .collect()
}
