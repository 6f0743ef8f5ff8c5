//! GeoJSON map layers and city boundary input.

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::features::{column_names, HOURS};
use crate::pipeline::RegionRecord;
use crate::region::{cell_boundary, GeoPolygon};

#[derive(Debug, Error)]
pub enum GeoJsonError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported GeoJSON: {0}")]
    Unsupported(String),
    #[error("malformed GeoJSON: {0}")]
    Malformed(String),
}

/// Which attribute set a layer carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportLevel {
    /// Cluster label of the cut with this k.
    Cut(usize),
    /// The 34 raw counts plus the two whole-day aggregates.
    Features,
}

impl ExportLevel {
    /// Accepts `k3`, `k9`, ... and `features`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "features" {
            return Some(ExportLevel::Features);
        }
        s.strip_prefix('k').and_then(|k| k.parse().ok()).filter(|&k| k > 0).map(ExportLevel::Cut)
    }

    pub fn name(&self) -> String {
        match self {
            ExportLevel::Cut(k) => format!("k{k}"),
            ExportLevel::Features => "features".into(),
        }
    }
}

/// Closed [lon, lat] ring, counterclockwise.
fn hexagon_ring(record: &RegionRecord) -> Vec<Value> {
    let mut ring: Vec<Value> = cell_boundary(record.region.cell).iter().map(|&(lat, lon)| json!([lon, lat])).collect();
    ring.push(ring[0].clone());
    ring
}

fn feature(record: &RegionRecord, level: ExportLevel) -> Value {
    let mut props = Map::new();
    props.insert("city_id".into(), json!(record.region.city_id));
    props.insert("cell".into(), json!(record.region.cell.to_string()));
    match level {
        ExportLevel::Cut(k) => {
            props.insert("label".into(), json!(record.labels.get(&k)));
        }
        ExportLevel::Features => {
            for (name, v) in column_names().iter().zip(&record.raw) {
                props.insert(name.clone(), json!(v));
            }
            let trips: f64 = record.raw[..HOURS].iter().sum();
            let dirs: f64 = record.raw[HOURS..].iter().sum();
            props.insert("sum_trips".into(), json!(trips));
            props.insert("directions_whole_day".into(), json!(dirs));
        }
    }
    props.insert("typology_name".into(), json!(record.typology));
    json!({
        "type": "Feature",
        "geometry": { "type": "Polygon", "coordinates": [hexagon_ring(record)] },
        "properties": props,
    })
}

/// One Polygon feature per region. A missing label or typology is `null`.
pub fn export_geojson(records: &[RegionRecord], level: ExportLevel) -> Value {
    json!({
        "type": "FeatureCollection",
        "features": records.iter().map(|r| feature(r, level)).collect::<Vec<_>>(),
    })
}

pub fn export_geojson_string(records: &[RegionRecord], level: ExportLevel) -> String {
    let mut s = serde_json::to_string(&export_geojson(records, level)).expect("JSON values serialize");
    s.push('\n');
    s
}

fn ring(value: &Value) -> Result<Vec<(f64, f64)>, GeoJsonError> {
    let pts = value.as_array().ok_or_else(|| GeoJsonError::Malformed("ring is not an array".into()))?;
    let mut out = Vec::with_capacity(pts.len());
    for p in pts {
        match p.as_array().map(|a| a.as_slice()) {
            Some([lon, lat, ..]) => match (lon.as_f64(), lat.as_f64()) {
                (Some(lon), Some(lat)) => out.push((lat, lon)),
                _ => return Err(GeoJsonError::Malformed("non-numeric position".into())),
            },
            _ => return Err(GeoJsonError::Malformed("position needs two numbers".into())),
        }
    }
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    if out.len() < 3 {
        return Err(GeoJsonError::Malformed("ring has fewer than 3 distinct positions".into()));
    }
    Ok(out)
}

fn polygon(coords: &Value) -> Result<GeoPolygon, GeoJsonError> {
    let rings = coords.as_array().ok_or_else(|| GeoJsonError::Malformed("polygon coordinates".into()))?;
    let (first, rest) = rings
        .split_first()
        .ok_or_else(|| GeoJsonError::Malformed("polygon without rings".into()))?;
    Ok(GeoPolygon {
        exterior: ring(first)?,
        holes: rest.iter().map(ring).collect::<Result<_, _>>()?,
    })
}

fn collect(value: &Value, out: &mut Vec<GeoPolygon>) -> Result<(), GeoJsonError> {
    let kind = value.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = || value.get("coordinates").ok_or_else(|| GeoJsonError::Malformed(format!("{kind} without coordinates")));
    match kind {
        "FeatureCollection" => {
            let features = value
                .get("features")
                .and_then(Value::as_array)
                .ok_or_else(|| GeoJsonError::Malformed("FeatureCollection without features".into()))?;
            for f in features {
                collect(f, out)?;
            }
        }
        "Feature" => match value.get("geometry") {
            Some(Value::Null) | None => {}
            Some(g) => collect(g, out)?,
        },
        "GeometryCollection" => {
            for g in value.get("geometries").and_then(Value::as_array).into_iter().flatten() {
                collect(g, out)?;
            }
        }
        "Polygon" => out.push(polygon(coords()?)?),
        "MultiPolygon" => {
            for p in coords()?.as_array().ok_or_else(|| GeoJsonError::Malformed("MultiPolygon coordinates".into()))? {
                out.push(polygon(p)?);
            }
        }
        other => return Err(GeoJsonError::Unsupported(format!("geometry type `{other}`"))),
    }
    Ok(())
}

/// Every Polygon / MultiPolygon in a GeoJSON document (bare geometry,
/// Feature or FeatureCollection).
pub fn parse_boundary(text: &str) -> Result<Vec<GeoPolygon>, GeoJsonError> {
    let value: Value = serde_json::from_str(text)?;
    let mut out = Vec::new();
    collect(&value, &mut out)?;
    if out.is_empty() {
        return Err(GeoJsonError::Malformed("no polygons".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::region::{assign_cell, RegionKey};

    fn record(lat: f64, label: usize) -> RegionRecord {
        let mut raw = vec![0.0; 34];
        raw[0] = 3.0;
        raw[17] = 1.0;
        RegionRecord {
            region: RegionKey::new("wro", assign_cell(lat, 17.03, 8).unwrap()),
            raw,
            normalized: vec![0.0; 34],
            embedding: vec![0.0; 64],
            labels: BTreeMap::from([(3, label)]),
            typology: Some("hubs".into()),
        }
    }

    fn signed_area(ring: &[Value]) -> f64 {
        ring.windows(2)
            .map(|w| {
                let (a, b) = (&w[0], &w[1]);
                a[0].as_f64().unwrap() * b[1].as_f64().unwrap() - b[0].as_f64().unwrap() * a[1].as_f64().unwrap()
            })
            .sum::<f64>()
            / 2.0
    }

    #[test]
    fn collection_shape() {
        let recs: Vec<_> = (0..4).map(|i| record(51.08 + 0.01 * i as f64, i)).collect();
        let doc = export_geojson(&recs, ExportLevel::Cut(3));
        let features = doc["features"].as_array().unwrap();
        assert_eq!(doc["type"], "FeatureCollection");
        assert_eq!(features.len(), 4);
        for (f, r) in features.iter().zip(&recs) {
            let ring = f["geometry"]["coordinates"][0].as_array().unwrap();
            assert_eq!(ring.len(), 7);
            assert_eq!(ring[0], ring[6]);
            assert!(signed_area(ring) > 0.0, "exterior ring must be counterclockwise");
            assert_eq!(f["properties"]["cell"], r.region.cell.to_string());
            assert_eq!(f["properties"]["label"], r.labels[&3]);
            assert_eq!(f["properties"]["typology_name"], "hubs");
        }
        // A cut the records do not carry yields null labels.
        assert!(export_geojson(&recs, ExportLevel::Cut(9))["features"][0]["properties"]["label"].is_null());
    }

    #[test]
    fn features_layer() {
        let doc = export_geojson(&[record(51.1, 0)], ExportLevel::Features);
        let p = &doc["features"][0]["properties"];
        assert_eq!(p["trips_h06"], 3.0);
        assert_eq!(p["dirs_h06"], 1.0);
        assert_eq!(p["sum_trips"], 3.0);
        assert_eq!(p["directions_whole_day"], 1.0);
        assert!(p.get("label").is_none());
    }

    #[test]
    fn levels() {
        assert_eq!(ExportLevel::parse("k9"), Some(ExportLevel::Cut(9)));
        assert_eq!(ExportLevel::parse("features"), Some(ExportLevel::Features));
        assert_eq!(ExportLevel::parse("k0"), None);
        assert_eq!(ExportLevel::parse("x"), None);
        assert_eq!(ExportLevel::Cut(3).name(), "k3");
    }

    #[test]
    fn boundary_parsing() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{},"geometry":{"type":"Polygon","coordinates":[[[17,51],[17.1,51],[17.1,51.1],[17,51.1],[17,51]]]}},
            {"type":"Feature","properties":{},"geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1]]]]}}
        ]}"#;
        let polys = parse_boundary(text).unwrap();
        assert_eq!(polys.len(), 2);
        assert_eq!(polys[0].exterior.len(), 4);
        assert!(polys[0].contains(51.05, 17.05));
        assert!(!polys[0].contains(51.05, 17.2));
        assert!(parse_boundary(r#"{"type":"Point","coordinates":[0,0]}"#).is_err());
        assert!(parse_boundary(r#"{"type":"FeatureCollection","features":[]}"#).is_err());
        assert!(parse_boundary("nope").is_err());
    }
}
