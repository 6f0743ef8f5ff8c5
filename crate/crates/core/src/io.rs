//! Delimited-text stage artifacts.
//!
//! Every table starts with a header row. Regions are written as two columns,
//! `city_id` and `cell` (15 hex digits). Floats use the shortest text that
//! parses back to the same value, so files round-trip exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::features::{column_names, FeatureMatrix};
use crate::gtfs::{CheckStatus, DepartureEvent, Stop, ValidationReport};
use crate::matrix::Matrix;
use crate::region::{RegionError, RegionKey};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: u64, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, line: u64, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<(), IoError> {
    let mut inner = w.into_inner().map_err(|e| io_err(path)(e.into_error()))?;
    inner.flush().map_err(io_err(path))
}

struct Records {
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_records(path: &Path) -> Result<Records, IoError> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok(Records { headers, rows })
}

fn parse_key(path: &Path, line: u64, city: &str, cell: &str) -> Result<RegionKey, IoError> {
    let cell = cell
        .parse()
        .map_err(|e: RegionError| format_err(path, line, e.to_string()))?;
    Ok(RegionKey::new(city, cell))
}

fn parse_f64(path: &Path, line: u64, s: &str) -> Result<f64, IoError> {
    s.trim()
        .parse()
        .map_err(|_| format_err(path, line, format!("bad number `{s}`")))
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Region-keyed numeric table with the given value column names.
pub fn write_keyed_matrix(path: &Path, columns: &[String], rows: &[RegionKey], values: &Matrix, integers: bool) -> Result<(), IoError> {
    assert_eq!(rows.len(), values.rows());
    assert_eq!(columns.len(), values.cols());
    let mut w = writer(path)?;
    let mut header = vec!["city_id".to_string(), "cell".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for (key, row) in rows.iter().zip(values.iter_rows()) {
        let mut rec = vec![key.city_id.clone(), key.cell.to_string()];
        rec.extend(row.iter().map(|&v| if integers { format!("{}", v as u64) } else { fmt_f64(v) }));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    finish(w, path)
}

/// Returns (value column names, rows, values).
pub fn read_keyed_matrix(path: &Path) -> Result<(Vec<String>, Vec<RegionKey>, Matrix), IoError> {
    let recs = read_records(path)?;
    if recs.headers.len() < 2 || recs.headers[0] != "city_id" || recs.headers[1] != "cell" {
        return Err(format_err(path, 1, "header must start with city_id,cell"));
    }
    let cols = recs.headers.len() - 2;
    let mut keys = Vec::with_capacity(recs.rows.len());
    let mut data = Vec::with_capacity(recs.rows.len() * cols);
    for (line, rec) in &recs.rows {
        if rec.len() != cols + 2 {
            return Err(format_err(path, *line, format!("expected {} fields, got {}", cols + 2, rec.len())));
        }
        keys.push(parse_key(path, *line, &rec[0], &rec[1])?);
        for v in rec.iter().skip(2) {
            data.push(parse_f64(path, *line, v)?);
        }
    }
    let n = keys.len();
    Ok((recs.headers[2..].to_vec(), keys, Matrix::from_vec(n, cols, data)))
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<(), IoError> {
    write_keyed_matrix(path, &column_names(), &m.rows, &m.values, true)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix, IoError> {
    let (cols, rows, values) = read_keyed_matrix(path)?;
    if cols != column_names() {
        return Err(format_err(path, 1, "unexpected feature columns"));
    }
    Ok(FeatureMatrix { rows, values })
}

pub fn write_normalized(path: &Path, rows: &[RegionKey], values: &Matrix) -> Result<(), IoError> {
    write_keyed_matrix(path, &column_names(), rows, values, false)
}

pub fn embedding_columns(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("e{i:02}")).collect()
}

pub fn write_embeddings(path: &Path, rows: &[RegionKey], values: &Matrix) -> Result<(), IoError> {
    write_keyed_matrix(path, &embedding_columns(values.cols()), rows, values, false)
}

pub fn read_embeddings(path: &Path) -> Result<(Vec<RegionKey>, Matrix), IoError> {
    let (cols, rows, values) = read_keyed_matrix(path)?;
    if cols != embedding_columns(cols.len()) {
        return Err(format_err(path, 1, "unexpected embedding columns"));
    }
    Ok((rows, values))
}

/// Cluster labels per region, one column per cut, plus typology names when
/// a 3-cut was named.
#[derive(Debug, Clone, PartialEq)]
pub struct CutTable {
    pub rows: Vec<RegionKey>,
    /// k → labels aligned with `rows`.
    pub cuts: BTreeMap<usize, Vec<usize>>,
    pub typology: Option<Vec<String>>,
}

pub fn write_cuts(path: &Path, table: &CutTable) -> Result<(), IoError> {
    let mut w = writer(path)?;
    let mut header = vec!["city_id".to_string(), "cell".to_string()];
    header.extend(table.cuts.keys().map(|k| format!("label_k{k}")));
    if table.typology.is_some() {
        header.push("typology_name".into());
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, key) in table.rows.iter().enumerate() {
        let mut rec = vec![key.city_id.clone(), key.cell.to_string()];
        rec.extend(table.cuts.values().map(|l| l[i].to_string()));
        if let Some(t) = &table.typology {
            rec.push(t[i].clone());
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_cuts(path: &Path) -> Result<CutTable, IoError> {
    let recs = read_records(path)?;
    if recs.headers.len() < 2 || recs.headers[0] != "city_id" || recs.headers[1] != "cell" {
        return Err(format_err(path, 1, "header must start with city_id,cell"));
    }
    let mut ks = Vec::new();
    let mut typology_col = None;
    for (i, h) in recs.headers.iter().enumerate().skip(2) {
        if let Some(k) = h.strip_prefix("label_k").and_then(|k| k.parse::<usize>().ok()) {
            ks.push((i, k));
        } else if h == "typology_name" {
            typology_col = Some(i);
        } else {
            return Err(format_err(path, 1, format!("unknown column `{h}`")));
        }
    }
    let mut rows = Vec::new();
    let mut cuts: BTreeMap<usize, Vec<usize>> = ks.iter().map(|&(_, k)| (k, Vec::new())).collect();
    let mut typology = typology_col.map(|_| Vec::new());
    for (line, rec) in &recs.rows {
        if rec.len() != recs.headers.len() {
            return Err(format_err(path, *line, "wrong field count"));
        }
        rows.push(parse_key(path, *line, &rec[0], &rec[1])?);
        for &(col, k) in &ks {
            let label = rec[col]
                .trim()
                .parse()
                .map_err(|_| format_err(path, *line, "bad label"))?;
            cuts.get_mut(&k).expect("known k").push(label);
        }
        if let (Some(col), Some(t)) = (typology_col, typology.as_mut()) {
            t.push(rec[col].to_string());
        }
    }
    Ok(CutTable { rows, cuts, typology })
}

pub fn write_events(path: &Path, events: &[DepartureEvent]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(["stop_id", "hour", "headsign"]).map_err(csv_err(path))?;
    for e in events {
        w.write_record([e.stop_id.as_str(), &e.hour.to_string(), e.headsign.as_str()])
            .map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_events(path: &Path) -> Result<Vec<DepartureEvent>, IoError> {
    let recs = read_records(path)?;
    if recs.headers != ["stop_id", "hour", "headsign"] {
        return Err(format_err(path, 1, "expected header stop_id,hour,headsign"));
    }
    recs.rows
        .iter()
        .map(|(line, rec)| {
            let hour: u8 = rec[1]
                .trim()
                .parse()
                .ok()
                .filter(|h| *h < 24)
                .ok_or_else(|| format_err(path, *line, "hour must be 0..23"))?;
            Ok(DepartureEvent {
                stop_id: rec[0].to_string(),
                hour,
                headsign: rec[2].to_string(),
            })
        })
        .collect()
}

pub fn write_stops(path: &Path, stops: &[Stop]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(["stop_id", "lat", "lon"]).map_err(csv_err(path))?;
    for s in stops {
        w.write_record([s.stop_id.clone(), fmt_f64(s.lat), fmt_f64(s.lon)])
            .map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_stops(path: &Path) -> Result<Vec<Stop>, IoError> {
    let recs = read_records(path)?;
    if recs.headers != ["stop_id", "lat", "lon"] {
        return Err(format_err(path, 1, "expected header stop_id,lat,lon"));
    }
    recs.rows
        .iter()
        .map(|(line, rec)| {
            Ok(Stop {
                stop_id: rec[0].to_string(),
                lat: parse_f64(path, *line, &rec[1])?,
                lon: parse_f64(path, *line, &rec[2])?,
                name: None,
            })
        })
        .collect()
}

pub fn write_loss_history(path: &Path, history: &[f64]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "loss"]).map_err(csv_err(path))?;
    for (i, l) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt_f64(*l)]).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn read_loss_history(path: &Path) -> Result<Vec<f64>, IoError> {
    let recs = read_records(path)?;
    if recs.headers != ["epoch", "loss"] {
        return Err(format_err(path, 1, "expected header epoch,loss"));
    }
    recs.rows.iter().map(|(line, rec)| parse_f64(path, *line, &rec[1])).collect()
}

pub fn write_validation(path: &Path, reports: &[ValidationReport]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(["city_id", "criterion", "status", "message"]).map_err(csv_err(path))?;
    for r in reports {
        for c in &r.checks {
            w.write_record([r.city_id.as_str(), c.criterion, &c.status.to_string(), c.message.as_str()])
                .map_err(csv_err(path))?;
        }
        let overall = if r.passed { CheckStatus::Pass } else { CheckStatus::Fail };
        w.write_record([r.city_id.as_str(), "overall", &overall.to_string(), ""])
            .map_err(csv_err(path))?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_DIM;
    use crate::region::assign_cell;

    #[test]
    fn features_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let mut values = Matrix::zeros(2, FEATURE_DIM);
        values.set(0, 3, 12.0);
        values.set(1, 20, 4.0);
        let m = FeatureMatrix {
            rows: vec![
                RegionKey::new("a", assign_cell(51.0, 17.0, 8).unwrap()),
                RegionKey::new("b", assign_cell(52.0, 17.0, 8).unwrap()),
            ],
            values,
        };
        write_features(&p, &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("city_id,cell,trips_h06,"));
        assert!(text.lines().next().unwrap().ends_with(",dirs_h22"));
        assert_eq!(read_features(&p).unwrap(), m);
    }

    #[test]
    fn cuts_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cuts.csv");
        let t = CutTable {
            rows: vec![RegionKey::new("a", assign_cell(51.0, 17.0, 8).unwrap())],
            cuts: [(3, vec![2]), (9, vec![7])].into(),
            typology: Some(vec!["hubs".into()]),
        };
        write_cuts(&p, &t).unwrap();
        assert!(std::fs::read_to_string(&p)
            .unwrap()
            .starts_with("city_id,cell,label_k3,label_k9,typology_name\n"));
        assert_eq!(read_cuts(&p).unwrap(), t);
    }

    #[test]
    fn events_roundtrip_with_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.csv");
        let ev = vec![DepartureEvent { stop_id: "s,1".into(), hour: 7, headsign: "Dworzec \"Główny\"".into() }];
        write_events(&p, &ev).unwrap();
        assert_eq!(read_events(&p).unwrap(), ev);
    }

    #[test]
    fn bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "city_id,cell,e00\na,zz,1.0\n").unwrap();
        assert!(matches!(read_embeddings(&p), Err(IoError::Format { line: 2, .. })));
        std::fs::write(&p, "a,b\n").unwrap();
        assert!(read_keyed_matrix(&p).is_err());
    }
}
