use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use csv::StringRecord;

use super::calendar::{ExceptionKind, ServiceCalendar, WeeklyRule};
use super::{parse_gtfs_date, parse_gtfs_time, FeedBundle, GtfsError, Stop, StopTimeEvent, TripRecord};

enum Source {
    Zip {
        path: String,
        archive: zip::ZipArchive<File>,
    },
    Dir(PathBuf),
}

impl Source {
    fn open(path: &Path) -> Result<Self, GtfsError> {
        let display = path.display().to_string();
        if path.is_dir() {
            return Ok(Source::Dir(path.to_path_buf()));
        }
        let file = File::open(path).map_err(|source| GtfsError::Io {
            path: display.clone(),
            source,
        })?;
        let archive = zip::ZipArchive::new(file).map_err(|e| GtfsError::Archive {
            path: display.clone(),
            message: e.to_string(),
        })?;
        Ok(Source::Zip { path: display, archive })
    }

    /// Raw bytes of a table, or `None` when absent. Zip entries nested in a
    /// single top-level folder are accepted.
    fn table(&mut self, name: &str) -> Result<Option<Vec<u8>>, GtfsError> {
        match self {
            Source::Dir(dir) => {
                let p = dir.join(name);
                if !p.is_file() {
                    return Ok(None);
                }
                std::fs::read(&p).map(Some).map_err(|source| GtfsError::Io {
                    path: p.display().to_string(),
                    source,
                })
            }
            Source::Zip { path, archive } => {
                let suffix = format!("/{name}");
                let Some(entry) = archive
                    .file_names()
                    .filter(|n| *n == name || n.ends_with(&suffix))
                    .min_by_key(|n| n.len())
                    .map(str::to_string)
                else {
                    return Ok(None);
                };
                let mut file = archive.by_name(&entry).map_err(|e| GtfsError::Archive {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let mut buf = Vec::new();
                file.read_to_end(&mut buf).map_err(|source| GtfsError::Io {
                    path: format!("{path}!{entry}"),
                    source,
                })?;
                Ok(Some(buf))
            }
        }
    }

    fn required(&mut self, name: &str) -> Result<Vec<u8>, GtfsError> {
        self.table(name)?.ok_or_else(|| GtfsError::MissingFile(name.to_string()))
    }
}

/// Column-name lookup over one parsed table.
struct Table {
    file: &'static str,
    columns: HashMap<String, usize>,
    rows: Vec<(u64, StringRecord)>,
}

struct Row<'a> {
    table: &'a Table,
    line: u64,
    record: &'a StringRecord,
}

impl Table {
    fn parse(file: &'static str, bytes: &[u8]) -> Result<Self, GtfsError> {
        let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
        let malformed = |line: u64, message: String| GtfsError::MalformedRow {
            file: file.to_string(),
            line,
            message,
        };
        let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
        let columns = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        let mut rows = Vec::new();
        for result in reader.records() {
            let record = result.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                malformed(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            rows.push((line, record));
        }
        Ok(Table { file, columns, rows })
    }

    fn require_columns(&self, names: &[&str]) -> Result<(), GtfsError> {
        for name in names {
            if !self.columns.contains_key(*name) {
                return Err(GtfsError::MalformedRow {
                    file: self.file.to_string(),
                    line: 1,
                    message: format!("missing column `{name}`"),
                });
            }
        }
        Ok(())
    }

    fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().map(move |(line, record)| Row {
            table: self,
            line: *line,
            record,
        })
    }
}

impl<'a> Row<'a> {
    /// Trimmed field, `None` when the column is absent or the cell empty.
    fn get(&self, column: &str) -> Option<&'a str> {
        let idx = *self.table.columns.get(column)?;
        let record: &'a StringRecord = self.record;
        let value = record.get(idx)?.trim();
        (!value.is_empty()).then_some(value)
    }

    fn require(&self, column: &str) -> Result<&'a str, GtfsError> {
        self.get(column).ok_or_else(|| self.error(format!("empty `{column}`")))
    }

    fn parse<T: std::str::FromStr>(&self, column: &str) -> Result<T, GtfsError> {
        let raw = self.require(column)?;
        raw.parse()
            .map_err(|_| self.error(format!("cannot parse `{column}` value `{raw}`")))
    }

    fn error(&self, message: String) -> GtfsError {
        GtfsError::MalformedRow {
            file: self.table.file.to_string(),
            line: self.line,
            message,
        }
    }
}

/// Load and cross-check a GTFS feed from a zip archive (or an unpacked
/// directory).
pub fn load_feed(
    archive_path: impl AsRef<Path>,
    city_id: &str,
    declared_population: u64,
) -> Result<FeedBundle, GtfsError> {
    let mut source = Source::open(archive_path.as_ref())?;

    let stops = parse_stops(&Table::parse("stops.txt", &source.required("stops.txt")?)?)?;
    let route_ids = parse_routes(&Table::parse("routes.txt", &source.required("routes.txt")?)?)?;
    let trips = parse_trips(&Table::parse("trips.txt", &source.required("trips.txt")?)?)?;
    let stop_times_bytes = source.required("stop_times.txt")?;

    let calendar = source.table("calendar.txt")?;
    let calendar_dates = source.table("calendar_dates.txt")?;
    if calendar.is_none() && calendar_dates.is_none() {
        return Err(GtfsError::MissingFile("calendar.txt or calendar_dates.txt".into()));
    }
    let calendars = parse_calendars(
        calendar.map(|b| Table::parse("calendar.txt", &b)).transpose()?.as_ref(),
        calendar_dates.map(|b| Table::parse("calendar_dates.txt", &b)).transpose()?.as_ref(),
    )?;

    let stop_ids: HashSet<&str> = stops.iter().map(|s| s.stop_id.as_str()).collect();
    let trip_ids: HashSet<&str> = trips.iter().map(|t| t.trip_id.as_str()).collect();
    let (stop_times, skipped_stop_times) = parse_stop_times(
        &Table::parse("stop_times.txt", &stop_times_bytes)?,
        &stop_ids,
        &trip_ids,
    )?;

    let uses_frequencies = match source.table("frequencies.txt")? {
        Some(bytes) => !Table::parse("frequencies.txt", &bytes)?.rows.is_empty(),
        None => false,
    };

    Ok(FeedBundle {
        city_id: city_id.to_string(),
        stops,
        route_ids,
        trips,
        stop_times,
        calendars,
        declared_population,
        skipped_stop_times,
        uses_frequencies,
    })
}

fn parse_stops(table: &Table) -> Result<Vec<Stop>, GtfsError> {
    table.require_columns(&["stop_id", "stop_lat", "stop_lon"])?;
    let mut seen = HashSet::new();
    let mut stops = Vec::with_capacity(table.rows.len());
    for row in table.rows() {
        let stop_id = row.require("stop_id")?;
        if !seen.insert(stop_id.to_string()) {
            return Err(row.error(format!("duplicate stop_id `{stop_id}`")));
        }
        // Generic nodes and boarding areas may legitimately omit coordinates.
        let location_type = row.get("location_type").unwrap_or("0");
        if matches!(location_type, "3" | "4") && (row.get("stop_lat").is_none() || row.get("stop_lon").is_none()) {
            continue;
        }
        let lat: f64 = row.parse("stop_lat")?;
        let lon: f64 = row.parse("stop_lon")?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(row.error(format!("coordinate ({lat}, {lon}) out of range")));
        }
        stops.push(Stop {
            stop_id: stop_id.to_string(),
            lat,
            lon,
            name: row.get("stop_name").map(str::to_string),
        });
    }
    Ok(stops)
}

fn parse_routes(table: &Table) -> Result<Vec<String>, GtfsError> {
    table.require_columns(&["route_id"])?;
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    for row in table.rows() {
        let id = row.require("route_id")?;
        if !seen.insert(id) {
            return Err(row.error(format!("duplicate route_id `{id}`")));
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

fn parse_trips(table: &Table) -> Result<Vec<TripRecord>, GtfsError> {
    table.require_columns(&["route_id", "service_id", "trip_id"])?;
    let mut seen = HashSet::new();
    let mut trips = Vec::with_capacity(table.rows.len());
    for row in table.rows() {
        let trip_id = row.require("trip_id")?;
        if !seen.insert(trip_id) {
            return Err(row.error(format!("duplicate trip_id `{trip_id}`")));
        }
        trips.push(TripRecord {
            trip_id: trip_id.to_string(),
            route_id: row.require("route_id")?.to_string(),
            service_id: row.require("service_id")?.to_string(),
            headsign: row.get("trip_headsign").unwrap_or("").to_string(),
        });
    }
    Ok(trips)
}

fn parse_stop_times(
    table: &Table,
    stop_ids: &HashSet<&str>,
    trip_ids: &HashSet<&str>,
) -> Result<(Vec<StopTimeEvent>, usize), GtfsError> {
    table.require_columns(&["trip_id", "stop_id", "stop_sequence"])?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    let mut skipped = 0;
    for row in table.rows() {
        let trip_id = row.require("trip_id")?;
        let stop_id = row.require("stop_id")?;
        let stop_sequence: u32 = row.parse("stop_sequence")?;
        if !trip_ids.contains(trip_id) {
            return Err(GtfsError::DanglingReference {
                line: row.line,
                kind: "trip",
                id: trip_id.to_string(),
            });
        }
        if !stop_ids.contains(stop_id) {
            return Err(GtfsError::DanglingReference {
                line: row.line,
                kind: "stop",
                id: stop_id.to_string(),
            });
        }
        if !seen.insert((trip_id, stop_sequence)) {
            return Err(row.error(format!("duplicate stop_sequence {stop_sequence} in trip `{trip_id}`")));
        }
        let Some((column, raw)) = ["departure_time", "arrival_time"]
            .into_iter()
            .find_map(|c| row.get(c).map(|v| (c, v)))
        else {
            skipped += 1;
            continue;
        };
        let departure_seconds =
            parse_gtfs_time(raw).ok_or_else(|| row.error(format!("cannot parse `{column}` value `{raw}`")))?;
        out.push(StopTimeEvent {
            trip_id: trip_id.to_string(),
            stop_id: stop_id.to_string(),
            departure_seconds,
            stop_sequence,
        });
    }
    Ok((out, skipped))
}

const WEEKDAY_COLUMNS: [&str; 7] = [
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];

fn parse_calendars(
    calendar: Option<&Table>,
    calendar_dates: Option<&Table>,
) -> Result<Vec<ServiceCalendar>, GtfsError> {
    let mut services: BTreeMap<String, ServiceCalendar> = BTreeMap::new();
    if let Some(table) = calendar {
        let mut required = vec!["service_id", "start_date", "end_date"];
        required.extend(WEEKDAY_COLUMNS);
        table.require_columns(&required)?;
        for row in table.rows() {
            let service_id = row.require("service_id")?;
            let mut weekday_mask = [false; 7];
            for (flag, col) in weekday_mask.iter_mut().zip(WEEKDAY_COLUMNS) {
                *flag = match row.require(col)? {
                    "1" => true,
                    "0" => false,
                    other => return Err(row.error(format!("`{col}` must be 0 or 1, got `{other}`"))),
                };
            }
            let date = |col: &str| {
                let raw = row.require(col)?;
                parse_gtfs_date(raw).ok_or_else(|| row.error(format!("cannot parse `{col}` value `{raw}`")))
            };
            let (start_date, end_date) = (date("start_date")?, date("end_date")?);
            if start_date > end_date {
                return Err(row.error(format!("start_date after end_date for service `{service_id}`")));
            }
            let rule = WeeklyRule {
                weekday_mask,
                start_date,
                end_date,
            };
            if services.contains_key(service_id) {
                return Err(row.error(format!("duplicate service_id `{service_id}`")));
            }
            services.insert(
                service_id.to_string(),
                ServiceCalendar {
                    service_id: service_id.to_string(),
                    weekly: Some(rule),
                    exceptions: Vec::new(),
                },
            );
        }
    }
    if let Some(table) = calendar_dates {
        table.require_columns(&["service_id", "date", "exception_type"])?;
        for row in table.rows() {
            let service_id = row.require("service_id")?;
            let raw = row.require("date")?;
            let date = parse_gtfs_date(raw).ok_or_else(|| row.error(format!("cannot parse `date` value `{raw}`")))?;
            let kind = match row.require("exception_type")? {
                "1" => ExceptionKind::Added,
                "2" => ExceptionKind::Removed,
                other => return Err(row.error(format!("`exception_type` must be 1 or 2, got `{other}`"))),
            };
            let entry = services.entry(service_id.to_string()).or_insert_with(|| ServiceCalendar {
                service_id: service_id.to_string(),
                weekly: None,
                exceptions: Vec::new(),
            });
            if entry.exceptions.iter().any(|(d, _)| *d == date) {
                return Err(row.error(format!("duplicate exception for `{service_id}` on {raw}")));
            }
            entry.exceptions.push((date, kind));
        }
    }
    Ok(services.into_values().collect())
}
