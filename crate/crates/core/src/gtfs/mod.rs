//! GTFS static feed ingestion.
//!
//! Parses the handful of tables the feature extraction needs (stops, routes,
//! trips, stop_times, calendar, calendar_dates), resolves which services run
//! on a given day and turns stop times into hourly departure events.

mod calendar;
mod events;
mod load;
mod validate;
mod write;

use std::fmt;

use chrono::NaiveDate;
use thiserror::Error;

pub use calendar::{active_services, default_service_date, ServiceCalendar, WeeklyRule, ExceptionKind};
pub use events::{departure_events, DepartureEvent};
pub use load::load_feed;
pub use validate::{validate_feed, validate_feed_with, CheckStatus, ValidationCheck, ValidationConfig, ValidationReport};
pub use write::{write_feed_dir, write_feed_zip};

#[derive(Debug, Error)]
pub enum GtfsError {
    #[error("cannot read feed {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid zip archive {path}: {message}")]
    Archive { path: String, message: String },
    #[error("required table {0} is missing")]
    MissingFile(String),
    #[error("{file}:{line}: {message}")]
    MalformedRow {
        file: String,
        line: u64,
        message: String,
    },
    #[error("stop_times.txt:{line}: reference to unknown {kind} `{id}`")]
    DanglingReference {
        line: u64,
        kind: &'static str,
        id: String,
    },
    #[error("no service runs on {0}")]
    EmptyServiceDay(NaiveDate),
    #[error("the feed calendar has no Wednesday with active service")]
    NoServiceDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stop {
    pub stop_id: String,
    pub lat: f64,
    pub lon: f64,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripRecord {
    pub trip_id: String,
    pub route_id: String,
    pub service_id: String,
    /// Destination text shown on the vehicle, trimmed. Empty when the feed
    /// leaves it blank.
    pub headsign: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopTimeEvent {
    pub trip_id: String,
    pub stop_id: String,
    /// Seconds after service-day midnight; may exceed 86400.
    pub departure_seconds: u32,
    pub stop_sequence: u32,
}

/// Parsed contents of one city's GTFS archive.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedBundle {
    pub city_id: String,
    pub stops: Vec<Stop>,
    pub route_ids: Vec<String>,
    pub trips: Vec<TripRecord>,
    pub stop_times: Vec<StopTimeEvent>,
    /// Sorted by service id.
    pub calendars: Vec<ServiceCalendar>,
    pub declared_population: u64,
    /// stop_times rows that had neither a departure nor an arrival time.
    pub skipped_stop_times: usize,
    /// The archive ships a non-empty frequencies.txt, which is not expanded.
    pub uses_frequencies: bool,
}

impl FeedBundle {
    pub fn route_count(&self) -> usize {
        self.route_ids.len()
    }
}

/// Parse a GTFS time of day (`H:MM:SS`, hours may be ≥ 24).
pub fn parse_gtfs_time(text: &str) -> Option<u32> {
    let mut parts = text.trim().split(':');
    let h: u32 = parse_digits(parts.next()?)?;
    let m: u32 = parse_digits(parts.next()?)?;
    let s: u32 = parse_digits(parts.next()?)?;
    if parts.next().is_some() || m >= 60 || s >= 60 {
        return None;
    }
    h.checked_mul(3600)?.checked_add(m * 60 + s)
}

fn parse_digits(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

pub fn format_gtfs_time(seconds: u32) -> String {
    format!("{:02}:{:02}:{:02}", seconds / 3600, (seconds / 60) % 60, seconds % 60)
}

pub fn parse_gtfs_date(text: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(text.trim(), "%Y%m%d").ok()
}

pub fn format_gtfs_date(date: NaiveDate) -> String {
    date.format("%Y%m%d").to_string()
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Advisory => "advisory",
        })
    }
}
