use std::collections::HashMap;

use chrono::NaiveDate;

use super::{active_services, FeedBundle, GtfsError};

/// One departure from a stop on the chosen service day.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DepartureEvent {
    pub stop_id: String,
    /// `floor(departure_seconds / 3600) mod 24`.
    pub hour: u8,
    pub headsign: String,
}

/// Expand the stop times of every trip running on `date`, in stop_times order.
pub fn departure_events(feed: &FeedBundle, date: NaiveDate) -> Result<Vec<DepartureEvent>, GtfsError> {
    let services = active_services(feed, date)?;
    let running: HashMap<&str, &str> = feed
        .trips
        .iter()
        .filter(|t| services.contains(&t.service_id))
        .map(|t| (t.trip_id.as_str(), t.headsign.as_str()))
        .collect();
    Ok(feed
        .stop_times
        .iter()
        .filter_map(|st| {
            running.get(st.trip_id.as_str()).map(|headsign| DepartureEvent {
                stop_id: st.stop_id.clone(),
                hour: ((st.departure_seconds / 3600) % 24) as u8,
                headsign: (*headsign).to_string(),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtfs::{ServiceCalendar, StopTimeEvent, TripRecord, WeeklyRule};

    fn fixture() -> FeedBundle {
        let d = |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let trip = |id: &str, svc: &str| TripRecord {
            trip_id: id.into(),
            route_id: "r".into(),
            service_id: svc.into(),
            headsign: format!("to {id}"),
        };
        let st = |trip: &str, secs, seq| StopTimeEvent {
            trip_id: trip.into(),
            stop_id: "S".into(),
            departure_seconds: secs,
            stop_sequence: seq,
        };
        FeedBundle {
            city_id: "c".into(),
            stops: vec![],
            route_ids: vec!["r".into()],
            trips: vec![trip("a", "wk"), trip("b", "sun")],
            stop_times: vec![st("a", 8 * 3600 + 900, 1), st("a", 24 * 3600 + 600, 2), st("b", 9 * 3600, 1)],
            calendars: vec![
                ServiceCalendar {
                    service_id: "sun".into(),
                    weekly: Some(WeeklyRule {
                        weekday_mask: [false, false, false, false, false, false, true],
                        start_date: d("2026-01-01"),
                        end_date: d("2026-12-31"),
                    }),
                    exceptions: vec![],
                },
                ServiceCalendar {
                    service_id: "wk".into(),
                    weekly: Some(WeeklyRule {
                        weekday_mask: [true; 7],
                        start_date: d("2026-01-01"),
                        end_date: d("2026-12-31"),
                    }),
                    exceptions: vec![],
                },
            ],
            declared_population: 0,
            skipped_stop_times: 0,
            uses_frequencies: false,
        }
    }

    #[test]
    fn buckets_and_filters() {
        let wed = NaiveDate::from_ymd_opt(2026, 1, 7).unwrap();
        let ev = departure_events(&fixture(), wed).unwrap();
        assert_eq!(
            ev,
            vec![
                DepartureEvent { stop_id: "S".into(), hour: 8, headsign: "to a".into() },
                DepartureEvent { stop_id: "S".into(), hour: 0, headsign: "to a".into() },
            ]
        );
    }

    #[test]
    fn empty_day_propagates() {
        let mut f = fixture();
        f.calendars.clear();
        let wed = NaiveDate::from_ymd_opt(2026, 1, 7).unwrap();
        assert!(matches!(departure_events(&f, wed), Err(GtfsError::EmptyServiceDay(_))));
    }
}
