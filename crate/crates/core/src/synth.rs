//! Synthetic GTFS feeds for tests, demos and benchmarks.
//!
//! Two families: small random feeds with messy timetables (repeated stops,
//! times past midnight, several services), and "archetype" cities whose
//! regions are engineered to look like sparse suburbs, mid-city streets or
//! hubs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::Typology;
use crate::config::{CityConfig, ServiceDateSpec};
use crate::gtfs::{write_feed_zip, ExceptionKind, FeedBundle, GtfsError, ServiceCalendar, Stop, StopTimeEvent, TripRecord, WeeklyRule};
use crate::region::{assign_cell, RegionKey};

const WEEKDAYS: [bool; 7] = [true, true, true, true, true, false, false];
const WEEKENDS: [bool; 7] = [false, false, false, false, false, true, true];

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

/// The Wednesday every random feed is meant to be evaluated on.
pub fn random_feed_date() -> NaiveDate {
    date(2024, 3, 6)
}

fn weekly(service_id: &str, mask: [bool; 7], exceptions: Vec<(NaiveDate, ExceptionKind)>) -> ServiceCalendar {
    ServiceCalendar {
        service_id: service_id.into(),
        weekly: Some(WeeklyRule {
            weekday_mask: mask,
            start_date: date(2024, 1, 1),
            end_date: date(2024, 6, 30),
        }),
        exceptions,
    }
}

const HEADSIGNS: [&str; 6] = ["Centrum", "Dworzec", " Dworzec ", "Lotnisko", "Osiedle", "Zajezdnia"];

/// A feed with at most 20 stops and 50 trips. Trips may revisit stops, run
/// past midnight and belong to services that do not run on
/// [`random_feed_date`].
pub fn random_feed(seed: u64) -> FeedBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_stops = rng.random_range(1..=20);
    let stops: Vec<Stop> = (0..n_stops)
        .map(|i| Stop {
            stop_id: format!("s{i}"),
            lat: 51.10 + rng.random_range(0.0..0.03),
            lon: 17.02 + rng.random_range(0.0..0.04),
            name: None,
        })
        .collect();
    let n_routes = rng.random_range(1..=4);
    let route_ids: Vec<String> = (0..n_routes).map(|i| format!("r{i}")).collect();
    let services = ["wk", "we", "extra", "cancelled"];
    let day = random_feed_date();
    let calendars = vec![
        ServiceCalendar {
            service_id: "cancelled".into(),
            weekly: WeeklyRule {
                weekday_mask: WEEKDAYS,
                start_date: date(2024, 1, 1),
                end_date: date(2024, 6, 30),
            }
            .into(),
            exceptions: vec![(day, ExceptionKind::Removed)],
        },
        ServiceCalendar {
            service_id: "extra".into(),
            weekly: None,
            exceptions: vec![(day, ExceptionKind::Added)],
        },
        weekly("we", WEEKENDS, vec![]),
        weekly("wk", WEEKDAYS, vec![]),
    ];
    let n_trips = rng.random_range(1..=50);
    let mut trips = Vec::with_capacity(n_trips);
    let mut stop_times = Vec::new();
    for t in 0..n_trips {
        let trip_id = format!("t{t}");
        trips.push(TripRecord {
            trip_id: trip_id.clone(),
            route_id: route_ids[rng.random_range(0..n_routes)].clone(),
            service_id: services[rng.random_range(0..services.len())].into(),
            headsign: HEADSIGNS[rng.random_range(0..HEADSIGNS.len())].trim().into(),
        });
        let mut secs = rng.random_range(0..28 * 3600);
        for seq in 0..rng.random_range(1..=8u32) {
            stop_times.push(StopTimeEvent {
                trip_id: trip_id.clone(),
                stop_id: stops[rng.random_range(0..n_stops)].stop_id.clone(),
                departure_seconds: secs,
                stop_sequence: seq + 1,
            });
            secs += rng.random_range(30..1800);
        }
    }
    FeedBundle {
        city_id: format!("rand{seed}"),
        stops,
        route_ids,
        trips,
        stop_times,
        calendars,
        declared_population: 250_000,
        skipped_stop_times: 0,
        uses_frequencies: false,
    }
}

/// Engineered region profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Archetype {
    /// At most 2 departures per hour, one direction.
    Suburb,
    /// About 10 departures per hour, 4 directions.
    MidCity,
    /// At least 40 departures per hour, 12 directions.
    Hub,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::Suburb, Archetype::MidCity, Archetype::Hub];

    /// The typology name the pipeline should give such a region.
    pub fn typology(self) -> Typology {
        match self {
            Archetype::Suburb => Typology::Suburban,
            Archetype::MidCity => Typology::MidCity,
            Archetype::Hub => Typology::Hubs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArchetypeCity {
    pub feed: FeedBundle,
    pub truth: BTreeMap<RegionKey, Archetype>,
}

/// A city with `counts[i]` regions of archetype `Archetype::ALL[i]`, each a
/// distinct resolution-8 cell near `center`, each served by its own route and
/// two stops. Weekday service runs January to June 2024; a thin weekend
/// service and some night departures are added as noise that the features
/// must ignore.
pub fn archetype_city(city_id: &str, center: (f64, f64), counts: [usize; 3], seed: u64) -> ArchetypeCity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = counts.iter().sum();
    let origin = assign_cell(center.0, center.1, 8).expect("valid centre");
    let mut ring = 1;
    let mut cells = origin.grid_disk(ring);
    while cells.len() < total {
        ring += 1;
        cells = origin.grid_disk(ring);
    }
    cells.shuffle(&mut rng);
    let kinds = Archetype::ALL.iter().zip(counts).flat_map(|(&a, n)| std::iter::repeat_n(a, n));

    let mut feed = FeedBundle {
        city_id: city_id.into(),
        stops: Vec::new(),
        route_ids: Vec::new(),
        trips: Vec::new(),
        stop_times: Vec::new(),
        calendars: vec![weekly("we", WEEKENDS, vec![]), weekly("wk", WEEKDAYS, vec![])],
        declared_population: 500_000,
        skipped_stop_times: 0,
        uses_frequencies: false,
    };
    let mut truth = BTreeMap::new();
    for (r, (cell, kind)) in cells.into_iter().zip(kinds).enumerate() {
        truth.insert(RegionKey::new(city_id, cell), kind);
        let (lat, lon) = cell.center();
        let route = format!("{city_id}-r{r}");
        let stop_ids = [format!("{city_id}-s{r}a"), format!("{city_id}-s{r}b")];
        feed.stops.push(Stop { stop_id: stop_ids[0].clone(), lat, lon, name: Some(format!("Stop {r} A")) });
        feed.stops.push(Stop { stop_id: stop_ids[1].clone(), lat: lat + 0.0005, lon, name: Some(format!("Stop {r} B")) });
        feed.route_ids.push(route.clone());

        let add_trip = |feed: &mut FeedBundle, service: &str, headsign: String, start: u32| {
            let trip_id = format!("{route}-t{}", feed.trips.len());
            feed.trips.push(TripRecord { trip_id: trip_id.clone(), route_id: route.clone(), service_id: service.into(), headsign });
            for (seq, stop) in stop_ids.iter().enumerate() {
                feed.stop_times.push(StopTimeEvent {
                    trip_id: trip_id.clone(),
                    stop_id: stop.clone(),
                    departure_seconds: start + 120 * seq as u32,
                    stop_sequence: seq as u32 + 1,
                });
            }
        };
        let directions = match kind {
            Archetype::Suburb => 1,
            Archetype::MidCity => 4,
            Archetype::Hub => 12,
        };
        for hour in 6..=22u32 {
            let n = match kind {
                Archetype::Suburb => u32::from(rng.random_range(0..10) > 0),
                Archetype::MidCity => rng.random_range(4..=6),
                Archetype::Hub => rng.random_range(20..=25),
            };
            for i in 0..n {
                // Both stop events stay inside the hour.
                let start = hour * 3600 + i * (3300 / n) + rng.random_range(0..(3300 / n).min(60));
                add_trip(&mut feed, "wk", format!("{city_id} dest {r}-{}", i % directions), start);
            }
        }
        for start in [23 * 3600 + 1800, 25 * 3600 + 600, 5 * 3600] {
            add_trip(&mut feed, "wk", format!("{city_id} night {r}"), start);
        }
        add_trip(&mut feed, "we", format!("{city_id} weekend {r}"), 12 * 3600);
    }
    ArchetypeCity { feed, truth }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub cities: Vec<CityConfig>,
    /// Archetype of every region of the cities expected to pass validation.
    pub truth: BTreeMap<RegionKey, Archetype>,
}

const ARCHETYPE_CITIES: [(&str, (f64, f64), [usize; 3]); 3] = [
    ("alpha", (51.1079, 17.0385), [12, 8, 4]),
    ("beta", (52.4064, 16.9252), [10, 8, 5]),
    ("gamma", (50.0647, 19.9450), [14, 6, 4]),
];

/// Write the three archetype cities (and optionally a fourth city with only
/// five routes, which fails validation) as GTFS zips into `dir`.
pub fn write_archetype_fixture(dir: &Path, seed: u64, with_underserved: bool) -> Result<Fixture, GtfsError> {
    std::fs::create_dir_all(dir).map_err(|source| GtfsError::Io { path: dir.display().to_string(), source })?;
    let mut specs: Vec<(&str, (f64, f64), [usize; 3])> = ARCHETYPE_CITIES.to_vec();
    if with_underserved {
        specs.push(("delta", (53.1325, 23.1688), [3, 1, 1]));
    }
    let mut cities = Vec::new();
    let mut truth = BTreeMap::new();
    for (i, (id, center, counts)) in specs.into_iter().enumerate() {
        let city = archetype_city(id, center, counts, seed.wrapping_add(i as u64));
        let path = dir.join(format!("{id}.zip"));
        write_feed_zip(&city.feed, &path)?;
        if city.feed.route_count() >= 20 {
            truth.extend(city.truth);
        }
        cities.push(CityConfig {
            city_id: id.into(),
            gtfs: path,
            population: city.feed.declared_population,
            date: ServiceDateSpec::Auto,
            boundary: None,
        });
    }
    Ok(Fixture { cities, truth })
}

/// A run configuration in the documented TOML format for `cities`.
pub fn config_toml(cities: &[CityConfig], output_dir: &Path, seed: u64) -> String {
    let quote = |p: &PathBuf| format!("{:?}", p.display().to_string());
    let mut s = format!("output_dir = {}\nseed = {seed}\nresolution = 8\ncuts = [3, 9]\nnormalization = \"pooled\"\n\n", quote(&output_dir.to_path_buf()));
    s.push_str("[train]\nepochs = 200\nbatch_size = 32\nlearning_rate = 0.001\noptimizer = \"adam\"\nshuffle = true\n");
    for c in cities {
        let date = match c.date {
            ServiceDateSpec::Auto => "auto".to_string(),
            ServiceDateSpec::Fixed(d) => d.format("%Y-%m-%d").to_string(),
        };
        let _ = write!(
            s,
            "\n[[city]]\ncity_id = {:?}\ngtfs = {}\npopulation = {}\ndate = {:?}\n",
            c.city_id,
            quote(&c.gtfs),
            c.population,
            date
        );
        if let Some(b) = &c.boundary {
            let _ = writeln!(s, "boundary = {}", quote(b));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtfs::departure_events;

    #[test]
    fn random_feeds_respect_bounds() {
        for seed in 0..20 {
            let f = random_feed(seed);
            assert!((1..=20).contains(&f.stops.len()));
            assert!((1..=50).contains(&f.trips.len()));
            departure_events(&f, random_feed_date()).unwrap();
        }
        assert_eq!(random_feed(3), random_feed(3));
    }

    #[test]
    fn archetype_regions_are_distinct_cells() {
        let c = archetype_city("x", (51.1, 17.0), [5, 3, 2], 1);
        assert_eq!(c.truth.len(), 10);
        assert_eq!(c.feed.route_count(), 10);
        for s in &c.feed.stops {
            let key = RegionKey::new("x", assign_cell(s.lat, s.lon, 8).unwrap());
            assert!(c.truth.contains_key(&key), "stop {} left its cell", s.stop_id);
        }
    }
}
