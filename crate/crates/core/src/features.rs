//! Hourly quantity and variety features per micro-region.
//!
//! Each region gets 17 trip counts and 17 distinct-headsign counts for the
//! hours 6 through 22 inclusive. A trip stopping at several stops of the same
//! region counts once per stop.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;

use crate::gtfs::DepartureEvent;
use crate::matrix::Matrix;
use crate::region::RegionKey;

pub const FIRST_HOUR: u8 = 6;
pub const LAST_HOUR: u8 = 22;
pub const HOURS: usize = (LAST_HOUR - FIRST_HOUR + 1) as usize;
pub const FEATURE_DIM: usize = 2 * HOURS;

/// Column slot for an hour of day, `None` outside 6..=22.
#[inline]
pub fn hour_slot(hour: u8) -> Option<usize> {
    (FIRST_HOUR..=LAST_HOUR)
        .contains(&hour)
        .then(|| (hour - FIRST_HOUR) as usize)
}

/// `trips_h06 … trips_h22, dirs_h06 … dirs_h22`.
pub fn column_names() -> Vec<String> {
    let hours = FIRST_HOUR..=LAST_HOUR;
    hours
        .clone()
        .map(|h| format!("trips_h{h:02}"))
        .chain(hours.map(|h| format!("dirs_h{h:02}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionFeatureVector {
    pub region: RegionKey,
    pub trips_per_hour: [u32; HOURS],
    pub directions_per_hour: [u32; HOURS],
}

impl RegionFeatureVector {
    pub fn to_row(&self) -> [f64; FEATURE_DIM] {
        let mut row = [0.0; FEATURE_DIM];
        for i in 0..HOURS {
            row[i] = self.trips_per_hour[i] as f64;
            row[HOURS + i] = self.directions_per_hour[i] as f64;
        }
        row
    }
}

pub fn hourly_trip_counts(events: &[DepartureEvent], region_stops: &[String]) -> [u32; HOURS] {
    let stops: HashSet<&str> = region_stops.iter().map(String::as_str).collect();
    let mut counts = [0; HOURS];
    for e in events {
        if let Some(slot) = hour_slot(e.hour) {
            if stops.contains(e.stop_id.as_str()) {
                counts[slot] += 1;
            }
        }
    }
    counts
}

pub fn hourly_direction_counts(events: &[DepartureEvent], region_stops: &[String]) -> [u32; HOURS] {
    let stops: HashSet<&str> = region_stops.iter().map(String::as_str).collect();
    let mut seen: [HashSet<&str>; HOURS] = std::array::from_fn(|_| HashSet::new());
    for e in events {
        if let Some(slot) = hour_slot(e.hour) {
            if stops.contains(e.stop_id.as_str()) {
                seen[slot].insert(e.headsign.trim());
            }
        }
    }
    seen.map(|s| s.len() as u32)
}

/// One city's departure events and its stop grouping.
#[derive(Debug, Clone)]
pub struct CityEvents {
    pub city_id: String,
    pub events: Vec<DepartureEvent>,
    /// Region → stop ids. Regions with no stops (e.g. added from a city
    /// boundary) yield all-zero rows.
    pub regions: BTreeMap<RegionKey, Vec<String>>,
}

/// Features of every region in one city, in region-key order. Single pass
/// over the events.
pub fn city_features(city: &CityEvents) -> Vec<RegionFeatureVector> {
    let mut stop_region: HashMap<&str, usize> = HashMap::new();
    for (idx, stops) in city.regions.values().enumerate() {
        for s in stops {
            stop_region.insert(s.as_str(), idx);
        }
    }
    let n = city.regions.len();
    let mut trips = vec![[0u32; HOURS]; n];
    let mut heads: Vec<[HashSet<&str>; HOURS]> = (0..n).map(|_| std::array::from_fn(|_| HashSet::new())).collect();
    for e in &city.events {
        let (Some(slot), Some(&r)) = (hour_slot(e.hour), stop_region.get(e.stop_id.as_str())) else {
            continue;
        };
        trips[r][slot] += 1;
        heads[r][slot].insert(e.headsign.trim());
    }
    city.regions
        .keys()
        .zip(trips.into_iter().zip(heads))
        .map(|(key, (t, h))| RegionFeatureVector {
            region: key.clone(),
            trips_per_hour: t,
            directions_per_hour: h.map(|s| s.len() as u32),
        })
        .collect()
}

/// Raw N×34 feature matrix over all regions of all cities, rows sorted by
/// (city_id, cell).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<RegionKey>,
    pub values: Matrix,
}

impl FeatureMatrix {
    pub fn from_vectors(mut vectors: Vec<RegionFeatureVector>) -> Self {
        vectors.sort_by(|a, b| a.region.cmp(&b.region));
        let mut values = Matrix::zeros(vectors.len(), FEATURE_DIM);
        for (i, v) in vectors.iter().enumerate() {
            values.row_mut(i).copy_from_slice(&v.to_row());
        }
        FeatureMatrix {
            rows: vectors.into_iter().map(|v| v.region).collect(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sum of the 17 trip columns of row `i`.
    pub fn sum_trips(&self, i: usize) -> f64 {
        self.values.row(i)[..HOURS].iter().sum()
    }

    /// Sum of the 17 direction columns of row `i`.
    pub fn directions_whole_day(&self, i: usize) -> f64 {
        self.values.row(i)[HOURS..].iter().sum()
    }

    /// Keep only the given rows (in the given order).
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            values: self.values.select_rows(idx),
        }
    }
}

pub fn build_feature_matrix(cities: &[CityEvents]) -> FeatureMatrix {
    let vectors: Vec<RegionFeatureVector> = cities.par_iter().flat_map_iter(city_features).collect();
    FeatureMatrix::from_vectors(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::assign_cell;

    fn ev(stop: &str, hour: u8, head: &str) -> DepartureEvent {
        DepartureEvent {
            stop_id: stop.into(),
            hour,
            headsign: head.into(),
        }
    }

    fn key(city: &str, lat: f64) -> RegionKey {
        RegionKey::new(city, assign_cell(lat, 17.0, 8).unwrap())
    }

    #[test]
    fn columns() {
        let names = column_names();
        assert_eq!(names.len(), 34);
        assert_eq!(names[0], "trips_h06");
        assert_eq!(names[16], "trips_h22");
        assert_eq!(names[17], "dirs_h06");
        assert_eq!(names[33], "dirs_h22");
        assert_eq!(hour_slot(5), None);
        assert_eq!(hour_slot(23), None);
        assert_eq!(hour_slot(8), Some(2));
    }

    #[test]
    fn double_counting_across_stops() {
        let mut events = Vec::new();
        for stop in ["a", "b"] {
            for _ in 0..3 {
                events.push(ev(stop, 8, "X"));
            }
        }
        let stops = vec!["a".to_string(), "b".to_string()];
        let t = hourly_trip_counts(&events, &stops);
        assert_eq!(t[2], 6);
        assert_eq!(t.iter().sum::<u32>(), 6);
        assert_eq!(hourly_trip_counts(&[], &stops), [0; HOURS]);
    }

    #[test]
    fn distinct_headsigns() {
        let events: Vec<_> = ["A", "A", "B", "B", "B"].iter().map(|h| ev("s", 9, h)).collect();
        let stops = vec!["s".to_string()];
        let d = hourly_direction_counts(&events, &stops);
        assert_eq!(d[3], 2);
        assert_eq!(d[6], 0);
    }

    #[test]
    fn night_hours_ignored() {
        let city = CityEvents {
            city_id: "c".into(),
            events: vec![ev("s", 23, "A"), ev("s", 5, "A"), ev("s", 0, "A")],
            regions: [(key("c", 51.1), vec!["s".to_string()])].into(),
        };
        let m = build_feature_matrix(&[city]);
        assert_eq!(m.values.as_slice(), &[0.0; 34]);
    }

    #[test]
    fn shape_and_ordering() {
        let make = |city: &str, n: usize| CityEvents {
            city_id: city.into(),
            events: vec![],
            regions: (0..n)
                .map(|i| (key(city, 51.0 + 0.05 * i as f64), vec![format!("{city}{i}")]))
                .collect(),
        };
        let m = build_feature_matrix(&[make("zagreb", 3), make("berlin", 5)]);
        assert_eq!((m.values.rows(), m.values.cols()), (8, 34));
        assert!(m.rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(m.rows[0].city_id, "berlin");
        let strings: Vec<String> = m.rows.iter().map(|k| format!("{}:{}", k.city_id, k.cell)).collect();
        let mut sorted = strings.clone();
        sorted.sort();
        assert_eq!(strings, sorted);
    }

    #[test]
    fn single_pass_agrees_with_per_region_ops() {
        let k1 = key("c", 51.1);
        let k2 = key("c", 51.2);
        let events = vec![
            ev("a", 7, "A"),
            ev("b", 7, "B"),
            ev("b", 7, " B "),
            ev("c", 12, "C"),
            ev("c", 22, "D"),
            ev("zzz", 8, "E"),
        ];
        let regions: BTreeMap<_, _> = [
            (k1.clone(), vec!["a".to_string(), "b".to_string()]),
            (k2.clone(), vec!["c".to_string()]),
        ]
        .into();
        let city = CityEvents {
            city_id: "c".into(),
            events: events.clone(),
            regions: regions.clone(),
        };
        for v in city_features(&city) {
            let stops = &regions[&v.region];
            assert_eq!(v.trips_per_hour, hourly_trip_counts(&events, stops));
            assert_eq!(v.directions_per_hour, hourly_direction_counts(&events, stops));
        }
    }
}
