use std::collections::BTreeSet;

use proptest::prelude::*;

use gtfs2vec::features::{build_feature_matrix, CityEvents, HOURS};
use gtfs2vec::gtfs::{DepartureEvent, Stop};
use gtfs2vec::region::{cell_boundary, group_stops_by_region, RegionKey};

fn stops_strategy() -> impl Strategy<Value = Vec<Stop>> {
    prop::collection::vec((51.0f64..51.2, 16.9f64..17.2), 1..30).prop_map(|pts| {
        pts.into_iter()
            .enumerate()
            .map(|(i, (lat, lon))| Stop { stop_id: format!("s{i}"), lat, lon, name: None })
            .collect()
    })
}

fn city(stops: &[Stop], events: Vec<DepartureEvent>) -> CityEvents {
    CityEvents {
        city_id: "c".into(),
        events,
        regions: group_stops_by_region(stops, "c", 8).unwrap(),
    }
}

fn events_strategy(n_stops: usize) -> impl Strategy<Value = Vec<DepartureEvent>> {
    prop::collection::vec((0..n_stops, 0u8..24, 0usize..5), 0..200).prop_map(|v| {
        v.into_iter()
            .map(|(s, hour, h)| DepartureEvent { stop_id: format!("s{s}"), hour, headsign: ["N", "S", " N", "E", "W "][h].into() })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regions_partition_stops(stops in stops_strategy()) {
        let groups = group_stops_by_region(&stops, "c", 8).unwrap();
        let mut seen = BTreeSet::new();
        for (key, ids) in &groups {
            prop_assert!(!ids.is_empty());
            prop_assert_eq!(key.cell.resolution(), 8);
            for id in ids {
                prop_assert!(seen.insert(id.clone()), "stop {} in two regions", id);
            }
        }
        prop_assert_eq!(seen.len(), stops.len());
    }

    #[test]
    fn sums_bounds_and_order(
        (stops, events, shuffle_seed) in stops_strategy().prop_flat_map(|s| {
            let n = s.len();
            (Just(s), events_strategy(n), any::<u64>())
        })
    ) {
        let m = build_feature_matrix(&[city(&stops, events.clone())]);
        for (i, key) in m.rows.iter().enumerate() {
            let ids = &city(&stops, vec![]).regions[key];
            let day_events = events
                .iter()
                .filter(|e| ids.contains(&e.stop_id) && (6..=22).contains(&e.hour))
                .count();
            prop_assert_eq!(m.sum_trips(i) as usize, day_events);
            let row = m.values.row(i);
            for h in 0..HOURS {
                prop_assert!(row[HOURS + h] <= row[h]);
            }
        }
        // Event order does not matter.
        let mut shuffled = events;
        let n = shuffled.len();
        if n > 1 {
            let k = (shuffle_seed as usize) % n;
            shuffled.rotate_left(k);
            shuffled.reverse();
        }
        prop_assert_eq!(build_feature_matrix(&[city(&stops, shuffled)]), m);
    }

    #[test]
    fn one_more_event_changes_one_cell(
        (stops, events, extra_stop, hour, head) in stops_strategy().prop_flat_map(|s| {
            let n = s.len();
            (Just(s), events_strategy(n), 0..n, 0u8..24, 0usize..3)
        })
    ) {
        let before = build_feature_matrix(&[city(&stops, events.clone())]);
        let mut more = events;
        more.push(DepartureEvent { stop_id: format!("s{extra_stop}"), hour, headsign: ["N", "X", "S"][head].into() });
        let after = build_feature_matrix(&[city(&stops, more)]);
        prop_assert_eq!(&before.rows, &after.rows);
        let diffs: Vec<(usize, usize, f64)> = (0..before.len())
            .flat_map(|r| (0..34).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let d = after.values.get(r, c) - before.values.get(r, c);
                (d != 0.0).then_some((r, c, d))
            })
            .collect();
        if (6..=22).contains(&hour) {
            let trips: Vec<_> = diffs.iter().filter(|d| d.1 < HOURS).collect();
            prop_assert_eq!(trips.len(), 1);
            prop_assert_eq!(trips[0].2, 1.0);
            let (r, c) = (trips[0].0, trips[0].1);
            let dirs: Vec<_> = diffs.iter().filter(|d| d.1 >= HOURS).collect();
            prop_assert!(dirs.is_empty() || (dirs.len() == 1 && dirs[0].0 == r && dirs[0].1 == c + HOURS && dirs[0].2 == 1.0));
        } else {
            prop_assert!(diffs.is_empty());
        }
    }
}

#[test]
fn rows_sorted_across_cities() {
    let stops_a: Vec<Stop> = (0..3).map(|i| Stop { stop_id: format!("s{i}"), lat: 51.1 + 0.02 * i as f64, lon: 17.0, name: None }).collect();
    let stops_b: Vec<Stop> = (0..5).map(|i| Stop { stop_id: format!("s{i}"), lat: 52.1 + 0.02 * i as f64, lon: 21.0, name: None }).collect();
    let mk = |id: &str, stops: &[Stop]| CityEvents {
        city_id: id.into(),
        events: vec![],
        regions: group_stops_by_region(stops, id, 8).unwrap(),
    };
    let m = build_feature_matrix(&[mk("zeta", &stops_a), mk("alpha", &stops_b)]);
    assert_eq!(m.len(), 8);
    let mut sorted: Vec<RegionKey> = m.rows.clone();
    sorted.sort();
    assert_eq!(m.rows, sorted);
    assert_eq!(m.rows[0].city_id, "alpha");
}

#[test]
fn boundary_vertices_surround_the_cell() {
    let stops = vec![Stop { stop_id: "a".into(), lat: 51.1079, lon: 17.0385, name: None }];
    let key = group_stops_by_region(&stops, "c", 8).unwrap().into_keys().next().unwrap();
    let (clat, clon) = key.cell.center();
    for (lat, lon) in cell_boundary(key.cell) {
        // A point 10% of the way from a vertex to the centre is inside.
        let (ilat, ilon) = (lat + 0.1 * (clat - lat), lon + 0.1 * (clon - lon));
        assert_eq!(gtfs2vec::region::assign_cell(ilat, ilon, 8).unwrap(), key.cell);
    }
}
