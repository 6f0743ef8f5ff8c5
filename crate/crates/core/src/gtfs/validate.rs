use super::FeedBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Advisory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCheck {
    pub criterion: &'static str,
    pub status: CheckStatus,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub city_id: String,
    pub passed: bool,
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

/// Thresholds for the feed inclusion criteria.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub min_routes: usize,
    pub min_population: u64,
    /// Diagonal of the stop bounding box above which a feed looks
    /// country-wide rather than city-wide.
    pub max_extent_km: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            min_routes: 20,
            min_population: 200_000,
            max_extent_km: 300.0,
        }
    }
}

pub fn validate_feed(feed: &FeedBundle) -> ValidationReport {
    validate_feed_with(feed, &ValidationConfig::default())
}

pub fn validate_feed_with(feed: &FeedBundle, config: &ValidationConfig) -> ValidationReport {
    let mut checks = Vec::new();
    let mut check = |criterion, ok: bool, on_violation, message: String| {
        checks.push(ValidationCheck {
            criterion,
            status: if ok { CheckStatus::Pass } else { on_violation },
            message,
        });
    };

    let routes = feed.route_count();
    check(
        "route_count",
        routes >= config.min_routes,
        CheckStatus::Fail,
        format!("{routes} routes (minimum {})", config.min_routes),
    );

    let blank = feed.trips.iter().filter(|t| t.headsign.is_empty()).count();
    check(
        "trip_headsign",
        blank == 0,
        CheckStatus::Fail,
        format!("{blank} of {} trips without headsign", feed.trips.len()),
    );

    check(
        "population",
        feed.declared_population >= config.min_population,
        CheckStatus::Advisory,
        format!(
            "declared population {} (minimum {})",
            feed.declared_population, config.min_population
        ),
    );

    let extent = bbox_diagonal_km(feed);
    check(
        "geographic_extent",
        extent < config.max_extent_km,
        CheckStatus::Advisory,
        format!("stop bounding box diagonal {extent:.1} km (limit {} km)", config.max_extent_km),
    );

    check(
        "frequencies",
        !feed.uses_frequencies,
        CheckStatus::Advisory,
        if feed.uses_frequencies {
            "frequencies.txt present; headway-based trips are not expanded".to_string()
        } else {
            "no headway-based trips".to_string()
        },
    );

    check(
        "stop_time_values",
        feed.skipped_stop_times == 0,
        CheckStatus::Advisory,
        format!("{} stop_times rows without departure or arrival time skipped", feed.skipped_stop_times),
    );

    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    ValidationReport {
        city_id: feed.city_id.clone(),
        passed,
        checks,
    }
}

fn bbox_diagonal_km(feed: &FeedBundle) -> f64 {
    let Some(first) = feed.stops.first() else {
        return 0.0;
    };
    let (mut lat0, mut lat1, mut lon0, mut lon1) = (first.lat, first.lat, first.lon, first.lon);
    for s in &feed.stops {
        lat0 = lat0.min(s.lat);
        lat1 = lat1.max(s.lat);
        lon0 = lon0.min(s.lon);
        lon1 = lon1.max(s.lon);
    }
    haversine_km(lat0, lon0, lat1, lon1)
}

fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * h3o::EARTH_RADIUS_KM * a.sqrt().asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtfs::{Stop, TripRecord};

    fn feed(routes: usize, headsigns: &[&str], population: u64) -> FeedBundle {
        FeedBundle {
            city_id: "c".into(),
            stops: vec![
                Stop { stop_id: "a".into(), lat: 51.10, lon: 17.03, name: None },
                Stop { stop_id: "b".into(), lat: 51.15, lon: 17.10, name: None },
            ],
            route_ids: (0..routes).map(|i| format!("r{i}")).collect(),
            trips: headsigns
                .iter()
                .enumerate()
                .map(|(i, h)| TripRecord {
                    trip_id: format!("t{i}"),
                    route_id: "r0".into(),
                    service_id: "s".into(),
                    headsign: h.to_string(),
                })
                .collect(),
            stop_times: vec![],
            calendars: vec![],
            declared_population: population,
            skipped_stop_times: 0,
            uses_frequencies: false,
        }
    }

    fn status(r: &ValidationReport, name: &str) -> CheckStatus {
        r.checks.iter().find(|c| c.criterion == name).unwrap().status
    }

    #[test]
    fn good_feed_passes() {
        let r = validate_feed(&feed(25, &["A", "B"], 300_000));
        assert!(r.passed);
        assert!(r.checks.iter().all(|c| c.status == CheckStatus::Pass));
    }

    #[test]
    fn too_few_routes() {
        let r = validate_feed(&feed(5, &["A"], 300_000));
        assert!(!r.passed);
        assert_eq!(status(&r, "route_count"), CheckStatus::Fail);
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    fn blank_headsign() {
        let r = validate_feed(&feed(25, &["A", ""], 300_000));
        assert!(!r.passed);
        assert_eq!(status(&r, "trip_headsign"), CheckStatus::Fail);
    }

    #[test]
    fn advisories_do_not_fail() {
        let mut f = feed(25, &["A"], 10_000);
        f.stops[1].lat = 54.5; // ~380 km north
        f.uses_frequencies = true;
        f.skipped_stop_times = 3;
        let r = validate_feed(&f);
        assert!(r.passed);
        for name in ["population", "geographic_extent", "frequencies", "stop_time_values"] {
            assert_eq!(status(&r, name), CheckStatus::Advisory, "{name}");
        }
    }

    #[test]
    fn haversine_scale() {
        // One degree of latitude is ~111 km.
        let d = haversine_km(50.0, 10.0, 51.0, 10.0);
        assert!((d - 111.2).abs() < 0.5, "{d}");
    }
}
