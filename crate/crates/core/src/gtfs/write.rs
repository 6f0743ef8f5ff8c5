use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::calendar::ExceptionKind;
use super::{format_gtfs_date, format_gtfs_time, FeedBundle, GtfsError};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GtfsError + '_ {
    move |source| GtfsError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing to a Vec cannot fail.
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Serialize the bundle into GTFS tables, in file order.
fn tables(feed: &FeedBundle) -> Vec<(&'static str, Vec<u8>)> {
    let agency = csv_table(
        &["agency_id", "agency_name", "agency_url", "agency_timezone"],
        [vec![
            "a".into(),
            feed.city_id.clone(),
            "https://example.invalid".into(),
            "Europe/Warsaw".into(),
        ]],
    );
    let stops = csv_table(
        &["stop_id", "stop_name", "stop_lat", "stop_lon"],
        feed.stops.iter().map(|s| {
            vec![
                s.stop_id.clone(),
                s.name.clone().unwrap_or_default(),
                s.lat.to_string(),
                s.lon.to_string(),
            ]
        }),
    );
    let routes = csv_table(
        &["route_id", "agency_id", "route_short_name", "route_type"],
        feed.route_ids.iter().map(|r| vec![r.clone(), "a".into(), r.clone(), "3".into()]),
    );
    let trips = csv_table(
        &["route_id", "service_id", "trip_id", "trip_headsign"],
        feed.trips.iter().map(|t| {
            vec![
                t.route_id.clone(),
                t.service_id.clone(),
                t.trip_id.clone(),
                t.headsign.clone(),
            ]
        }),
    );
    let stop_times = csv_table(
        &["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"],
        feed.stop_times.iter().map(|st| {
            let t = format_gtfs_time(st.departure_seconds);
            vec![
                st.trip_id.clone(),
                t.clone(),
                t,
                st.stop_id.clone(),
                st.stop_sequence.to_string(),
            ]
        }),
    );
    let calendar = csv_table(
        &[
            "service_id",
            "monday",
            "tuesday",
            "wednesday",
            "thursday",
            "friday",
            "saturday",
            "sunday",
            "start_date",
            "end_date",
        ],
        feed.calendars.iter().filter_map(|c| {
            let w = c.weekly.as_ref()?;
            let mut row = vec![c.service_id.clone()];
            row.extend(w.weekday_mask.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            row.push(format_gtfs_date(w.start_date));
            row.push(format_gtfs_date(w.end_date));
            Some(row)
        }),
    );
    let calendar_dates = csv_table(
        &["service_id", "date", "exception_type"],
        feed.calendars.iter().flat_map(|c| {
            c.exceptions.iter().map(|(d, kind)| {
                vec![
                    c.service_id.clone(),
                    format_gtfs_date(*d),
                    match kind {
                        ExceptionKind::Added => "1",
                        ExceptionKind::Removed => "2",
                    }
                    .to_string(),
                ]
            })
        }),
    );
    vec![
        ("agency.txt", agency),
        ("stops.txt", stops),
        ("routes.txt", routes),
        ("trips.txt", trips),
        ("stop_times.txt", stop_times),
        ("calendar.txt", calendar),
        ("calendar_dates.txt", calendar_dates),
    ]
}

/// Write the feed as a GTFS zip archive. Entry timestamps are fixed so the
/// archive bytes depend only on the feed contents.
pub fn write_feed_zip(feed: &FeedBundle, path: impl AsRef<Path>) -> Result<(), GtfsError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut zip = zip::ZipWriter::new(file);
    let options = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    let archive_err = |e: zip::result::ZipError| GtfsError::Archive {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    for (name, bytes) in tables(feed) {
        zip.start_file(name, options).map_err(archive_err)?;
        zip.write_all(&bytes).map_err(io_err(path))?;
    }
    zip.finish().map_err(archive_err)?;
    Ok(())
}

/// Write the feed as loose GTFS text files into `dir` (created if needed).
pub fn write_feed_dir(feed: &FeedBundle, dir: impl AsRef<Path>) -> Result<(), GtfsError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, bytes) in tables(feed) {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    Ok(())
}
