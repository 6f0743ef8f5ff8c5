use std::collections::BTreeSet;

use chrono::{Datelike, Days, NaiveDate, Weekday};

use super::{FeedBundle, GtfsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExceptionKind {
    Added,
    Removed,
}

/// A calendar.txt row: weekdays (Monday first) over an inclusive date range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeeklyRule {
    pub weekday_mask: [bool; 7],
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

impl WeeklyRule {
    pub fn covers(&self, date: NaiveDate) -> bool {
        date >= self.start_date
            && date <= self.end_date
            && self.weekday_mask[date.weekday().num_days_from_monday() as usize]
    }
}

/// All scheduling information for one service id. Services defined only in
/// calendar_dates.txt have no weekly rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceCalendar {
    pub service_id: String,
    pub weekly: Option<WeeklyRule>,
    pub exceptions: Vec<(NaiveDate, ExceptionKind)>,
}

impl ServiceCalendar {
    pub fn runs_on(&self, date: NaiveDate) -> bool {
        let mut removed = false;
        for &(d, kind) in &self.exceptions {
            if d == date {
                match kind {
                    ExceptionKind::Added => return true,
                    ExceptionKind::Removed => removed = true,
                }
            }
        }
        !removed && self.weekly.as_ref().is_some_and(|w| w.covers(date))
    }

    fn span(&self) -> Option<(NaiveDate, NaiveDate)> {
        let weekly = self.weekly.iter().flat_map(|w| [w.start_date, w.end_date]);
        let added = self
            .exceptions
            .iter()
            .filter(|(_, k)| *k == ExceptionKind::Added)
            .map(|(d, _)| *d);
        let mut dates = weekly.chain(added);
        let first = dates.next()?;
        Some(dates.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
    }
}

pub fn active_services(feed: &FeedBundle, date: NaiveDate) -> Result<BTreeSet<String>, GtfsError> {
    let active: BTreeSet<String> = feed
        .calendars
        .iter()
        .filter(|c| c.runs_on(date))
        .map(|c| c.service_id.clone())
        .collect();
    if active.is_empty() {
        return Err(GtfsError::EmptyServiceDay(date));
    }
    Ok(active)
}

/// First Wednesday inside the feed's calendar span on which at least one
/// service runs.
pub fn default_service_date(feed: &FeedBundle) -> Result<NaiveDate, GtfsError> {
    let (start, end) = feed
        .calendars
        .iter()
        .filter_map(ServiceCalendar::span)
        .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)))
        .ok_or(GtfsError::NoServiceDate)?;
    let offset = (7 + Weekday::Wed.num_days_from_monday() - start.weekday().num_days_from_monday()) % 7;
    let mut date = start + Days::new(offset as u64);
    while date <= end {
        if feed.calendars.iter().any(|c| c.runs_on(date)) {
            return Ok(date);
        }
        date = date + Days::new(7);
    }
    Err(GtfsError::NoServiceDate)
}
