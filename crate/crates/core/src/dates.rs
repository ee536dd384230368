//! Calendar handling. Every conversion between ISO-8601 strings, calendar
//! dates and day counts happens here.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};

/// Days since 1970-01-01.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i64);

fn unix_epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

impl Day {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| Error::Domain(format!("invalid date {year}-{month}-{day}")))?;
        Ok(Self::from_naive(date))
    }

    fn from_naive(date: NaiveDate) -> Self {
        Day((date - unix_epoch()).num_days())
    }

    fn to_naive(self) -> NaiveDate {
        unix_epoch() + chrono::Duration::days(self.0)
    }

    /// Days elapsed since January 1 of this date's year (0 on January 1).
    pub fn day_of_year(self) -> u32 {
        self.to_naive().ordinal0()
    }

    pub fn year(self) -> i32 {
        self.to_naive().year()
    }

    pub fn year_start(year: i32) -> Result<Self> {
        Self::from_ymd(year, 1, 1)
    }

    pub fn plus(self, days: i64) -> Self {
        Day(self.0 + days)
    }

    pub fn days_since(self, other: Day) -> i64 {
        self.0 - other.0
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format("%Y-%m-%d"))
    }
}

impl FromStr for Day {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let date = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map_err(|e| Error::Domain(format!("invalid ISO date {s:?}: {e}")))?;
        Ok(Self::from_naive(date))
    }
}

/// Dates `start, start + cadence, …` up to and including `end`.
pub fn cadence_dates(start: Day, end: Day, cadence_days: u32) -> Result<Vec<Day>> {
    if cadence_days == 0 {
        return Err(Error::Config("cadence must be at least one day".into()));
    }
    if end <= start {
        return Err(Error::Config(format!("end {end} is not after start {start}")));
    }
    Ok((start.0..=end.0)
        .step_by(cadence_days as usize)
        .map(Day)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_round_trip() {
        let d: Day = "2015-01-01".parse().unwrap();
        assert_eq!(d.0, 16436);
        assert_eq!(d.to_string(), "2015-01-01");
        assert_eq!(d.day_of_year(), 0);
        assert!("2015-02-30".parse::<Day>().is_err());
    }

    #[test]
    fn leap_day_of_year() {
        assert_eq!("2016-12-31".parse::<Day>().unwrap().day_of_year(), 365);
        assert_eq!("2015-12-31".parse::<Day>().unwrap().day_of_year(), 364);
    }

    #[test]
    fn cadence_count_is_inclusive() {
        let s: Day = "2015-01-01".parse().unwrap();
        let e: Day = "2023-05-31".parse().unwrap();
        let dates = cadence_dates(s, e, 5).unwrap();
        assert_eq!(dates.len() as i64, (e.0 - s.0) / 5 + 1);
        assert_eq!(dates.len(), 615);
        assert!(cadence_dates(e, s, 5).is_err());
    }
}
