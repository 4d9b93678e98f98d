//! UTC instants with US Central rendering and a contiguous hourly axis.
//!
//! All arithmetic happens on UTC seconds. The local Central wall clock only
//! exists when parsing input without an offset and when rendering, so the
//! hourly axis keeps a constant one hour step through both DST transitions.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, LocalResult, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};
use chrono_tz::America::Chicago;
use chrono_tz::Tz;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const SECONDS_PER_HOUR: i64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("unparseable timestamp `{0}`")]
    Unparseable(String),
    #[error("`{0}` does not exist in US Central time (spring-forward gap)")]
    Nonexistent(String),
    #[error("`{0}` is ambiguous in US Central time (fall-back hour); add an explicit UTC offset")]
    Ambiguous(String),
}

/// An absolute instant, stored as seconds since the Unix epoch (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

/// Wall-clock fields of a [`Timestamp`] in US Central time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalParts {
    pub year: i32,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
    /// 0 = Monday … 6 = Sunday.
    pub weekday: u32,
}

impl LocalParts {
    pub fn date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, self.day).expect("valid local date")
    }
}

impl Timestamp {
    pub fn from_unix(seconds: i64) -> Self {
        Timestamp(seconds)
    }

    pub fn unix(self) -> i64 {
        self.0
    }

    /// Builds an instant from a Central wall-clock time; rejects the
    /// nonexistent spring-forward hour and the ambiguous fall-back hour.
    pub fn from_central(year: i32, month: u32, day: u32, hour: u32) -> Result<Self, TimeError> {
        let text = format!("{year:04}-{month:02}-{day:02}T{hour:02}:00:00");
        let naive = NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(hour, 0, 0))
            .ok_or_else(|| TimeError::Unparseable(text.clone()))?;
        Self::from_naive_central(naive, &text)
    }

    fn from_naive_central(naive: NaiveDateTime, text: &str) -> Result<Self, TimeError> {
        match Chicago.from_local_datetime(&naive) {
            LocalResult::Single(dt) => Ok(Timestamp(dt.timestamp())),
            LocalResult::None => Err(TimeError::Nonexistent(text.to_string())),
            LocalResult::Ambiguous(_, _) => Err(TimeError::Ambiguous(text.to_string())),
        }
    }

    /// Parses ISO 8601. Inputs carrying an offset (`-06:00`, `Z`) are taken
    /// as absolute; offset-free inputs are read as Central wall time.
    pub fn parse(text: &str) -> Result<Self, TimeError> {
        let trimmed = text.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(trimmed) {
            return Ok(Timestamp(dt.timestamp()));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S%:z", "%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%dT%H:%M%:z", "%Y-%m-%d %H:%M%:z"] {
            if let Ok(dt) = DateTime::parse_from_str(trimmed, fmt) {
                return Ok(Timestamp(dt.timestamp()));
            }
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(trimmed, fmt) {
                return Self::from_naive_central(naive, trimmed);
            }
        }
        Err(TimeError::Unparseable(trimmed.to_string()))
    }

    pub fn add_hours(self, hours: i64) -> Self {
        Timestamp(self.0 + hours * SECONDS_PER_HOUR)
    }

    /// Whole hours from `earlier` to `self`; `None` if not an exact multiple.
    pub fn hours_since(self, earlier: Timestamp) -> Option<i64> {
        let delta = self.0 - earlier.0;
        (delta % SECONDS_PER_HOUR == 0).then_some(delta / SECONDS_PER_HOUR)
    }

    pub fn is_hour_aligned(self) -> bool {
        self.0.rem_euclid(SECONDS_PER_HOUR) == 0
    }

    pub fn to_central(self) -> DateTime<Tz> {
        Utc.timestamp_opt(self.0, 0)
            .single()
            .expect("in-range unix seconds")
            .with_timezone(&Chicago)
    }

    pub fn local(self) -> LocalParts {
        let dt = self.to_central();
        LocalParts {
            year: dt.year(),
            month: dt.month(),
            day: dt.day(),
            hour: dt.hour(),
            weekday: dt.weekday().num_days_from_monday(),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_central().format("%Y-%m-%dT%H:%M:%S%:z"))
    }
}

impl FromStr for Timestamp {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Timestamp::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// A contiguous range of hours: `start`, `start + 1h`, … (`len` entries).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourlyAxis {
    pub start: Timestamp,
    pub len: usize,
}

impl HourlyAxis {
    pub fn new(start: Timestamp, len: usize) -> Self {
        HourlyAxis { start, len }
    }

    /// Axis covering `first..=last`; `None` if `last < first` or misaligned.
    pub fn spanning(first: Timestamp, last: Timestamp) -> Option<Self> {
        let hours = last.hours_since(first)?;
        (hours >= 0).then(|| HourlyAxis::new(first, hours as usize + 1))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn at(&self, index: usize) -> Timestamp {
        self.start.add_hours(index as i64)
    }

    pub fn last(&self) -> Option<Timestamp> {
        (self.len > 0).then(|| self.at(self.len - 1))
    }

    pub fn index_of(&self, ts: Timestamp) -> Option<usize> {
        let hours = ts.hours_since(self.start)?;
        (hours >= 0 && (hours as usize) < self.len).then_some(hours as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = Timestamp> + '_ {
        (0..self.len).map(move |i| self.at(i))
    }

    pub fn intersect(&self, other: &HourlyAxis) -> Option<HourlyAxis> {
        let first = self.start.max(other.start);
        let last = self.last()?.min(other.last()?);
        if last < first {
            return None;
        }
        HourlyAxis::spanning(first, last)
    }

    /// Sub-axis `[offset, offset + len)`.
    pub fn slice(&self, offset: usize, len: usize) -> HourlyAxis {
        assert!(offset + len <= self.len, "axis slice out of range");
        HourlyAxis::new(self.at(offset), len)
    }
}

/// An inclusive range of instants `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeRange {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        TimeRange { start, end }
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts <= self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}
