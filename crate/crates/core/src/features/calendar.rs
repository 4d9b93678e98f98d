//! Calendar fields in local Central time and the US federal holiday calendar.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::time::HourlyAxis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalendarField {
    Hour,
    Dayofweek,
    Month,
    IsWeekend,
    IsMonday,
    IsTuesday,
    IsWednesday,
    IsThursday,
    IsFriday,
    IsSaturday,
    IsSunday,
}

impl CalendarField {
    pub const ALL: [CalendarField; 11] = [
        CalendarField::Hour,
        CalendarField::Dayofweek,
        CalendarField::Month,
        CalendarField::IsWeekend,
        CalendarField::IsMonday,
        CalendarField::IsTuesday,
        CalendarField::IsWednesday,
        CalendarField::IsThursday,
        CalendarField::IsFriday,
        CalendarField::IsSaturday,
        CalendarField::IsSunday,
    ];

    pub fn column_name(self) -> &'static str {
        match self {
            CalendarField::Hour => "hour",
            CalendarField::Dayofweek => "dayofweek",
            CalendarField::Month => "month",
            CalendarField::IsWeekend => "is_weekend",
            CalendarField::IsMonday => "is_monday",
            CalendarField::IsTuesday => "is_tuesday",
            CalendarField::IsWednesday => "is_wednesday",
            CalendarField::IsThursday => "is_thursday",
            CalendarField::IsFriday => "is_friday",
            CalendarField::IsSaturday => "is_saturday",
            CalendarField::IsSunday => "is_sunday",
        }
    }
}

/// One calendar column over `axis`.
pub fn calendar_column(axis: &HourlyAxis, field: CalendarField) -> Vec<f64> {
    axis.iter()
        .map(|ts| {
            let p = ts.local();
            let indicator = |day: u32| f64::from(u8::from(p.weekday == day));
            match field {
                CalendarField::Hour => f64::from(p.hour),
                CalendarField::Dayofweek => f64::from(p.weekday),
                CalendarField::Month => f64::from(p.month),
                CalendarField::IsWeekend => f64::from(u8::from(p.weekday >= 5)),
                CalendarField::IsMonday => indicator(0),
                CalendarField::IsTuesday => indicator(1),
                CalendarField::IsWednesday => indicator(2),
                CalendarField::IsThursday => indicator(3),
                CalendarField::IsFriday => indicator(4),
                CalendarField::IsSaturday => indicator(5),
                CalendarField::IsSunday => indicator(6),
            }
        })
        .collect()
}

/// All calendar columns, keyed by their column names.
pub fn calendar_features(axis: &HourlyAxis) -> Vec<(&'static str, Vec<f64>)> {
    CalendarField::ALL.iter().map(|&f| (f.column_name(), calendar_column(axis, f))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HolidayRule {
    /// A fixed month/day, moved to Friday when on Saturday and Monday when on
    /// Sunday. `since` is the first year the holiday exists.
    Fixed { month: u32, day: u32, since: Option<i32> },
    /// The `n`-th `weekday` of `month`; `n = -1` means the last one.
    NthWeekday { month: u32, weekday: Weekday, n: i32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolidayCalendar {
    pub rules: Vec<(&'static str, HolidayRule)>,
}

impl HolidayCalendar {
    /// The eleven US federal holidays (Juneteenth from 2021).
    pub fn us_federal() -> Self {
        use HolidayRule::*;
        HolidayCalendar {
            rules: vec![
                ("New Year's Day", Fixed { month: 1, day: 1, since: None }),
                ("Martin Luther King Jr. Day", NthWeekday { month: 1, weekday: Weekday::Mon, n: 3 }),
                ("Washington's Birthday", NthWeekday { month: 2, weekday: Weekday::Mon, n: 3 }),
                ("Memorial Day", NthWeekday { month: 5, weekday: Weekday::Mon, n: -1 }),
                ("Juneteenth", Fixed { month: 6, day: 19, since: Some(2021) }),
                ("Independence Day", Fixed { month: 7, day: 4, since: None }),
                ("Labor Day", NthWeekday { month: 9, weekday: Weekday::Mon, n: 1 }),
                ("Columbus Day", NthWeekday { month: 10, weekday: Weekday::Mon, n: 2 }),
                ("Veterans Day", Fixed { month: 11, day: 11, since: None }),
                ("Thanksgiving", NthWeekday { month: 11, weekday: Weekday::Thu, n: 4 }),
                ("Christmas Day", Fixed { month: 12, day: 25, since: None }),
            ],
        }
    }

    /// Observed dates of the holidays defined for `year`. An observed date
    /// can fall in the neighbouring year (1 Jan on a Saturday → 31 Dec).
    pub fn observed(&self, year: i32) -> Vec<(&'static str, NaiveDate)> {
        self.rules
            .iter()
            .filter_map(|(name, rule)| Some((*name, observed_date(rule, year)?)))
            .collect()
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        (date.year() - 1..=date.year() + 1)
            .any(|y| self.observed(y).iter().any(|(_, d)| *d == date))
    }
}

fn observed_date(rule: &HolidayRule, year: i32) -> Option<NaiveDate> {
    match *rule {
        HolidayRule::Fixed { month, day, since } => {
            if since.is_some_and(|s| year < s) {
                return None;
            }
            let date = NaiveDate::from_ymd_opt(year, month, day)?;
            Some(match date.weekday() {
                Weekday::Sat => date - Duration::days(1),
                Weekday::Sun => date + Duration::days(1),
                _ => date,
            })
        }
        HolidayRule::NthWeekday { month, weekday, n } => {
            if n > 0 {
                NaiveDate::from_weekday_of_month_opt(year, month, weekday, n as u8)
            } else {
                (1..=5u8).rev().find_map(|k| NaiveDate::from_weekday_of_month_opt(year, month, weekday, k))
            }
        }
    }
}

/// Indicator of an observed federal holiday at each hour of `axis`.
pub fn holiday_column(axis: &HourlyAxis, cal: &HolidayCalendar) -> Vec<f64> {
    let mut cached: Option<(NaiveDate, f64)> = None;
    axis.iter()
        .map(|ts| {
            let date = ts.local().date();
            match cached {
                Some((d, v)) if d == date => v,
                _ => {
                    let v = f64::from(u8::from(cal.is_holiday(date)));
                    cached = Some((date, v));
                    v
                }
            }
        })
        .collect()
}
