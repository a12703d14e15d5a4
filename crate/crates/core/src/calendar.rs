//! Trading calendars and futures expiry arithmetic.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};

use crate::error::{Error, Result};

pub const MIN_DELIVERY_YEAR: i32 = 1980;
pub const MAX_DELIVERY_YEAR: i32 = 2100;

/// Weekend days plus an explicit holiday list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    weekend: [bool; 7],
    holidays: BTreeSet<NaiveDate>,
}

impl Default for TradingCalendar {
    fn default() -> Self {
        Self::weekends_only()
    }
}

impl TradingCalendar {
    pub fn new(weekend_days: &[Weekday], holidays: impl IntoIterator<Item = NaiveDate>) -> Self {
        let mut weekend = [false; 7];
        for d in weekend_days {
            weekend[d.num_days_from_monday() as usize] = true;
        }
        Self {
            weekend,
            holidays: holidays.into_iter().collect(),
        }
    }

    /// Saturday and Sunday closed, no holidays.
    pub fn weekends_only() -> Self {
        Self::new(&[Weekday::Sat, Weekday::Sun], [])
    }

    pub fn with_holidays(mut self, holidays: impl IntoIterator<Item = NaiveDate>) -> Self {
        self.holidays.extend(holidays);
        self
    }

    pub fn holidays(&self) -> &BTreeSet<NaiveDate> {
        &self.holidays
    }

    pub fn is_weekend(&self, d: NaiveDate) -> bool {
        self.weekend[d.weekday().num_days_from_monday() as usize]
    }

    pub fn is_trading_day(&self, d: NaiveDate) -> bool {
        !self.is_weekend(d) && !self.holidays.contains(&d)
    }

    /// The nearest trading day on or before `d`.
    pub fn roll_back(&self, mut d: NaiveDate) -> NaiveDate {
        while !self.is_trading_day(d) {
            d = d.pred_opt().expect("date underflow");
        }
        d
    }

    /// Steps back `n` trading days from `d` (exclusive of `d`).
    pub fn sub_trading_days(&self, mut d: NaiveDate, n: u32) -> NaiveDate {
        let mut left = n;
        while left > 0 {
            d = d.pred_opt().expect("date underflow");
            if self.is_trading_day(d) {
                left -= 1;
            }
        }
        d
    }

    /// Number of trading days `d` with `from < d <= to`; zero when `to <= from`.
    pub fn trading_days_between(&self, from: NaiveDate, to: NaiveDate) -> u32 {
        if to <= from {
            return 0;
        }
        let span = (to - from).num_days() as u64;
        let open_per_week = self.weekend.iter().filter(|w| !**w).count() as u64;
        let mut count = (span / 7) * open_per_week;
        let rem = span % 7;
        let mut d = from + Days::new(span - rem);
        for _ in 0..rem {
            d = d.succ_opt().expect("date overflow");
            if !self.is_weekend(d) {
                count += 1;
            }
        }
        let closed = self
            .holidays
            .range(from.succ_opt().expect("date overflow")..=to)
            .filter(|h| !self.is_weekend(**h))
            .count() as u64;
        (count - closed) as u32
    }

    /// Reads a holiday file: one ISO date per line, blank lines and `#`
    /// comments ignored.
    pub fn parse_holidays(text: &str) -> Result<Vec<NaiveDate>> {
        text.lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(line, l)| {
                NaiveDate::parse_from_str(l, "%Y-%m-%d").map_err(|e| Error::MalformedRow {
                    line,
                    message: format!("holiday `{l}`: {e}"),
                })
            })
            .collect()
    }

    pub fn from_holiday_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::weekends_only().with_holidays(Self::parse_holidays(&text)?))
    }
}

/// Last trading day of the contract delivering in `delivery_month` of
/// `delivery_year`: three trading days before the 25th of the preceding
/// month, where a non-trading 25th first rolls back to the nearest trading day.
pub fn expiry_date(delivery_month: u32, delivery_year: i32, cal: &TradingCalendar) -> Result<NaiveDate> {
    if !(MIN_DELIVERY_YEAR..=MAX_DELIVERY_YEAR).contains(&delivery_year) || !(1..=12).contains(&delivery_month) {
        return Err(Error::CalendarRange {
            year: delivery_year,
            month: delivery_month,
        });
    }
    let (y, m) = if delivery_month == 1 {
        (delivery_year - 1, 12)
    } else {
        (delivery_year, delivery_month - 1)
    };
    let anchor = NaiveDate::from_ymd_opt(y, m, 25).expect("the 25th always exists");
    Ok(cal.sub_trading_days(cal.roll_back(anchor), 3))
}
