//! Raw futures quotes: CSV ingestion, contract codes and days-to-maturity.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{expiry_date, TradingCalendar};
use crate::error::{Error, Result};

const MONTH_CODES: [char; 12] = ['F', 'G', 'H', 'J', 'K', 'M', 'N', 'Q', 'U', 'V', 'X', 'Z'];

/// Product code, delivery month and delivery year, e.g. `CLQ2003`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContractCode {
    pub product: String,
    pub delivery_month: u32,
    pub delivery_year: i32,
}

impl ContractCode {
    pub fn month_letter(month: u32) -> Option<char> {
        MONTH_CODES.get(month.checked_sub(1)? as usize).copied()
    }

    pub fn month_from_letter(c: char) -> Option<u32> {
        MONTH_CODES.iter().position(|m| *m == c).map(|i| i as u32 + 1)
    }
}

impl FromStr for ContractCode {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        let s = s.trim();
        if s.len() < 6 || !s.is_ascii() {
            return Err(());
        }
        let (head, year) = s.split_at(s.len() - 4);
        let (product, letter) = head.split_at(head.len() - 1);
        if product.is_empty() || !product.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(());
        }
        if !year.chars().all(|c| c.is_ascii_digit()) {
            return Err(());
        }
        let delivery_month = Self::month_from_letter(letter.chars().next().ok_or(())?).ok_or(())?;
        Ok(Self {
            product: product.to_string(),
            delivery_month,
            delivery_year: year.parse().map_err(|_| ())?,
        })
    }
}

impl fmt::Display for ContractCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letter = Self::month_letter(self.delivery_month).unwrap_or('?');
        write!(f, "{}{}{:04}", self.product, letter, self.delivery_year)
    }
}

impl Ord for ContractCode {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.product, self.delivery_year, self.delivery_month).cmp(&(
            &other.product,
            other.delivery_year,
            other.delivery_month,
        ))
    }
}

impl PartialOrd for ContractCode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A contract together with its computed last trading day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractSpec {
    pub code: ContractCode,
    pub expiry_date: NaiveDate,
}

impl ContractSpec {
    pub fn resolve(code: ContractCode, cal: &TradingCalendar) -> Result<Self> {
        let expiry_date = expiry_date(code.delivery_month, code.delivery_year, cal)?;
        Ok(Self { code, expiry_date })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuturesQuote {
    pub contract: ContractCode,
    pub observation_date: NaiveDate,
    /// USD per barrel.
    pub settle: f64,
    /// Filled in by [`attach_maturity`].
    pub expiry: Option<NaiveDate>,
    /// Days to maturity under the configured day count.
    pub tau: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateFormat {
    #[default]
    Auto,
    /// `DD.MM.YYYY`, leading zeros optional.
    DayMonthYear,
    /// `YYYY-MM-DD`.
    Iso,
}

impl DateFormat {
    fn detect(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.contains('.') {
            Some(DateFormat::DayMonthYear)
        } else if s.len() == 10 && s.as_bytes()[4] == b'-' && s.as_bytes()[7] == b'-' {
            Some(DateFormat::Iso)
        } else {
            None
        }
    }

    fn parse(self, s: &str) -> Option<NaiveDate> {
        let s = s.trim();
        match self {
            DateFormat::Iso => NaiveDate::parse_from_str(s, "%Y-%m-%d").ok(),
            DateFormat::DayMonthYear => NaiveDate::parse_from_str(s, "%d.%m.%Y").ok(),
            DateFormat::Auto => Self::detect(s).and_then(|f| f.parse(s)),
        }
    }
}

/// Column mapping of a quote file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteFormat {
    pub date_column: String,
    pub contract_column: String,
    pub settle_column: String,
    pub date_format: DateFormat,
}

impl Default for QuoteFormat {
    fn default() -> Self {
        Self {
            date_column: "date".into(),
            contract_column: "contract".into(),
            settle_column: "settle".into(),
            date_format: DateFormat::Auto,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedQuotes {
    pub quotes: Vec<FuturesQuote>,
    /// Rows whose settle was empty or `-`.
    pub skipped_missing: usize,
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "-" | "NA" | "NaN" | "nan")
}

/// Parses a quote CSV. Rows with a missing settle are skipped and counted;
/// the result is sorted by observation date, then contract.
pub fn parse_quotes<R: Read>(source: R, format: &QuoteFormat) -> Result<ParsedQuotes> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    // An empty source has no header row.
    if headers.is_empty() {
        return Ok(ParsedQuotes::default());
    }
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MalformedRow {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (di, ci, si) = (
        col(&format.date_column)?,
        col(&format.contract_column)?,
        col(&format.settle_column)?,
    );

    let mut fixed = match format.date_format {
        DateFormat::Auto => None,
        f => Some(f),
    };
    let mut out = ParsedQuotes::default();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let date_str = field(di);
        let fmt = match fixed {
            Some(f) => f,
            None => {
                let f = DateFormat::detect(date_str).ok_or_else(|| {
                    Error::AmbiguousDateFormat(format!("line {line}: cannot recognise `{date_str}`"))
                })?;
                fixed = Some(f);
                f
            }
        };
        if format.date_format == DateFormat::Auto && DateFormat::detect(date_str) != Some(fmt) {
            return Err(Error::AmbiguousDateFormat(format!(
                "line {line}: `{date_str}` does not match the file's {fmt:?} dates"
            )));
        }
        let observation_date = fmt.parse(date_str).ok_or_else(|| Error::MalformedRow {
            line,
            message: format!("bad date `{date_str}`"),
        })?;
        let code = field(ci);
        let contract: ContractCode = code.parse().map_err(|_| Error::UnknownContract {
            line,
            code: code.to_string(),
        })?;
        let settle_str = field(si);
        if is_missing(settle_str) {
            out.skipped_missing += 1;
            continue;
        }
        let settle: f64 = settle_str.parse().map_err(|_| Error::MalformedRow {
            line,
            message: format!("bad settle `{settle_str}`"),
        })?;
        if !settle.is_finite() || settle <= 0.0 {
            return Err(Error::MalformedRow {
                line,
                message: format!("settle must be positive, got {settle}"),
            });
        }
        out.quotes.push(FuturesQuote {
            contract,
            observation_date,
            settle,
            expiry: None,
            tau: None,
        });
    }
    out.quotes
        .sort_by(|a, b| (a.observation_date, &a.contract).cmp(&(b.observation_date, &b.contract)));
    Ok(out)
}

/// Writes quotes as `date,contract,settle` with ISO dates, readable by
/// [`parse_quotes`] with the default format.
pub fn write_quotes_csv<W: Write>(quotes: &[FuturesQuote], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "contract", "settle"])?;
    for q in quotes {
        out.write_record([q.observation_date.to_string(), q.contract.to_string(), q.settle.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayCount {
    /// Trading days after the observation date up to and including expiry.
    #[default]
    TradingDays,
    CalendarDays,
}

impl FromStr for DayCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trading_days" | "trading" => Ok(DayCount::TradingDays),
            "calendar_days" | "calendar" => Ok(DayCount::CalendarDays),
            _ => Err(Error::Config(format!("unknown day count `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaturedQuotes {
    pub quotes: Vec<FuturesQuote>,
    /// Quotes observed after their contract's expiry.
    pub dropped_expired: usize,
}

/// Computes each quote's expiry and days-to-maturity. Expiry dates are
/// computed once per distinct contract.
pub fn attach_maturity(
    quotes: Vec<FuturesQuote>,
    cal: &TradingCalendar,
    day_count: DayCount,
) -> Result<MaturedQuotes> {
    let mut expiries: std::collections::HashMap<ContractCode, NaiveDate> = Default::default();
    let mut out = MaturedQuotes::default();
    for mut q in quotes {
        let expiry = match expiries.get(&q.contract) {
            Some(e) => *e,
            None => {
                let e = ContractSpec::resolve(q.contract.clone(), cal)?.expiry_date;
                expiries.insert(q.contract.clone(), e);
                e
            }
        };
        if q.observation_date > expiry {
            out.dropped_expired += 1;
            continue;
        }
        let tau = match day_count {
            DayCount::TradingDays => cal.trading_days_between(q.observation_date, expiry),
            DayCount::CalendarDays => (expiry - q.observation_date).num_days() as u32,
        };
        q.expiry = Some(expiry);
        q.tau = Some(tau);
        out.quotes.push(q);
    }
    Ok(out)
}
