//! Constant-maturity price panels built from dated quote cross-sections.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quotes::FuturesQuote;
use crate::spline::{Boundary, CubicSpline};

/// 30, 60, ..., 720 days.
pub fn default_grid() -> Vec<u32> {
    (1..=24).map(|i| 30 * i).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Observed,
    Interpolated,
    Extrapolated,
}

impl Provenance {
    pub fn code(self) -> char {
        match self {
            Provenance::Observed => 'O',
            Provenance::Interpolated => 'I',
            Provenance::Extrapolated => 'E',
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c.trim() {
            "O" => Some(Provenance::Observed),
            "I" => Some(Provenance::Interpolated),
            "E" => Some(Provenance::Extrapolated),
            _ => None,
        }
    }
}

/// T x M prices on a fixed maturity grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaturityPanel {
    dates: Vec<NaiveDate>,
    maturities: Vec<u32>,
    prices: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl MaturityPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        maturities: Vec<u32>,
        prices: Vec<f64>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let cells = dates.len() * maturities.len();
        if prices.len() != cells || provenance.len() != cells {
            return Err(Error::invalid(format!(
                "panel of {}x{} needs {cells} cells, got {} prices and {} flags",
                dates.len(),
                maturities.len(),
                prices.len(),
                provenance.len()
            )));
        }
        if maturities.is_empty() || maturities.windows(2).any(|w| w[1] <= w[0]) || maturities[0] == 0 {
            return Err(Error::invalid("maturities must be positive and strictly increasing"));
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("panel dates must be strictly increasing"));
        }
        if let Some(p) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::invalid(format!("panel price {p} is not finite and positive")));
        }
        Ok(Self {
            dates,
            maturities,
            prices,
            provenance,
        })
    }

    /// Panel whose every cell is flagged observed.
    pub fn from_rows(dates: Vec<NaiveDate>, maturities: Vec<u32>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = maturities.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("ragged panel rows"));
        }
        let prices: Vec<f64> = rows.into_iter().flatten().collect();
        let provenance = vec![Provenance::Observed; prices.len()];
        Self::new(dates, maturities, prices, provenance)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn maturities(&self) -> &[u32] {
        &self.maturities
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_maturities(&self) -> usize {
        self.maturities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.maturities.len();
        &self.prices[t * m..(t + 1) * m]
    }

    pub fn provenance_row(&self, t: usize) -> &[Provenance] {
        let m = self.maturities.len();
        &self.provenance[t * m..(t + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.prices.chunks(self.maturities.len())
    }

    pub fn price(&self, t: usize, j: usize) -> f64 {
        self.prices[t * self.maturities.len() + j]
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Sub-panel of the given rows.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let m = self.maturities.len();
        Self {
            dates: rows.iter().map(|&t| self.dates[t]).collect(),
            maturities: self.maturities.clone(),
            prices: rows.iter().flat_map(|&t| self.prices[t * m..(t + 1) * m].iter().copied()).collect(),
            provenance: rows
                .iter()
                .flat_map(|&t| self.provenance[t * m..(t + 1) * m].iter().copied())
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.to_string()];
            rec.extend(self.row(t).iter().map(|p| p.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_provenance_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.to_string()];
            rec.extend(self.provenance_row(t).iter().map(|p| p.code().to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        std::iter::once("date".to_string())
            .chain(self.maturities.iter().map(|m| m.to_string()))
            .collect()
    }

    /// Reads a panel file and, when given, its provenance sibling.
    pub fn read_csv<R: Read, P: Read>(prices: R, provenance: Option<P>) -> Result<Self> {
        let (dates, maturities, cells) = read_grid(prices)?;
        let prices = cells
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse::<f64>().map_err(|_| Error::MalformedRow {
                    line: i / maturities.len() + 2,
                    message: format!("bad price `{s}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let provenance = match provenance {
            Some(r) => {
                let (pd, pm, codes) = read_grid(r)?;
                if pd != dates || pm != maturities {
                    return Err(Error::invalid("provenance file does not match the panel shape"));
                }
                codes
                    .iter()
                    .map(|c| Provenance::from_code(c).ok_or_else(|| Error::invalid(format!("bad provenance `{c}`"))))
                    .collect::<Result<Vec<_>>>()?
            }
            None => vec![Provenance::Observed; prices.len()],
        };
        Self::new(dates, maturities, prices, provenance)
    }
}

fn read_grid<R: Read>(r: R) -> Result<(Vec<NaiveDate>, Vec<u32>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = reader.headers()?.clone();
    let maturities = header
        .iter()
        .skip(1)
        .map(|h| {
            h.parse::<u32>().map_err(|_| Error::MalformedRow {
                line: 1,
                message: format!("maturity header `{h}` is not an integer"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let d = rec.get(0).unwrap_or("");
        dates.push(NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|_| Error::MalformedRow {
            line: i + 2,
            message: format!("bad date `{d}`"),
        })?);
        cells.extend(rec.iter().skip(1).map(str::to_string));
    }
    Ok((dates, maturities, cells))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtrapolationPolicy {
    /// Any grid maturity outside the observed span is an error.
    #[default]
    Fail,
    /// Dates that would need extrapolation are dropped and reported.
    Drop,
    /// Hold the boundary knot value.
    Flat,
    /// Continue along the spline's boundary tangent.
    Linear,
}

impl FromStr for ExtrapolationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fail" => Ok(Self::Fail),
            "drop" => Ok(Self::Drop),
            "flat" | "flat-extend" => Ok(Self::Flat),
            "linear" | "linear-extend" => Ok(Self::Linear),
            _ => Err(Error::Config(format!("unknown extrapolation policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelOptions {
    pub grid: Vec<u32>,
    pub extrapolation: ExtrapolationPolicy,
    pub boundary: Boundary,
    /// Keep only the last observation date of each calendar month.
    pub month_end: bool,
    /// Largest relative disagreement tolerated between duplicate settles
    /// before they are averaged.
    pub duplicate_tolerance: f64,
    /// Overshoot beyond this fraction of the bracketing knots' spread is
    /// reported as a diagnostic.
    pub overshoot_tolerance: f64,
}

impl Default for PanelOptions {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            extrapolation: ExtrapolationPolicy::Fail,
            boundary: Boundary::NotAKnot,
            month_end: false,
            duplicate_tolerance: 0.10,
            overshoot_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedDate {
    pub date: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overshoot {
    pub date: NaiveDate,
    pub maturity: u32,
    /// Overshoot divided by the local knot spread.
    pub relative: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PanelReport {
    pub dropped: Vec<DroppedDate>,
    pub overshoots: Vec<Overshoot>,
    pub duplicates_averaged: usize,
}

enum DateOutcome {
    Row {
        prices: Vec<f64>,
        provenance: Vec<Provenance>,
        overshoots: Vec<Overshoot>,
        duplicates: usize,
    },
    Dropped(String),
}

/// Keeps the last observation date of every calendar month.
pub fn month_end_dates(dates: impl IntoIterator<Item = NaiveDate>) -> Vec<NaiveDate> {
    let mut last: BTreeMap<(i32, u32), NaiveDate> = BTreeMap::new();
    for d in dates {
        let e = last.entry((d.year(), d.month())).or_insert(d);
        if d > *e {
            *e = d;
        }
    }
    last.into_values().collect()
}

/// Interpolates every date's quoted cross-section onto the grid.
///
/// Quotes must carry `tau` (see [`crate::quotes::attach_maturity`]).
pub fn build_panel(quotes: &[FuturesQuote], opts: &PanelOptions) -> Result<(MaturityPanel, PanelReport)> {
    if opts.grid.is_empty() || opts.grid.windows(2).any(|w| w[1] <= w[0]) || opts.grid[0] == 0 {
        return Err(Error::invalid("grid maturities must be positive and strictly increasing"));
    }
    let mut by_date: BTreeMap<NaiveDate, Vec<(u32, f64)>> = BTreeMap::new();
    for q in quotes {
        let tau = q
            .tau
            .ok_or_else(|| Error::invalid(format!("quote {} on {} has no maturity", q.contract, q.observation_date)))?;
        by_date.entry(q.observation_date).or_default().push((tau, q.settle));
    }
    if opts.month_end {
        let keep = month_end_dates(by_date.keys().copied());
        by_date.retain(|d, _| keep.binary_search(d).is_ok());
    }

    let sections: Vec<(NaiveDate, Vec<(u32, f64)>)> = by_date.into_iter().collect();
    let outcomes: Vec<Result<DateOutcome>> = sections
        .par_iter()
        .map(|(date, points)| cross_section(*date, points, opts))
        .collect();

    let mut report = PanelReport::default();
    let (mut dates, mut prices, mut provenance) = (Vec::new(), Vec::new(), Vec::new());
    for ((date, _), outcome) in sections.iter().zip(outcomes) {
        match outcome? {
            DateOutcome::Row {
                prices: p,
                provenance: f,
                overshoots,
                duplicates,
            } => {
                dates.push(*date);
                prices.extend(p);
                provenance.extend(f);
                report.overshoots.extend(overshoots);
                report.duplicates_averaged += duplicates;
            }
            DateOutcome::Dropped(reason) => report.dropped.push(DroppedDate { date: *date, reason }),
        }
    }
    let panel = MaturityPanel::new(dates, opts.grid.clone(), prices, provenance)?;
    Ok((panel, report))
}

fn cross_section(date: NaiveDate, points: &[(u32, f64)], opts: &PanelOptions) -> Result<DateOutcome> {
    let mut grouped: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &(tau, settle) in points {
        grouped.entry(tau).or_default().push(settle);
    }
    let mut duplicates = 0;
    let mut taus = Vec::with_capacity(grouped.len());
    let mut values = Vec::with_capacity(grouped.len());
    for (tau, settles) in grouped {
        if settles.len() > 1 {
            let lo = settles.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = settles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if (hi - lo) > opts.duplicate_tolerance * lo {
                return Err(Error::DuplicateConflict { date, tau, low: lo, high: hi });
            }
            duplicates += settles.len() - 1;
        }
        taus.push(tau);
        values.push(settles.iter().sum::<f64>() / settles.len() as f64);
    }
    if taus.len() < 4 {
        if opts.extrapolation == ExtrapolationPolicy::Fail {
            return Err(Error::TooFewPoints { date, points: taus.len() });
        }
        return Ok(DateOutcome::Dropped(format!("{} distinct maturities", taus.len())));
    }

    let x: Vec<f64> = taus.iter().map(|&t| t as f64).collect();
    let spline = CubicSpline::new(&x, &values, opts.boundary).map_err(|e| e.at(date))?;
    let (lo, hi) = (taus[0], taus[taus.len() - 1]);
    let mut prices = Vec::with_capacity(opts.grid.len());
    let mut provenance = Vec::with_capacity(opts.grid.len());
    let mut overshoots = Vec::new();
    for &g in &opts.grid {
        let gf = g as f64;
        if let Ok(k) = taus.binary_search(&g) {
            prices.push(values[k]);
            provenance.push(Provenance::Observed);
        } else if g > lo && g < hi {
            let v = spline.eval(gf);
            let k = taus.partition_point(|&t| t < g);
            let (a, b) = (values[k - 1], values[k]);
            let spread = (a - b).abs();
            let over = (a.min(b) - v).max(v - a.max(b)).max(0.0);
            if over > opts.overshoot_tolerance * spread {
                overshoots.push(Overshoot {
                    date,
                    maturity: g,
                    relative: if spread > 0.0 { over / spread } else { f64::INFINITY },
                });
            }
            prices.push(v);
            provenance.push(Provenance::Interpolated);
        } else {
            let (edge, edge_value) = if g < lo { (lo, values[0]) } else { (hi, values[values.len() - 1]) };
            let v = match opts.extrapolation {
                ExtrapolationPolicy::Fail => {
                    return Err(Error::ExtrapolationRequired { date, maturity: g, lo, hi });
                }
                ExtrapolationPolicy::Drop => {
                    return Ok(DateOutcome::Dropped(format!("maturity {g} outside [{lo}, {hi}]")));
                }
                ExtrapolationPolicy::Flat => edge_value,
                ExtrapolationPolicy::Linear => edge_value + spline.derivative(edge as f64) * (gf - edge as f64),
            };
            prices.push(v);
            provenance.push(Provenance::Extrapolated);
        }
    }
    if let Some(p) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Ok(DateOutcome::Dropped(format!("non-positive grid price {p}")));
    }
    Ok(DateOutcome::Row {
        prices,
        provenance,
        overshoots,
        duplicates,
    })
}

impl fmt::Display for PanelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} dates dropped, {} overshoot flags, {} duplicate quotes averaged",
            self.dropped.len(),
            self.overshoots.len(),
            self.duplicates_averaged
        )
    }
}
