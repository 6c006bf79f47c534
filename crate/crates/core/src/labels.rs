//! Closing-price series and the next-day movement label.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::Deserialize;

use crate::corpus::{AnswerSequence, Prepared, RawTranscript, Sector, SkipReason};
use crate::error::{Error, Result};

/// Calendar days searched forward for the call-day session and for the next session.
pub const RESOLUTION_WINDOW_DAYS: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    ticker: String,
    observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    pub fn new(ticker: impl Into<String>, observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let ticker = ticker.into();
        if let Some((d, p)) = observations
            .iter()
            .find(|(_, p)| !(*p > 0.0 && p.is_finite()))
        {
            return Err(Error::validation(format!(
                "{ticker}: close {p} on {d} is not a positive number"
            )));
        }
        if let Some(w) = observations.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::validation(format!(
                "{ticker}: dates not strictly increasing at {}",
                w[1].0
            )));
        }
        Ok(PriceSeries {
            ticker,
            observations,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Index of the first trading date on or after `date`.
    pub fn first_on_or_after(&self, date: NaiveDate) -> Option<usize> {
        let i = self.observations.partition_point(|(d, _)| *d < date);
        (i < self.observations.len()).then_some(i)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.observations
            .binary_search_by_key(&date, |(d, _)| *d)
            .ok()
    }

    /// The same series with every close multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        PriceSeries::new(
            self.ticker.clone(),
            self.observations
                .iter()
                .map(|&(d, p)| (d, p * factor))
                .collect(),
        )
    }
}

#[derive(Deserialize)]
struct PriceRow {
    ticker: String,
    date: String,
    close: f64,
}

/// Reads `ticker,date,close` CSV into one series per ticker.
pub fn read_prices<R: Read>(reader: R, source_name: &str) -> Result<BTreeMap<String, PriceSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["ticker", "date", "close"] {
        return Err(Error::parse(
            source_name,
            1,
            "header must be `ticker,date,close`",
        ));
    }

    let mut rows: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<PriceRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| Error::parse(source_name, line, format!("date {:?}: {e}", row.date)))?;
        if !(row.close > 0.0 && row.close.is_finite()) {
            return Err(Error::parse(
                source_name,
                line,
                format!("close must be positive, got {}", row.close),
            ));
        }
        rows.entry(row.ticker).or_default().push((date, row.close));
    }

    rows.into_iter()
        .map(|(ticker, mut obs)| {
            obs.sort_by_key(|(d, _)| *d);
            if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::parse(
                    source_name,
                    0,
                    format!("{ticker}: duplicate date {}", w[0].0),
                ));
            }
            let series = PriceSeries::new(ticker.clone(), obs)?;
            Ok((ticker, series))
        })
        .collect()
}

pub fn load_prices(path: &Path) -> Result<BTreeMap<String, PriceSeries>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_prices(file, &path.display().to_string())
}

/// Writes series as `ticker,date,close` CSV, tickers and dates ascending.
pub fn write_prices<W: std::io::Write>(
    out: W,
    prices: &BTreeMap<String, PriceSeries>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ticker", "date", "close"])?;
    for (ticker, series) in prices {
        for (d, p) in series.observations() {
            w.write_record([
                ticker.as_str(),
                &d.format("%Y-%m-%d").to_string(),
                &p.to_string(),
            ])?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Movement {
    pub up: bool,
    /// Session whose close is the reference price.
    pub day: NaiveDate,
    pub next_day: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unresolvable {
    NoSessionNearCall,
    NoNextSession,
}

impl fmt::Display for Unresolvable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unresolvable::NoSessionNearCall => write!(
                f,
                "no trading session within {RESOLUTION_WINDOW_DAYS} days of the call"
            ),
            Unresolvable::NoNextSession => write!(
                f,
                "no next trading session within {RESOLUTION_WINDOW_DAYS} days"
            ),
        }
    }
}

/// `up` iff the next session closes strictly above the call-day session.
///
/// A call on a non-trading day rolls forward to the next session.
pub fn movement_label(
    series: &PriceSeries,
    call_date: NaiveDate,
) -> std::result::Result<Movement, Unresolvable> {
    let window = Days::new(RESOLUTION_WINDOW_DAYS);
    let obs = series.observations();
    let i = series
        .first_on_or_after(call_date)
        .filter(|&i| obs[i].0 <= call_date + window)
        .ok_or(Unresolvable::NoSessionNearCall)?;
    let (day, close) = obs[i];
    let &(next_day, next_close) = obs
        .get(i + 1)
        .filter(|(d, _)| *d <= day + window)
        .ok_or(Unresolvable::NoNextSession)?;
    Ok(Movement {
        up: next_close > close,
        day,
        next_day,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub sequence: AnswerSequence,
    pub sector: Sector,
    pub label: bool,
    pub company_id: String,
    pub ticker: String,
    pub call_date: NaiveDate,
    pub trade_date: NaiveDate,
    pub next_trade_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExclusionReason {
    Skipped(SkipReason),
    NoPrices,
    Unresolvable(Unresolvable),
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExclusionReason::Skipped(r) => write!(f, "skipped: {r}"),
            ExclusionReason::NoPrices => write!(f, "no price series for ticker"),
            ExclusionReason::Unresolvable(r) => write!(f, "unresolvable label: {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub company_id: String,
    pub ticker: String,
    pub call_date: NaiveDate,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub exclusions: Vec<Exclusion>,
}

/// Joins transcripts, their prepared sequences (same order) and price series.
///
/// Output is sorted by `(company_id, call_date)`. Skipped sequences, tickers without
/// prices and unresolvable labels are logged as exclusions.
pub fn build_dataset(
    transcripts: &[RawTranscript],
    sequences: &[Prepared],
    prices: &BTreeMap<String, PriceSeries>,
) -> Result<Dataset> {
    if transcripts.len() != sequences.len() {
        return Err(Error::validation(format!(
            "{} transcripts but {} prepared sequences",
            transcripts.len(),
            sequences.len()
        )));
    }
    let mut seen = HashSet::new();
    for t in transcripts {
        if !seen.insert((t.ticker.as_str(), t.call_date)) {
            return Err(Error::validation(format!(
                "duplicate transcript for {} on {}",
                t.ticker, t.call_date
            )));
        }
    }

    let mut out = Dataset::default();
    for (t, prepared) in transcripts.iter().zip(sequences) {
        let exclude = |reason| Exclusion {
            company_id: t.company_id.clone(),
            ticker: t.ticker.clone(),
            call_date: t.call_date,
            reason,
        };
        let sequence = match prepared {
            Prepared::Ready(s) => s,
            Prepared::Skipped(r) => {
                out.exclusions
                    .push(exclude(ExclusionReason::Skipped(r.clone())));
                continue;
            }
        };
        let Some(series) = prices.get(&t.ticker).filter(|s| !s.is_empty()) else {
            out.exclusions.push(exclude(ExclusionReason::NoPrices));
            continue;
        };
        match movement_label(series, t.call_date) {
            Ok(m) => out.examples.push(LabeledExample {
                sequence: sequence.clone(),
                sector: t.sector,
                label: m.up,
                company_id: t.company_id.clone(),
                ticker: t.ticker.clone(),
                call_date: t.call_date,
                trade_date: m.day,
                next_trade_date: m.next_day,
            }),
            Err(u) => out
                .exclusions
                .push(exclude(ExclusionReason::Unresolvable(u))),
        }
    }
    out.examples
        .sort_by(|a, b| (&a.company_id, a.call_date).cmp(&(&b.company_id, b.call_date)));
    out.exclusions
        .sort_by(|a, b| (&a.company_id, a.call_date).cmp(&(&b.company_id, b.call_date)));
    Ok(out)
}
