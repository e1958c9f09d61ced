//! Parsing and calendar alignment of long-format meter data.
//!
//! Input files carry one reading per row (`timestamp`, `building_id`,
//! `meter_reading` by default). Readings are aligned per site onto a shared
//! hourly calendar that starts at a midnight and spans whole days, so
//! day-based indexing downstream stays trivial: hour `24 * d` of every
//! series is midnight of day `d`.
//!
//! Malformed rows are never dropped silently: they are counted and surfaced
//! in [`ParseOutcome`], as are duplicate-timestamp overwrites and records
//! trimmed off a trailing partial day during alignment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use thiserror::Error;

/// Hours per day; every aligned series length is a multiple of this.
pub const HOURS_PER_DAY: usize = 24;

/// Timestamp layout accepted by the parser and emitted by the writers.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Default longest run of missing hours that linear imputation bridges.
pub const DEFAULT_MAX_GAP: usize = 3;

/// How many example diagnostics to retain for malformed rows.
const MAX_ROW_DIAGNOSTICS: usize = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("column {column:?} not found in header")]
    MissingColumn { column: String },
    #[error("no parseable rows ({malformed} malformed out of {rows_read})")]
    NoParseableRows { rows_read: usize, malformed: usize },
    #[error("no records for site {site_id:?}")]
    EmptySite { site_id: String },
    #[error("records for site {site_id:?} span less than one whole day")]
    SpanTooShort { site_id: String },
    #[error("write error for {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Column names and site-attribution rules for [`parse_csv`].
///
/// Site attribution precedence: a site column when the header has one, then
/// a building-id prefix up to `site_prefix_delimiter`, then `default_site`.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub timestamp: String,
    pub building_id: String,
    pub reading: String,
    /// Name of the optional site column. Used only when present in the header.
    pub site: String,
    /// When set, a building id like `Panther_office_Ann` puts the building in
    /// site `Panther` (prefix up to the first delimiter).
    pub site_prefix_delimiter: Option<char>,
    pub default_site: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: "timestamp".to_string(),
            building_id: "building_id".to_string(),
            reading: "meter_reading".to_string(),
            site: "site_id".to_string(),
            site_prefix_delimiter: None,
            default_site: "site0".to_string(),
        }
    }
}

/// One parsed meter reading. `reading` is `None` for an explicitly missing
/// value (empty cell or NaN literal).
#[derive(Debug, Clone, PartialEq)]
pub struct MeterRecord {
    pub timestamp: NaiveDateTime,
    pub building_id: String,
    pub site_id: String,
    pub reading: Option<f64>,
}

/// Parse result: records in file order plus row-level accounting.
#[derive(Debug)]
pub struct ParseOutcome {
    pub records: Vec<MeterRecord>,
    pub rows_read: usize,
    pub malformed: usize,
    /// Up to a handful of `row N: reason` strings for the report.
    pub diagnostics: Vec<String>,
}

/// One building's hourly series on the aligned calendar.
///
/// Invariants: `start` is a midnight, `values.len()` is a multiple of 24.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSeries {
    pub building_id: String,
    pub site_id: String,
    pub start: NaiveDateTime,
    pub values: Vec<Option<f64>>,
}

impl MeterSeries {
    pub fn n_hours(&self) -> usize {
        self.values.len()
    }

    pub fn n_days(&self) -> usize {
        self.values.len() / HOURS_PER_DAY
    }

    pub fn date_of_day(&self, day: usize) -> NaiveDate {
        self.start.date() + chrono::Days::new(day as u64)
    }

    pub fn weekday_of_day(&self, day: usize) -> Weekday {
        self.date_of_day(day).weekday()
    }

    pub fn timestamp_of_hour(&self, hour: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours(hour as i64)
    }

    /// True when every hour of `day` holds a value.
    pub fn day_complete(&self, day: usize) -> bool {
        let s = day * HOURS_PER_DAY;
        self.values[s..s + HOURS_PER_DAY].iter().all(Option::is_some)
    }

    /// Linear interpolation across interior missing runs of length at most
    /// `max_gap`. Runs touching either end of the series have no anchor on
    /// one side and stay missing, as do longer runs.
    pub fn impute_short_gaps(&self, max_gap: usize) -> MeterSeries {
        let mut values = self.values.clone();
        let n = values.len();
        let mut i = 0;
        while i < n {
            if values[i].is_some() {
                i += 1;
                continue;
            }
            let run_start = i;
            while i < n && values[i].is_none() {
                i += 1;
            }
            let run_len = i - run_start;
            if run_start == 0 || i == n || run_len > max_gap {
                continue;
            }
            let left = values[run_start - 1].expect("run is bounded");
            let right = values[i].expect("run is bounded");
            let span = (run_len + 1) as f64;
            for (k, slot) in values[run_start..i].iter_mut().enumerate() {
                let t = (k + 1) as f64 / span;
                *slot = Some(left + (right - left) * t);
            }
        }
        MeterSeries {
            values,
            ..self.clone()
        }
    }
}

/// All buildings of one site on a common calendar.
///
/// Invariant: every series shares `start` and length; series are sorted by
/// building id.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub site_id: String,
    pub start: NaiveDateTime,
    pub series: Vec<MeterSeries>,
}

impl Portfolio {
    pub fn n_days(&self) -> usize {
        self.series.first().map_or(0, MeterSeries::n_days)
    }

    pub fn n_hours(&self) -> usize {
        self.series.first().map_or(0, MeterSeries::n_hours)
    }

    pub fn building_ids(&self) -> Vec<&str> {
        self.series.iter().map(|s| s.building_id.as_str()).collect()
    }

    pub fn date_of_day(&self, day: usize) -> NaiveDate {
        self.start.date() + chrono::Days::new(day as u64)
    }

    /// Imputed copy; see [`MeterSeries::impute_short_gaps`].
    pub fn impute_short_gaps(&self, max_gap: usize) -> Portfolio {
        Portfolio {
            site_id: self.site_id.clone(),
            start: self.start,
            series: self
                .series
                .iter()
                .map(|s| s.impute_short_gaps(max_gap))
                .collect(),
        }
    }
}

/// Alignment result plus the duplicate/trim accounting for the report.
#[derive(Debug)]
pub struct AlignOutcome {
    pub portfolio: Portfolio,
    /// Records that landed on an already-filled (building, hour) slot and
    /// overwrote it (last write wins).
    pub duplicate_overwrites: usize,
    /// Records dropped with the trailing partial day.
    pub trimmed_records: usize,
}

/// Parse a long-format meter CSV.
///
/// Rows that cannot be interpreted (bad timestamp, negative or non-finite
/// reading, missing fields) are counted as malformed and skipped; an empty
/// or NaN reading cell is a well-formed *missing* reading. Timestamps must
/// sit on a whole hour.
///
/// # Errors
///
/// Unreadable file, a header lacking a mapped column, or zero parseable rows.
pub fn parse_csv(path: &Path, columns: &ColumnMap) -> Result<ParseOutcome, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_reader(file, columns, path)
}

/// [`parse_csv`] over any reader; `origin` only decorates error messages.
pub fn parse_reader<R: std::io::Read>(
    reader: R,
    columns: &ColumnMap,
    origin: &Path,
) -> Result<ParseOutcome, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|source| IngestError::Csv {
            path: origin.to_path_buf(),
            source,
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let ts_idx = col(&columns.timestamp).ok_or_else(|| IngestError::MissingColumn {
        column: columns.timestamp.clone(),
    })?;
    let bld_idx = col(&columns.building_id).ok_or_else(|| IngestError::MissingColumn {
        column: columns.building_id.clone(),
    })?;
    let val_idx = col(&columns.reading).ok_or_else(|| IngestError::MissingColumn {
        column: columns.reading.clone(),
    })?;
    let site_idx = col(&columns.site);

    let mut records = Vec::new();
    let mut rows_read = 0usize;
    let mut malformed = 0usize;
    let mut diagnostics = Vec::new();
    let bad_row = |row: usize, reason: &str, diagnostics: &mut Vec<String>| {
        if diagnostics.len() < MAX_ROW_DIAGNOSTICS {
            diagnostics.push(format!("row {row}: {reason}"));
        }
    };

    for (i, row) in rdr.records().enumerate() {
        rows_read += 1;
        // Header is line 1; first data row is line 2.
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                malformed += 1;
                bad_row(line, "unparseable csv row", &mut diagnostics);
                continue;
            }
        };
        let field = |idx: usize| row.get(idx);
        let (ts_raw, bld_raw, val_raw) = match (field(ts_idx), field(bld_idx), field(val_idx)) {
            (Some(t), Some(b), Some(v)) => (t, b, v),
            _ => {
                malformed += 1;
                bad_row(line, "missing fields", &mut diagnostics);
                continue;
            }
        };
        let timestamp = match NaiveDateTime::parse_from_str(ts_raw, TIMESTAMP_FORMAT) {
            Ok(t) if t.minute() == 0 && t.second() == 0 => t,
            Ok(_) => {
                malformed += 1;
                bad_row(line, "timestamp not on a whole hour", &mut diagnostics);
                continue;
            }
            Err(_) => {
                malformed += 1;
                bad_row(line, "bad timestamp", &mut diagnostics);
                continue;
            }
        };
        if bld_raw.is_empty() {
            malformed += 1;
            bad_row(line, "empty building id", &mut diagnostics);
            continue;
        }
        let reading = if val_raw.is_empty() || val_raw.eq_ignore_ascii_case("nan") {
            None
        } else {
            match val_raw.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Some(v),
                Ok(_) => {
                    malformed += 1;
                    bad_row(line, "reading negative or not finite", &mut diagnostics);
                    continue;
                }
                Err(_) => {
                    malformed += 1;
                    bad_row(line, "unparseable reading", &mut diagnostics);
                    continue;
                }
            }
        };
        let site_id = site_idx
            .and_then(|idx| field(idx))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| match columns.site_prefix_delimiter {
                Some(d) => bld_raw
                    .split(d)
                    .next()
                    .filter(|p| !p.is_empty())
                    .unwrap_or(&columns.default_site)
                    .to_string(),
                None => columns.default_site.clone(),
            });
        records.push(MeterRecord {
            timestamp,
            building_id: bld_raw.to_string(),
            site_id,
            reading,
        });
    }

    if records.is_empty() {
        return Err(IngestError::NoParseableRows { rows_read, malformed });
    }
    Ok(ParseOutcome {
        records,
        rows_read,
        malformed,
        diagnostics,
    })
}

/// Sorted unique site ids present in a record batch.
pub fn site_ids(records: &[MeterRecord]) -> Vec<String> {
    let mut ids: Vec<String> = records.iter().map(|r| r.site_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Align one site's records onto a shared whole-day hourly calendar.
///
/// The calendar runs from the midnight at or before the earliest record to
/// the end of the last *complete* day before the latest record; a trailing
/// partial day is trimmed and its records counted. Hours nobody reported are
/// missing. A record landing on an occupied slot overwrites it (last write
/// wins) and is counted. Reading values are never altered.
///
/// # Errors
///
/// No records for the site, or a span shorter than one whole day.
pub fn align(records: &[MeterRecord], site_id: &str) -> Result<AlignOutcome, IngestError> {
    let site_records: Vec<&MeterRecord> =
        records.iter().filter(|r| r.site_id == site_id).collect();
    if site_records.is_empty() {
        return Err(IngestError::EmptySite {
            site_id: site_id.to_string(),
        });
    }

    let min_ts = site_records.iter().map(|r| r.timestamp).min().expect("nonempty");
    let max_ts = site_records.iter().map(|r| r.timestamp).max().expect("nonempty");
    let start = min_ts
        .date()
        .and_hms_opt(0, 0, 0)
        .expect("midnight is valid");
    let span_hours = (max_ts - start).num_hours() as usize + 1;
    let n_days = span_hours / HOURS_PER_DAY;
    if n_days == 0 {
        return Err(IngestError::SpanTooShort {
            site_id: site_id.to_string(),
        });
    }
    let n_hours = n_days * HOURS_PER_DAY;

    let mut by_building: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for r in &site_records {
        by_building
            .entry(r.building_id.as_str())
            .or_insert_with(|| vec![None; n_hours]);
    }

    let mut duplicate_overwrites = 0usize;
    let mut trimmed_records = 0usize;
    let mut seen: BTreeMap<(&str, usize), ()> = BTreeMap::new();
    for r in &site_records {
        let hour = (r.timestamp - start).num_hours() as usize;
        if hour >= n_hours {
            trimmed_records += 1;
            continue;
        }
        let slot_key = (r.building_id.as_str(), hour);
        if seen.insert(slot_key, ()).is_some() {
            duplicate_overwrites += 1;
        }
        by_building.get_mut(r.building_id.as_str()).expect("inserted")[hour] = r.reading;
    }

    let series = by_building
        .into_iter()
        .map(|(building_id, values)| MeterSeries {
            building_id: building_id.to_string(),
            site_id: site_id.to_string(),
            start,
            values,
        })
        .collect();
    Ok(AlignOutcome {
        portfolio: Portfolio {
            site_id: site_id.to_string(),
            start,
            series,
        },
        duplicate_overwrites,
        trimmed_records,
    })
}

/// Serialize a portfolio back to the long format [`parse_csv`] accepts.
///
/// Every hour gets a row; missing values are written as `NaN` so a re-parse
/// plus re-alignment reproduces the series and missing masks exactly.
pub fn write_portfolio_csv<W: Write>(portfolio: &Portfolio, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "timestamp,site_id,building_id,meter_reading")?;
    let mut line = String::new();
    for series in &portfolio.series {
        for (h, value) in series.values.iter().enumerate() {
            line.clear();
            let ts = series.timestamp_of_hour(h).format(TIMESTAMP_FORMAT);
            match value {
                Some(v) => {
                    let _ = write!(line, "{ts},{},{},{v}", series.site_id, series.building_id);
                }
                None => {
                    let _ = write!(line, "{ts},{},{},NaN", series.site_id, series.building_id);
                }
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
