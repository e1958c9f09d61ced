//! Discord labeling: KS screening statistics, the dynamic mixture
//! threshold, the fixed p-value and two-standard-deviation baselines, and
//! conversions between label granularities.
//!
//! Every label is one of three states: discord, non-discord, or
//! unevaluable. Unevaluable never silently becomes one of the other two; it
//! survives conversions and is excluded (and counted) by the evaluators.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{NaiveDate, NaiveDateTime, Timelike, Weekday};
use thiserror::Error;

use crate::ingest::Portfolio;
use crate::matrix_profile::DailySample;
use crate::stats::{self, GaussianMixture1d, StatsError};

/// Default number of mixture components.
pub const DEFAULT_N_COMPONENTS: usize = 7;

/// Default p-value threshold of the fixed-threshold baseline.
pub const DEFAULT_P_THRESHOLD: f64 = 0.01;

/// Default count of discord hours that makes a day a discord.
pub const DEFAULT_HOURLY_THRESHOLD: usize = 14;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("reference pool for {group} on {weekday} is empty")]
    EmptyReferencePool { group: String, weekday: Weekday },
    #[error("expected {expected} labels, got {got}")]
    WrongGranularity { expected: Granularity, got: Granularity },
    #[error("labels reference site {site_id:?} absent from the portfolio")]
    UnknownSite { site_id: String },
    #[error("building {building_id:?} has {n} non-missing readings, need at least 2")]
    InsufficientReadings { building_id: String, n: usize },
    #[error("records mix site-level and building-level keys")]
    MixedRecordKeys,
    #[error("cannot convert {from} labels to {to}")]
    UnsupportedConversion { from: Granularity, to: Granularity },
    #[error("label file has no usable header (need date or timestamp plus label columns)")]
    BadLabelHeader,
    #[error("label file is empty")]
    EmptyLabelFile,
    #[error("label file row {line}: {reason}")]
    BadLabelRow { line: usize, reason: String },
    #[error("label file mixes methods {first:?} and {second:?}")]
    MixedMethods { first: String, second: String },
    #[error("duplicate label key at row {line}")]
    DuplicateLabelKey { line: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Three-state day/hour label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    NonDiscord,
    Discord,
    Unevaluable,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::NonDiscord => "0",
            Label::Discord => "1",
            Label::Unevaluable => "unevaluable",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "0" => Ok(Label::NonDiscord),
            "1" => Ok(Label::Discord),
            "unevaluable" => Ok(Label::Unevaluable),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Which method produced a label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodTag {
    AldiPlusPlus,
    Aldi,
    TwoSd,
    GroundTruth,
    Other(String),
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodTag::AldiPlusPlus => f.write_str("aldi++"),
            MethodTag::Aldi => f.write_str("aldi"),
            MethodTag::TwoSd => f.write_str("2sd"),
            MethodTag::GroundTruth => f.write_str("ground-truth"),
            MethodTag::Other(s) => f.write_str(s),
        }
    }
}

impl std::str::FromStr for MethodTag {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "aldi++" => MethodTag::AldiPlusPlus,
            "aldi" => MethodTag::Aldi,
            "2sd" => MethodTag::TwoSd,
            "ground-truth" => MethodTag::GroundTruth,
            other => MethodTag::Other(other.to_string()),
        })
    }
}

/// Key resolution of a label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    SiteDay,
    BuildingDay,
    BuildingHour,
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Granularity::SiteDay => "site-day",
            Granularity::BuildingDay => "building-day",
            Granularity::BuildingHour => "building-hour",
        })
    }
}

/// Sort key of one labeled unit. `building_id` is `None` at site
/// granularity; `hour` is `None` at day granularities.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LabelKey {
    pub site_id: String,
    pub building_id: Option<String>,
    pub date: NaiveDate,
    pub hour: Option<u8>,
}

impl LabelKey {
    pub fn site_day(site_id: impl Into<String>, date: NaiveDate) -> Self {
        LabelKey { site_id: site_id.into(), building_id: None, date, hour: None }
    }

    pub fn building_day(
        site_id: impl Into<String>,
        building_id: impl Into<String>,
        date: NaiveDate,
    ) -> Self {
        LabelKey {
            site_id: site_id.into(),
            building_id: Some(building_id.into()),
            date,
            hour: None,
        }
    }

    pub fn building_hour(
        site_id: impl Into<String>,
        building_id: impl Into<String>,
        timestamp: NaiveDateTime,
    ) -> Self {
        LabelKey {
            site_id: site_id.into(),
            building_id: Some(building_id.into()),
            date: timestamp.date(),
            hour: Some(timestamp.time().hour() as u8),
        }
    }

    pub fn timestamp(&self) -> Option<NaiveDateTime> {
        self.hour
            .and_then(|h| self.date.and_hms_opt(u32::from(h), 0, 0))
    }
}

/// One label plus the screening statistics that produced it, when any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelEntry {
    pub label: Label,
    pub d_value: Option<f64>,
    pub p_value: Option<f64>,
}

impl LabelEntry {
    pub fn bare(label: Label) -> Self {
        LabelEntry { label, d_value: None, p_value: None }
    }
}

/// An ordered set of labels of uniform granularity and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub method: MethodTag,
    pub granularity: Granularity,
    pub entries: BTreeMap<LabelKey, LabelEntry>,
}

impl LabelSet {
    pub fn new(method: MethodTag, granularity: Granularity) -> Self {
        LabelSet { method, granularity, entries: BTreeMap::new() }
    }

    /// Insert one entry; the key shape must match the set's granularity.
    pub fn insert(&mut self, key: LabelKey, entry: LabelEntry) {
        let shape_ok = match self.granularity {
            Granularity::SiteDay => key.building_id.is_none() && key.hour.is_none(),
            Granularity::BuildingDay => key.building_id.is_some() && key.hour.is_none(),
            Granularity::BuildingHour => key.building_id.is_some() && key.hour.is_some(),
        };
        assert!(shape_ok, "label key shape does not match {}", self.granularity);
        self.entries.insert(key, entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.values().filter(|e| e.label == label).count()
    }

    /// Discords over all evaluable entries; `None` when nothing is evaluable.
    pub fn discord_fraction(&self) -> Option<f64> {
        let discord = self.count(Label::Discord);
        let evaluable = discord + self.count(Label::NonDiscord);
        (evaluable > 0).then(|| discord as f64 / evaluable as f64)
    }
}

/// KS screening result for one (group, date).
#[derive(Debug, Clone, PartialEq)]
pub struct DValueRecord {
    pub site_id: String,
    /// Set in per-building reference mode, `None` when the site pools.
    pub building_id: Option<String>,
    pub date: NaiveDate,
    pub weekday: Weekday,
    pub d_value: f64,
    pub p_value: f64,
    pub sample_size: usize,
}

impl DValueRecord {
    fn group_label(&self) -> String {
        match &self.building_id {
            Some(b) => format!("{}/{}", self.site_id, b),
            None => self.site_id.clone(),
        }
    }
}

/// [`compute_dvalues`] output: one record per evaluable (group, date) plus
/// the dates that had no values at all.
#[derive(Debug)]
pub struct DValueOutcome {
    pub records: Vec<DValueRecord>,
    pub unevaluable: Vec<(String, Option<String>, NaiveDate)>,
}

/// Run the weekday KS screen over pooled daily profile values.
///
/// Each date's sample is tested against the pooled values of every date
/// sharing its weekday across the whole span. The date's own values are part
/// of the pool unless `leave_one_out` is set. Dates with empty samples
/// produce no record and are listed as unevaluable instead.
///
/// # Errors
///
/// With `leave_one_out`, a weekday whose reference pool would be empty
/// (single evaluable date) is an error; so are non-finite inputs.
pub fn compute_dvalues(
    samples: &[DailySample],
    leave_one_out: bool,
) -> Result<DValueOutcome, DetectorError> {
    type GroupKey<'a> = (&'a str, Option<&'a str>);
    let mut groups: BTreeMap<GroupKey, Vec<&DailySample>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.site_id.as_str(), s.building_id.as_deref()))
            .or_default()
            .push(s);
    }

    let mut records = Vec::new();
    let mut unevaluable = Vec::new();
    for ((site, building), group) in groups {
        // Pool evaluable samples per weekday.
        let mut pools: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
        for s in &group {
            if !s.values.is_empty() {
                pools
                    .entry(s.weekday.num_days_from_monday() as u8)
                    .or_default()
                    .extend_from_slice(&s.values);
            }
        }
        for s in &group {
            if s.values.is_empty() {
                unevaluable.push((site.to_string(), building.map(str::to_string), s.date));
                continue;
            }
            let wd = s.weekday.num_days_from_monday() as u8;
            let pool = pools.get(&wd).expect("sample contributed to its pool");
            let ks = if leave_one_out {
                let mut reference = Vec::with_capacity(pool.len() - s.values.len());
                for other in &group {
                    if other.date != s.date
                        && other.weekday == s.weekday
                        && !other.values.is_empty()
                    {
                        reference.extend_from_slice(&other.values);
                    }
                }
                if reference.is_empty() {
                    return Err(DetectorError::EmptyReferencePool {
                        group: match building {
                            Some(b) => format!("{site}/{b}"),
                            None => site.to_string(),
                        },
                        weekday: s.weekday,
                    });
                }
                stats::ks_two_sample(&s.values, &reference)?
            } else {
                stats::ks_two_sample(&s.values, pool)?
            };
            records.push(DValueRecord {
                site_id: site.to_string(),
                building_id: building.map(str::to_string),
                date: s.date,
                weekday: s.weekday,
                d_value: ks.d_value,
                p_value: ks.p_value,
                sample_size: s.values.len(),
            });
        }
    }
    Ok(DValueOutcome { records, unevaluable })
}

/// The dynamic component threshold read off a fitted mixture: the largest
/// component mean, taken as a fraction of 1, decides how many of the
/// lowest-mean components count as non-discord.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmThreshold {
    pub mu_max: f64,
    pub k_fraction: f64,
    pub n_components: usize,
    pub n_nondiscord: usize,
}

impl GmmThreshold {
    /// `n_nondiscord = ceil((1 - mu_max) * n_components)`, clamped to
    /// `[1, n_components]`.
    pub fn from_mixture(mixture: &GaussianMixture1d) -> Self {
        let n_components = mixture.n_components();
        let mu_max = mixture.max_mean();
        let k_fraction = 1.0 - mu_max;
        let raw = (k_fraction * n_components as f64).ceil();
        let n_nondiscord = if raw.is_finite() && raw >= 1.0 {
            (raw as usize).min(n_components)
        } else {
            1
        };
        GmmThreshold { mu_max, k_fraction, n_components, n_nondiscord }
    }
}

/// Labels plus fit diagnostics from the mixture-threshold method.
#[derive(Debug)]
pub struct MixtureLabelOutcome {
    pub labels: LabelSet,
    /// Per group: the fitted threshold, keyed by `site` or `site/building`.
    pub thresholds: BTreeMap<String, GmmThreshold>,
    /// Human-readable notes, e.g. groups skipped for lack of records.
    pub diagnostics: Vec<String>,
}

fn record_key(record: &DValueRecord) -> LabelKey {
    match &record.building_id {
        Some(b) => LabelKey::building_day(&record.site_id, b, record.date),
        None => LabelKey::site_day(&record.site_id, record.date),
    }
}

fn records_granularity(records: &[DValueRecord]) -> Result<Granularity, DetectorError> {
    let mut has_building = None;
    for r in records {
        let b = r.building_id.is_some();
        if *has_building.get_or_insert(b) != b {
            return Err(DetectorError::MixedRecordKeys);
        }
    }
    Ok(if has_building.unwrap_or(false) {
        Granularity::BuildingDay
    } else {
        Granularity::SiteDay
    })
}

/// Label each date by fitting a Gaussian mixture to its group's D-values
/// and keeping the lowest-mean components as non-discord.
///
/// A group with fewer records than components cannot support a fit: all its
/// dates come back unevaluable and a diagnostic says so.
pub fn aldi_plus_plus(
    records: &[DValueRecord],
    n_components: usize,
    seed: u64,
) -> Result<MixtureLabelOutcome, DetectorError> {
    let granularity = records_granularity(records)?;
    let mut labels = LabelSet::new(MethodTag::AldiPlusPlus, granularity);
    let mut thresholds = BTreeMap::new();
    let mut diagnostics = Vec::new();

    let mut groups: BTreeMap<String, Vec<&DValueRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.group_label()).or_default().push(r);
    }

    for (group, group_records) in groups {
        if group_records.len() < n_components {
            diagnostics.push(format!(
                "group {group}: {} dates cannot support {n_components} mixture components; all labeled unevaluable",
                group_records.len()
            ));
            for r in group_records {
                labels.insert(
                    record_key(r),
                    LabelEntry {
                        label: Label::Unevaluable,
                        d_value: Some(r.d_value),
                        p_value: Some(r.p_value),
                    },
                );
            }
            continue;
        }
        let d_values: Vec<f64> = group_records.iter().map(|r| r.d_value).collect();
        let mixture = stats::fit_gmm(&d_values, n_components, seed)?;
        let threshold = GmmThreshold::from_mixture(&mixture);
        for r in group_records {
            let component = stats::responsibility(&mixture, r.d_value);
            let label = if component < threshold.n_nondiscord {
                Label::NonDiscord
            } else {
                Label::Discord
            };
            labels.insert(
                record_key(r),
                LabelEntry { label, d_value: Some(r.d_value), p_value: Some(r.p_value) },
            );
        }
        thresholds.insert(group, threshold);
    }
    Ok(MixtureLabelOutcome { labels, thresholds, diagnostics })
}

/// Fixed-threshold baseline: discord iff `p_value < p_threshold` (strict).
pub fn aldi_baseline(
    records: &[DValueRecord],
    p_threshold: f64,
) -> Result<LabelSet, DetectorError> {
    let granularity = records_granularity(records)?;
    let mut labels = LabelSet::new(MethodTag::Aldi, granularity);
    for r in records {
        let label = if r.p_value < p_threshold {
            Label::Discord
        } else {
            Label::NonDiscord
        };
        labels.insert(
            record_key(r),
            LabelEntry { label, d_value: Some(r.d_value), p_value: Some(r.p_value) },
        );
    }
    Ok(labels)
}

pub(crate) fn exceeds_two_sd(value: f64, mean: f64, sd: f64) -> bool {
    (value - mean).abs() > 2.0 * sd
}

/// Per-reading baseline: a reading more than two sample standard deviations
/// from its building's mean (strict) is a discord hour; missing hours are
/// unevaluable. Operates on raw aligned readings, not imputed ones.
pub fn two_sd_baseline(portfolio: &Portfolio) -> Result<LabelSet, DetectorError> {
    let mut labels = LabelSet::new(MethodTag::TwoSd, Granularity::BuildingHour);
    for series in &portfolio.series {
        let observed: Vec<f64> = series.values.iter().flatten().copied().collect();
        if observed.len() < 2 {
            return Err(DetectorError::InsufficientReadings {
                building_id: series.building_id.clone(),
                n: observed.len(),
            });
        }
        let n = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / n;
        let sd = (observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        for (h, value) in series.values.iter().enumerate() {
            let label = match value {
                Some(v) if exceeds_two_sd(*v, mean, sd) => Label::Discord,
                Some(_) => Label::NonDiscord,
                None => Label::Unevaluable,
            };
            labels.insert(
                LabelKey::building_hour(
                    &series.site_id,
                    &series.building_id,
                    series.timestamp_of_hour(h),
                ),
                LabelEntry::bare(label),
            );
        }
    }
    Ok(labels)
}

/// Collapse building-hour labels to building-day: a day is a discord when
/// at least `threshold` of its evaluable hours are discords (the threshold
/// is absolute, not rescaled for partially evaluable days); a day with no
/// evaluable hours is unevaluable.
pub fn hourly_to_daily(labels: &LabelSet, threshold: usize) -> Result<LabelSet, DetectorError> {
    if labels.granularity != Granularity::BuildingHour {
        return Err(DetectorError::WrongGranularity {
            expected: Granularity::BuildingHour,
            got: labels.granularity,
        });
    }
    let mut per_day: BTreeMap<LabelKey, (usize, usize)> = BTreeMap::new();
    for (key, entry) in &labels.entries {
        let day_key = LabelKey {
            site_id: key.site_id.clone(),
            building_id: key.building_id.clone(),
            date: key.date,
            hour: None,
        };
        let (discords, evaluable) = per_day.entry(day_key).or_insert((0, 0));
        match entry.label {
            Label::Discord => {
                *discords += 1;
                *evaluable += 1;
            }
            Label::NonDiscord => *evaluable += 1,
            Label::Unevaluable => {}
        }
    }
    let mut out = LabelSet::new(labels.method.clone(), Granularity::BuildingDay);
    for (key, (discords, evaluable)) in per_day {
        let label = if evaluable == 0 {
            Label::Unevaluable
        } else if discords >= threshold {
            Label::Discord
        } else {
            Label::NonDiscord
        };
        out.insert(key, LabelEntry::bare(label));
    }
    Ok(out)
}

/// Broadcast day labels to building-hours: a site-day fans out to every
/// building of that site for all 24 hours, a building-day to that building's
/// 24 hours. Unevaluable days broadcast as unevaluable hours.
///
/// The portfolios supply the building list for site-day input.
pub fn daily_to_hourly(
    labels: &LabelSet,
    portfolios: &[Portfolio],
) -> Result<LabelSet, DetectorError> {
    if labels.granularity == Granularity::BuildingHour {
        return Err(DetectorError::WrongGranularity {
            expected: Granularity::SiteDay,
            got: Granularity::BuildingHour,
        });
    }
    let mut out = LabelSet::new(labels.method.clone(), Granularity::BuildingHour);
    for (key, entry) in &labels.entries {
        let buildings: Vec<&str> = match &key.building_id {
            Some(b) => vec![b.as_str()],
            None => {
                let portfolio = portfolios
                    .iter()
                    .find(|p| p.site_id == key.site_id)
                    .ok_or_else(|| DetectorError::UnknownSite { site_id: key.site_id.clone() })?;
                portfolio.building_ids()
            }
        };
        for building in buildings {
            for hour in 0..24u8 {
                let ts = key
                    .date
                    .and_hms_opt(u32::from(hour), 0, 0)
                    .expect("whole hours are valid");
                out.insert(
                    LabelKey::building_hour(&key.site_id, building, ts),
                    LabelEntry::bare(entry.label),
                );
            }
        }
    }
    Ok(out)
}

/// Bring labels to `target` granularity, composing [`hourly_to_daily`] and
/// [`daily_to_hourly`] as needed. `hourly_threshold` is the discord-hour
/// count that turns a day discordant when collapsing hours; `portfolios`
/// supply building lists when site-days fan out. Day labels cannot be
/// aggregated up to site granularity.
pub fn convert_granularity(
    labels: LabelSet,
    target: Granularity,
    portfolios: &[Portfolio],
    hourly_threshold: usize,
) -> Result<LabelSet, DetectorError> {
    match (labels.granularity, target) {
        (from, to) if from == to => Ok(labels),
        (Granularity::BuildingHour, Granularity::BuildingDay) => {
            hourly_to_daily(&labels, hourly_threshold)
        }
        (Granularity::SiteDay | Granularity::BuildingDay, Granularity::BuildingHour) => {
            daily_to_hourly(&labels, portfolios)
        }
        // Site-day to building-day is a pure broadcast: every hour of the
        // fanned-out day carries the day's label, so any threshold in
        // 1..=24 collapses back to the same per-building label.
        (Granularity::SiteDay, Granularity::BuildingDay) => {
            let hourly = daily_to_hourly(&labels, portfolios)?;
            hourly_to_daily(&hourly, hourly_threshold.clamp(1, 24))
        }
        (from, to) => Err(DetectorError::UnsupportedConversion { from, to }),
    }
}

/// Write the training filter: `building_id,timestamp,keep` with `keep = 0`
/// for discord and unevaluable hours, ordered by building then timestamp.
pub fn export_train_filter<W: Write>(
    labels: &LabelSet,
    out: &mut W,
) -> Result<(), DetectorError> {
    if labels.granularity != Granularity::BuildingHour {
        return Err(DetectorError::WrongGranularity {
            expected: Granularity::BuildingHour,
            got: labels.granularity,
        });
    }
    let mut rows: BTreeMap<(&str, NaiveDateTime), u8> = BTreeMap::new();
    for (key, entry) in &labels.entries {
        let ts = key.timestamp().expect("building-hour keys carry an hour");
        let keep = u8::from(entry.label == Label::NonDiscord);
        rows.insert((key.building_id.as_deref().expect("building set"), ts), keep);
    }
    writeln!(out, "building_id,timestamp,keep")?;
    for ((building, ts), keep) in rows {
        writeln!(out, "{building},{},{keep}", ts.format(crate::ingest::TIMESTAMP_FORMAT))?;
    }
    Ok(())
}

/// Serialize labels as CSV. Columns depend on granularity:
/// site-day rows carry the screening statistics, day rows a date, hour rows
/// a timestamp.
pub fn write_labels<W: Write>(labels: &LabelSet, out: &mut W) -> Result<(), DetectorError> {
    match labels.granularity {
        Granularity::SiteDay => {
            writeln!(out, "site_id,date,label,method,d_value,p_value")?;
            for (key, entry) in &labels.entries {
                let d = entry.d_value.map(|v| v.to_string()).unwrap_or_default();
                let p = entry.p_value.map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{d},{p}",
                    key.site_id, key.date, entry.label, labels.method
                )?;
            }
        }
        Granularity::BuildingDay => {
            writeln!(out, "site_id,building_id,date,label,method")?;
            for (key, entry) in &labels.entries {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    key.site_id,
                    key.building_id.as_deref().expect("building set"),
                    key.date,
                    entry.label,
                    labels.method
                )?;
            }
        }
        Granularity::BuildingHour => {
            writeln!(out, "site_id,building_id,timestamp,label,method")?;
            for (key, entry) in &labels.entries {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    key.site_id,
                    key.building_id.as_deref().expect("building set"),
                    key.timestamp().expect("hour set").format(crate::ingest::TIMESTAMP_FORMAT),
                    entry.label,
                    labels.method
                )?;
            }
        }
    }
    Ok(())
}

/// Parse a label CSV produced by [`write_labels`] or an external tool using
/// the same schema. Granularity is inferred from the header; the method
/// column must be uniform.
pub fn read_labels<R: std::io::Read>(reader: R) -> Result<LabelSet, DetectorError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let site_idx = col("site_id").ok_or(DetectorError::BadLabelHeader)?;
    let label_idx = col("label").ok_or(DetectorError::BadLabelHeader)?;
    let method_idx = col("method").ok_or(DetectorError::BadLabelHeader)?;
    let building_idx = col("building_id");
    let date_idx = col("date");
    let ts_idx = col("timestamp");
    let d_idx = col("d_value");
    let p_idx = col("p_value");

    let granularity = match (building_idx, date_idx, ts_idx) {
        (Some(_), _, Some(_)) => Granularity::BuildingHour,
        (Some(_), Some(_), None) => Granularity::BuildingDay,
        (None, Some(_), None) => Granularity::SiteDay,
        _ => return Err(DetectorError::BadLabelHeader),
    };

    let mut method: Option<MethodTag> = None;
    let mut entries: BTreeMap<LabelKey, LabelEntry> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let get = |idx: usize, what: &str| {
            row.get(idx).ok_or_else(|| DetectorError::BadLabelRow {
                line,
                reason: format!("missing {what}"),
            })
        };
        let site = get(site_idx, "site_id")?.to_string();
        let label: Label = get(label_idx, "label")?
            .parse()
            .map_err(|reason| DetectorError::BadLabelRow { line, reason })?;
        let row_method: MethodTag = get(method_idx, "method")?.parse().expect("infallible");
        match &method {
            None => method = Some(row_method),
            Some(m) if *m != row_method => {
                return Err(DetectorError::MixedMethods {
                    first: m.to_string(),
                    second: row_method.to_string(),
                })
            }
            Some(_) => {}
        }

        let key = match granularity {
            Granularity::SiteDay | Granularity::BuildingDay => {
                let date: NaiveDate = get(date_idx.expect("checked"), "date")?
                    .parse()
                    .map_err(|e| DetectorError::BadLabelRow {
                        line,
                        reason: format!("bad date: {e}"),
                    })?;
                match granularity {
                    Granularity::SiteDay => LabelKey::site_day(site, date),
                    _ => LabelKey::building_day(
                        site,
                        get(building_idx.expect("checked"), "building_id")?,
                        date,
                    ),
                }
            }
            Granularity::BuildingHour => {
                let raw = get(ts_idx.expect("checked"), "timestamp")?;
                let ts = NaiveDateTime::parse_from_str(raw, crate::ingest::TIMESTAMP_FORMAT)
                    .map_err(|e| DetectorError::BadLabelRow {
                        line,
                        reason: format!("bad timestamp: {e}"),
                    })?;
                LabelKey::building_hour(site, get(building_idx.expect("checked"), "building_id")?, ts)
            }
        };

        let parse_opt = |idx: Option<usize>| -> Result<Option<f64>, DetectorError> {
            match idx.and_then(|i| row.get(i)).filter(|s| !s.is_empty()) {
                Some(raw) => raw
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| DetectorError::BadLabelRow {
                        line,
                        reason: format!("bad numeric field: {e}"),
                    }),
                None => Ok(None),
            }
        };
        let entry = LabelEntry {
            label,
            d_value: parse_opt(d_idx)?,
            p_value: parse_opt(p_idx)?,
        };
        if entries.insert(key, entry).is_some() {
            return Err(DetectorError::DuplicateLabelKey { line });
        }
    }

    let method = method.ok_or(DetectorError::EmptyLabelFile)?;
    Ok(LabelSet { method, granularity, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MeterSeries;
    use crate::stats::GaussianComponent;
    use approx::assert_abs_diff_eq;
    use chrono::Datelike;

    fn date(d: u32) -> NaiveDate {
        // 2016-02-01 was a Monday; offsets keep weekday arithmetic obvious.
        NaiveDate::from_ymd_opt(2016, 2, 1).unwrap() + chrono::Days::new(u64::from(d))
    }

    fn sample(site: &str, d: u32, values: &[f64]) -> DailySample {
        let dt = date(d);
        DailySample {
            site_id: site.to_string(),
            building_id: None,
            date: dt,
            weekday: dt.weekday(),
            values: values.to_vec(),
        }
    }

    fn mixture_with_means(means: &[f64]) -> GaussianMixture1d {
        GaussianMixture1d {
            components: means
                .iter()
                .map(|m| GaussianComponent {
                    weight: 1.0 / means.len() as f64,
                    mean: *m,
                    variance: 1e-4,
                })
                .collect(),
            log_likelihood_trace: vec![],
            seed: 0,
        }
    }

    #[test]
    fn dvalues_uniform_weekday_gives_zero_d() {
        // Three Mondays with identical samples: each equals its pool.
        let samples = vec![
            sample("s", 0, &[0.1, 0.2]),
            sample("s", 7, &[0.1, 0.2]),
            sample("s", 14, &[0.1, 0.2]),
        ];
        let out = compute_dvalues(&samples, false).unwrap();
        assert_eq!(out.records.len(), 3);
        for r in &out.records {
            assert_eq!(r.d_value, 0.0);
            assert_eq!(r.sample_size, 2);
        }
    }

    #[test]
    fn dvalues_corrupted_date_dominates_weekday() {
        let samples = vec![
            sample("s", 0, &[0.1, 0.1, 0.1]),
            sample("s", 7, &[5.0, 5.0, 5.0]),
            sample("s", 14, &[0.1, 0.1, 0.1]),
        ];
        let out = compute_dvalues(&samples, false).unwrap();
        let by_date: BTreeMap<NaiveDate, f64> =
            out.records.iter().map(|r| (r.date, r.d_value)).collect();
        let corrupted = by_date[&date(7)];
        assert!(corrupted > by_date[&date(0)]);
        assert!(corrupted > by_date[&date(14)]);
        // Pool = {0.1 x6, 5.0 x3}: gap below 5.0 is |0 - 2/3|.
        assert_abs_diff_eq!(corrupted, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dvalues_empty_sample_is_unevaluable_not_a_record() {
        let samples = vec![
            sample("s", 0, &[0.1]),
            sample("s", 7, &[]),
            sample("s", 14, &[0.2]),
        ];
        let out = compute_dvalues(&samples, false).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.unevaluable, vec![("s".to_string(), None, date(7))]);
    }

    #[test]
    fn dvalues_leave_one_out_excludes_own_date() {
        let samples = vec![
            sample("s", 0, &[1.0]),
            sample("s", 7, &[2.0]),
            sample("s", 14, &[3.0]),
        ];
        let inclusive = compute_dvalues(&samples, false).unwrap();
        let loo = compute_dvalues(&samples, true).unwrap();
        // Inclusive: {1} vs {1,2,3} -> D = 2/3. Leave-one-out: {1} vs {2,3} -> D = 1.
        assert_abs_diff_eq!(inclusive.records[0].d_value, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(loo.records[0].d_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dvalues_leave_one_out_singleton_weekday_errors() {
        let samples = vec![sample("s", 0, &[1.0]), sample("s", 1, &[2.0])];
        assert!(matches!(
            compute_dvalues(&samples, true),
            Err(DetectorError::EmptyReferencePool { .. })
        ));
    }

    #[test]
    fn threshold_arithmetic_examples() {
        // mu_max 0.8 over 7 components: ceil(0.2 * 7) = 2 lowest-mean
        // components stay non-discord.
        let t = GmmThreshold::from_mixture(&mixture_with_means(&[
            0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8,
        ]));
        assert_eq!(t.n_nondiscord, 2);
        assert_abs_diff_eq!(t.k_fraction, 0.2, epsilon = 1e-12);

        // mu_max 0.3: ceil(0.7 * 7) = 5.
        let t = GmmThreshold::from_mixture(&mixture_with_means(&[
            0.05, 0.1, 0.15, 0.2, 0.25, 0.28, 0.3,
        ]));
        assert_eq!(t.n_nondiscord, 5);

        // mu_max 1.0 clamps to a single non-discord component.
        let t = GmmThreshold::from_mixture(&mixture_with_means(&[
            0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0,
        ]));
        assert_eq!(t.n_nondiscord, 1);
    }

    #[test]
    fn mixture_labeling_separates_clusters() {
        let mut records = Vec::new();
        for d in 0..20 {
            records.push(DValueRecord {
                site_id: "s".into(),
                building_id: None,
                date: date(d),
                weekday: date(d).weekday(),
                d_value: 0.05 + 0.001 * f64::from(d % 3),
                p_value: 0.8,
                sample_size: 10,
            });
        }
        for d in 20..24 {
            records.push(DValueRecord {
                site_id: "s".into(),
                building_id: None,
                date: date(d),
                weekday: date(d).weekday(),
                d_value: 0.9,
                p_value: 0.001,
                sample_size: 10,
            });
        }
        let out = aldi_plus_plus(&records, 2, 0).unwrap();
        assert_eq!(out.labels.count(Label::Discord), 4);
        assert_eq!(out.labels.count(Label::NonDiscord), 20);
        let t = out.thresholds["s"];
        assert_eq!(t.n_nondiscord, 1);
        assert!(t.mu_max > 0.8);
    }

    #[test]
    fn mixture_labeling_with_too_few_records_is_unevaluable() {
        let records: Vec<DValueRecord> = (0..3)
            .map(|d| DValueRecord {
                site_id: "s".into(),
                building_id: None,
                date: date(d),
                weekday: date(d).weekday(),
                d_value: 0.1,
                p_value: 0.5,
                sample_size: 4,
            })
            .collect();
        let out = aldi_plus_plus(&records, 7, 0).unwrap();
        assert_eq!(out.labels.count(Label::Unevaluable), 3);
        assert_eq!(out.labels.count(Label::Discord), 0);
        assert_eq!(out.diagnostics.len(), 1);
        assert!(out.diagnostics[0].contains('s'));
    }

    #[test]
    fn fixed_threshold_is_strict() {
        let mk = |d: u32, p: f64| DValueRecord {
            site_id: "s".into(),
            building_id: None,
            date: date(d),
            weekday: date(d).weekday(),
            d_value: 0.5,
            p_value: p,
            sample_size: 4,
        };
        let records = vec![mk(0, 0.005), mk(1, 0.01), mk(2, 0.9)];
        let labels = aldi_baseline(&records, 0.01).unwrap();
        let get = |d: u32| labels.entries[&LabelKey::site_day("s", date(d))].label;
        assert_eq!(get(0), Label::Discord);
        assert_eq!(get(1), Label::NonDiscord); // exactly at the threshold
        assert_eq!(get(2), Label::NonDiscord);
    }

    fn hourly_series(building: &str, values: Vec<Option<f64>>) -> MeterSeries {
        MeterSeries {
            building_id: building.to_string(),
            site_id: "s".to_string(),
            start: NaiveDate::from_ymd_opt(2016, 2, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            values,
        }
    }

    #[test]
    fn two_sd_flags_only_the_spike() {
        // 95 readings of 10 plus one of 1000 across four days.
        let mut values = vec![Some(10.0); 96];
        values[50] = Some(1000.0);
        let portfolio = Portfolio {
            site_id: "s".into(),
            start: hourly_series("b", vec![]).start,
            series: vec![hourly_series("b", values)],
        };
        let labels = two_sd_baseline(&portfolio).unwrap();
        assert_eq!(labels.count(Label::Discord), 1);
        assert_eq!(labels.count(Label::NonDiscord), 95);
        let spike_key = LabelKey::building_hour(
            "s",
            "b",
            date(2).and_hms_opt(2, 0, 0).unwrap(),
        );
        assert_eq!(labels.entries[&spike_key].label, Label::Discord);
    }

    #[test]
    fn two_sd_boundary_is_strict_and_constant_series_is_quiet() {
        assert!(!exceeds_two_sd(14.0, 10.0, 2.0));
        assert!(exceeds_two_sd(14.0 + 1e-9, 10.0, 2.0));
        let portfolio = Portfolio {
            site_id: "s".into(),
            start: hourly_series("b", vec![]).start,
            series: vec![hourly_series("b", vec![Some(7.0); 48])],
        };
        let labels = two_sd_baseline(&portfolio).unwrap();
        assert_eq!(labels.count(Label::Discord), 0);
        assert_eq!(labels.count(Label::NonDiscord), 48);
    }

    #[test]
    fn two_sd_missing_hours_are_unevaluable() {
        let mut values = vec![Some(10.0); 24];
        values[3] = None;
        values[10] = Some(11.0);
        let portfolio = Portfolio {
            site_id: "s".into(),
            start: hourly_series("b", vec![]).start,
            series: vec![hourly_series("b", values)],
        };
        let labels = two_sd_baseline(&portfolio).unwrap();
        assert_eq!(labels.count(Label::Unevaluable), 1);
    }

    #[test]
    fn two_sd_single_reading_errors() {
        let mut values = vec![None; 24];
        values[0] = Some(1.0);
        let portfolio = Portfolio {
            site_id: "s".into(),
            start: hourly_series("b", vec![]).start,
            series: vec![hourly_series("b", values)],
        };
        assert!(matches!(
            two_sd_baseline(&portfolio),
            Err(DetectorError::InsufficientReadings { n: 1, .. })
        ));
    }

    fn hour_labels(discord_hours: usize, unevaluable_hours: usize) -> LabelSet {
        let mut labels = LabelSet::new(MethodTag::TwoSd, Granularity::BuildingHour);
        for h in 0..24usize {
            let label = if h < discord_hours {
                Label::Discord
            } else if h < discord_hours + unevaluable_hours {
                Label::Unevaluable
            } else {
                Label::NonDiscord
            };
            labels.insert(
                LabelKey::building_hour("s", "b", date(0).and_hms_opt(h as u32, 0, 0).unwrap()),
                LabelEntry::bare(label),
            );
        }
        labels
    }

    #[test]
    fn hourly_to_daily_flips_exactly_at_threshold() {
        let day = |n| {
            hourly_to_daily(&hour_labels(n, 0), DEFAULT_HOURLY_THRESHOLD).unwrap()
                .entries
                .values()
                .next()
                .unwrap()
                .label
        };
        assert_eq!(day(13), Label::NonDiscord);
        assert_eq!(day(14), Label::Discord);
        assert_eq!(day(24), Label::Discord);
    }

    #[test]
    fn hourly_to_daily_uses_absolute_threshold_on_partial_days() {
        // 20 unevaluable hours leave 4 evaluable discords: under 14.
        let labels = hour_labels(4, 20);
        let day = hourly_to_daily(&labels, 14).unwrap();
        assert_eq!(day.entries.values().next().unwrap().label, Label::NonDiscord);
        // All 24 unevaluable: the day is unevaluable, not non-discord.
        let day = hourly_to_daily(&hour_labels(0, 24), 14).unwrap();
        assert_eq!(day.entries.values().next().unwrap().label, Label::Unevaluable);
    }

    #[test]
    fn hourly_to_daily_rejects_day_input() {
        let mut labels = LabelSet::new(MethodTag::Aldi, Granularity::SiteDay);
        labels.insert(LabelKey::site_day("s", date(0)), LabelEntry::bare(Label::Discord));
        assert!(matches!(
            hourly_to_daily(&labels, 14),
            Err(DetectorError::WrongGranularity { .. })
        ));
    }

    fn five_building_portfolio() -> Portfolio {
        Portfolio {
            site_id: "s".into(),
            start: hourly_series("b", vec![]).start,
            series: (0..5)
                .map(|i| hourly_series(&format!("b{i}"), vec![Some(1.0); 24]))
                .collect(),
        }
    }

    #[test]
    fn daily_to_hourly_broadcasts_site_days() {
        let mut labels = LabelSet::new(MethodTag::AldiPlusPlus, Granularity::SiteDay);
        labels.insert(
            LabelKey::site_day("s", date(0)),
            LabelEntry { label: Label::Discord, d_value: Some(0.9), p_value: Some(0.001) },
        );
        let hourly = daily_to_hourly(&labels, &[five_building_portfolio()]).unwrap();
        assert_eq!(hourly.len(), 5 * 24);
        assert_eq!(hourly.count(Label::Discord), 120);
    }

    #[test]
    fn daily_to_hourly_broadcasts_unevaluable_and_building_days() {
        let mut labels = LabelSet::new(MethodTag::AldiPlusPlus, Granularity::BuildingDay);
        labels.insert(
            LabelKey::building_day("s", "b2", date(0)),
            LabelEntry::bare(Label::Unevaluable),
        );
        let hourly = daily_to_hourly(&labels, &[]).unwrap();
        assert_eq!(hourly.len(), 24);
        assert_eq!(hourly.count(Label::Unevaluable), 24);
    }

    #[test]
    fn daily_to_hourly_unknown_site_errors() {
        let mut labels = LabelSet::new(MethodTag::AldiPlusPlus, Granularity::SiteDay);
        labels.insert(LabelKey::site_day("nope", date(0)), LabelEntry::bare(Label::Discord));
        assert!(matches!(
            daily_to_hourly(&labels, &[five_building_portfolio()]),
            Err(DetectorError::UnknownSite { .. })
        ));
    }

    #[test]
    fn convert_granularity_reaches_every_supported_shape() {
        let portfolio = five_building_portfolio();
        let mut site = LabelSet::new(MethodTag::AldiPlusPlus, Granularity::SiteDay);
        site.insert(LabelKey::site_day("s", date(0)), LabelEntry::bare(Label::Discord));
        site.insert(LabelKey::site_day("s", date(1)), LabelEntry::bare(Label::NonDiscord));
        site.insert(LabelKey::site_day("s", date(2)), LabelEntry::bare(Label::Unevaluable));

        let same =
            convert_granularity(site.clone(), Granularity::SiteDay, &[], 14).unwrap();
        assert_eq!(same, site);

        let daily = convert_granularity(
            site.clone(),
            Granularity::BuildingDay,
            std::slice::from_ref(&portfolio),
            14,
        )
        .unwrap();
        assert_eq!(daily.len(), 15);
        assert_eq!(daily.count(Label::Discord), 5);
        assert_eq!(daily.count(Label::NonDiscord), 5);
        assert_eq!(daily.count(Label::Unevaluable), 5);

        let hourly = convert_granularity(
            site,
            Granularity::BuildingHour,
            std::slice::from_ref(&portfolio),
            14,
        )
        .unwrap();
        assert_eq!(hourly.len(), 3 * 5 * 24);

        let back = convert_granularity(hourly, Granularity::BuildingDay, &[], 14).unwrap();
        assert_eq!(back, daily);

        assert!(matches!(
            convert_granularity(daily, Granularity::SiteDay, &[], 14),
            Err(DetectorError::UnsupportedConversion { .. })
        ));
    }

    #[test]
    fn train_filter_zeroes_discord_and_unevaluable() {
        let labels = hour_labels(2, 1);
        let mut buf = Vec::new();
        export_train_filter(&labels, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 25);
        assert_eq!(lines[0], "building_id,timestamp,keep");
        assert_eq!(lines[1], "b,2016-02-01 00:00:00,0");
        assert_eq!(lines[3], "b,2016-02-01 02:00:00,0"); // unevaluable hour
        assert_eq!(lines[4], "b,2016-02-01 03:00:00,1");
        let zeros = lines[1..].iter().filter(|l| l.ends_with(",0")).count();
        assert_eq!(zeros, 3);
    }

    #[test]
    fn labels_roundtrip_through_csv() {
        let mut labels = LabelSet::new(MethodTag::AldiPlusPlus, Granularity::SiteDay);
        labels.insert(
            LabelKey::site_day("s", date(0)),
            LabelEntry { label: Label::Discord, d_value: Some(0.925), p_value: Some(0.0012) },
        );
        labels.insert(
            LabelKey::site_day("s", date(1)),
            LabelEntry { label: Label::Unevaluable, d_value: None, p_value: None },
        );
        let mut buf = Vec::new();
        write_labels(&labels, &mut buf).unwrap();
        let parsed = read_labels(buf.as_slice()).unwrap();
        assert_eq!(parsed, labels);

        let hourly = hour_labels(3, 2);
        let mut buf = Vec::new();
        write_labels(&hourly, &mut buf).unwrap();
        let parsed = read_labels(buf.as_slice()).unwrap();
        assert_eq!(parsed, hourly);
    }

    #[test]
    fn read_labels_rejects_empty_and_mixed_method_files() {
        let empty = "site_id,date,label,method,d_value,p_value\n";
        assert!(matches!(
            read_labels(empty.as_bytes()),
            Err(DetectorError::EmptyLabelFile)
        ));
        let mixed = "site_id,date,label,method\ns,2016-02-01,1,aldi\ns,2016-02-02,0,2sd\n";
        assert!(matches!(
            read_labels(mixed.as_bytes()),
            Err(DetectorError::MixedMethods { .. })
        ));
    }

    #[test]
    fn read_labels_accepts_external_methods() {
        let csv = "site_id,building_id,date,label,method\ns,b1,2016-02-01,1,vae\n";
        let labels = read_labels(csv.as_bytes()).unwrap();
        assert_eq!(labels.method, MethodTag::Other("vae".into()));
        assert_eq!(labels.granularity, Granularity::BuildingDay);
    }

    #[test]
    fn label_order_is_deterministic() {
        let mut labels = LabelSet::new(MethodTag::Aldi, Granularity::SiteDay);
        for d in [5u32, 1, 3, 2, 4] {
            labels.insert(LabelKey::site_day("s", date(d)), LabelEntry::bare(Label::NonDiscord));
        }
        let dates: Vec<NaiveDate> = labels.entries.keys().map(|k| k.date).collect();
        let mut sorted = dates.clone();
        sorted.sort();
        assert_eq!(dates, sorted);
    }
}
