//! End-to-end detection over aligned portfolios: profile each building,
//! pool daily values per reference group, screen with the weekday KS test,
//! and label by the configured method. Sites are independent and run in
//! parallel; results merge deterministically via sorted keys.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::detector::{
    self, DValueRecord, DetectorError, Granularity, GmmThreshold, Label, LabelEntry, LabelKey,
    LabelSet, MethodTag, DEFAULT_N_COMPONENTS, DEFAULT_P_THRESHOLD,
};
use crate::ingest::{Portfolio, DEFAULT_MAX_GAP, HOURS_PER_DAY};
use crate::matrix_profile::{
    self, Aggregation, BuildingDaily, MatrixProfileError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    MatrixProfile(#[from] MatrixProfileError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("no portfolios to label")]
    EmptyInput,
    #[error("site {site_id:?} appears in more than one portfolio")]
    DuplicateSite { site_id: String },
    #[error("invalid parameter: {reason}")]
    BadParams { reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which labeling method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectMethod {
    AldiPlusPlus,
    Aldi,
    TwoSd,
}

impl DetectMethod {
    pub fn tag(self) -> MethodTag {
        match self {
            DetectMethod::AldiPlusPlus => MethodTag::AldiPlusPlus,
            DetectMethod::Aldi => MethodTag::Aldi,
            DetectMethod::TwoSd => MethodTag::TwoSd,
        }
    }
}

impl std::fmt::Display for DetectMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.tag().fmt(f)
    }
}

impl std::str::FromStr for DetectMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aldi++" => Ok(DetectMethod::AldiPlusPlus),
            "aldi" => Ok(DetectMethod::Aldi),
            "2sd" => Ok(DetectMethod::TwoSd),
            other => Err(format!("unknown method {other:?} (expected aldi++, aldi, or 2sd)")),
        }
    }
}

/// Which history a day is judged against: the pooled site or its own
/// building.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceScope {
    #[default]
    Site,
    Building,
}

impl std::fmt::Display for ReferenceScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReferenceScope::Site => "site",
            ReferenceScope::Building => "building",
        })
    }
}

impl std::str::FromStr for ReferenceScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "site" => Ok(ReferenceScope::Site),
            "building" => Ok(ReferenceScope::Building),
            other => Err(format!("unknown scope {other:?} (expected site or building)")),
        }
    }
}

/// Full parameter set of one detection run.
#[derive(Debug, Clone)]
pub struct DetectParams {
    pub method: DetectMethod,
    pub n_components: usize,
    pub p_threshold: f64,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub scope: ReferenceScope,
    pub leave_one_out: bool,
    /// Longest interior missing run bridged before profiling.
    pub max_gap: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            method: DetectMethod::AldiPlusPlus,
            n_components: DEFAULT_N_COMPONENTS,
            p_threshold: DEFAULT_P_THRESHOLD,
            seed: 0,
            aggregation: Aggregation::DayStart,
            scope: ReferenceScope::Site,
            leave_one_out: false,
            max_gap: DEFAULT_MAX_GAP,
        }
    }
}

/// Everything one detection run produces.
#[derive(Debug)]
pub struct DetectionOutput {
    pub labels: LabelSet,
    /// KS screening records; empty for the per-reading baseline.
    pub dvalues: Vec<DValueRecord>,
    /// Fitted mixture thresholds per reference group (dynamic-threshold
    /// method only).
    pub thresholds: BTreeMap<String, GmmThreshold>,
    pub diagnostics: Vec<String>,
}

struct SiteDetection {
    labels: LabelSet,
    dvalues: Vec<DValueRecord>,
    thresholds: BTreeMap<String, GmmThreshold>,
    diagnostics: Vec<String>,
}

/// Label every portfolio with the configured method.
///
/// Sites run in parallel and merge in sorted-key order, so the output is
/// independent of scheduling. The per-reading baseline sees raw readings;
/// the profile-based methods bridge short gaps first.
pub fn detect(
    portfolios: &[Portfolio],
    params: &DetectParams,
) -> Result<DetectionOutput, PipelineError> {
    if portfolios.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut seen = BTreeSet::new();
    for p in portfolios {
        if !seen.insert(p.site_id.as_str()) {
            return Err(PipelineError::DuplicateSite { site_id: p.site_id.clone() });
        }
    }
    if params.n_components == 0 {
        return Err(PipelineError::BadParams { reason: "n_components must be positive".into() });
    }
    if params.method == DetectMethod::Aldi
        && !(params.p_threshold > 0.0 && params.p_threshold < 1.0)
    {
        return Err(PipelineError::BadParams {
            reason: format!("p_threshold must lie in (0, 1), got {}", params.p_threshold),
        });
    }

    let per_site: Vec<SiteDetection> = portfolios
        .par_iter()
        .map(|portfolio| detect_site(portfolio, params))
        .collect::<Result<_, _>>()?;

    let granularity = match (params.method, params.scope) {
        (DetectMethod::TwoSd, _) => Granularity::BuildingHour,
        (_, ReferenceScope::Site) => Granularity::SiteDay,
        (_, ReferenceScope::Building) => Granularity::BuildingDay,
    };
    let mut labels = LabelSet::new(params.method.tag(), granularity);
    let mut dvalues = Vec::new();
    let mut thresholds = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for site in per_site {
        labels.entries.extend(site.labels.entries);
        dvalues.extend(site.dvalues);
        thresholds.extend(site.thresholds);
        diagnostics.extend(site.diagnostics);
    }
    dvalues.sort_by(|a, b| {
        (&a.site_id, &a.building_id, a.date).cmp(&(&b.site_id, &b.building_id, b.date))
    });
    Ok(DetectionOutput { labels, dvalues, thresholds, diagnostics })
}

fn detect_site(
    portfolio: &Portfolio,
    params: &DetectParams,
) -> Result<SiteDetection, PipelineError> {
    if params.method == DetectMethod::TwoSd {
        return Ok(SiteDetection {
            labels: detector::two_sd_baseline(portfolio)?,
            dvalues: Vec::new(),
            thresholds: BTreeMap::new(),
            diagnostics: Vec::new(),
        });
    }

    let imputed = portfolio.impute_short_gaps(params.max_gap);
    let mut daily = Vec::with_capacity(imputed.series.len());
    for series in &imputed.series {
        let values = match matrix_profile::self_join(&series.values, HOURS_PER_DAY) {
            Ok(profile) => matrix_profile::daily_mp(&profile, params.aggregation)?,
            // A building with no evaluable window at all contributes no
            // daily values rather than poisoning the whole site.
            Err(MatrixProfileError::AllWindowsInvalid) => vec![None; series.n_days()],
            Err(e) => return Err(e.into()),
        };
        daily.push(BuildingDaily {
            building_id: series.building_id.clone(),
            first_date: series.start.date(),
            values,
        });
    }
    let samples = match params.scope {
        ReferenceScope::Site => matrix_profile::collect_site_samples(&portfolio.site_id, &daily),
        ReferenceScope::Building => daily
            .iter()
            .flat_map(|b| matrix_profile::collect_building_samples(&portfolio.site_id, b))
            .collect(),
    };
    let screened = detector::compute_dvalues(&samples, params.leave_one_out)?;

    let expected_granularity = match params.scope {
        ReferenceScope::Site => Granularity::SiteDay,
        ReferenceScope::Building => Granularity::BuildingDay,
    };
    let (mut labels, thresholds, diagnostics) = if screened.records.is_empty() {
        (LabelSet::new(params.method.tag(), expected_granularity), BTreeMap::new(), Vec::new())
    } else {
        match params.method {
            DetectMethod::AldiPlusPlus => {
                let out = detector::aldi_plus_plus(
                    &screened.records,
                    params.n_components,
                    params.seed,
                )?;
                (out.labels, out.thresholds, out.diagnostics)
            }
            DetectMethod::Aldi => (
                detector::aldi_baseline(&screened.records, params.p_threshold)?,
                BTreeMap::new(),
                Vec::new(),
            ),
            DetectMethod::TwoSd => unreachable!("handled above"),
        }
    };
    for (site, building, date) in screened.unevaluable {
        let key = match building {
            Some(b) => LabelKey::building_day(site, b, date),
            None => LabelKey::site_day(site, date),
        };
        labels.insert(key, LabelEntry::bare(Label::Unevaluable));
    }
    Ok(SiteDetection { labels, dvalues: screened.records, thresholds, diagnostics })
}

/// Serialize KS screening records as CSV, one row per (group, date).
pub fn write_dvalues<W: Write>(records: &[DValueRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "site_id,building_id,date,weekday,d_value,p_value,sample_size")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.site_id,
            r.building_id.as_deref().unwrap_or(""),
            r.date,
            r.weekday,
            r.d_value,
            r.p_value,
            r.sample_size
        )?;
    }
    Ok(())
}
