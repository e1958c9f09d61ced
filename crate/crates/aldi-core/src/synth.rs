//! Seeded synthetic portfolios for tests and benchmarks: smooth weekly
//! load shapes per building, plus injectable anomalies with exact ground
//! truth.
//!
//! Generated weeks repeat each weekday's 24-hour shape up to a per-week
//! gain and offset, which z-normalization cancels — so typical days stay
//! mutual nearest neighbors while injected days stand out. Per-hour noise
//! with a building-specific amplitude gives each building a stable,
//! distinct profile-distance level, which keeps day-versus-pool CDF
//! distances of typical days small and tightly clustered.

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::{Granularity, Label, LabelEntry, LabelKey, LabelSet, MethodTag};
use crate::ingest::{MeterSeries, Portfolio, HOURS_PER_DAY};

/// Hours raised on a spike day (enough for the 14-hour daily rule).
pub const SPIKED_HOURS: usize = 16;

/// Spike amplitude in units of the building's clean standard deviation.
pub const SPIKE_SIGMAS: f64 = 5.0;

/// Relative amplitude of the jitter that keeps flatline days from being
/// bit-identical (and from registering as zero-variance windows).
pub const FLATLINE_JITTER: f64 = 0.002;

/// Shape of a generated portfolio.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub site_id: String,
    pub n_buildings: usize,
    pub n_days: usize,
    pub start: NaiveDate,
    pub seed: u64,
    /// Per-week multiplicative drift amplitude (e.g. 0.08 = ±8%).
    pub gain_jitter: f64,
    /// Per-week additive drift amplitude as a fraction of the base level.
    pub offset_jitter: f64,
    /// Per-hour noise standard deviation as a fraction of the base level;
    /// scaled per building from 0.5x to 2x of this value.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            site_id: "site0".to_string(),
            n_buildings: 10,
            n_days: 364,
            // A Monday, so weekday structure lines up with calendar weeks.
            start: NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date"),
            seed: 0,
            gain_jitter: 0.08,
            offset_jitter: 0.05,
            noise: 0.02,
        }
    }
}

/// Standard normal draw via the Box-Muller transform.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Smooth 24-hour load shape: weekdays peak mid-day with growing amplitude
/// across the week, weekends run lower and flatter. Distinct per weekday.
fn template(base: f64, phase: f64, weekday: usize, hour: usize) -> f64 {
    let (level, amplitude) = if weekday >= 5 {
        (0.72, 0.15)
    } else {
        (1.0, 0.30 + 0.02 * weekday as f64)
    };
    let arg = std::f64::consts::TAU * (hour as f64 - 8.0 - phase - 0.3 * weekday as f64) / 24.0;
    base * (level + amplitude * arg.sin())
}

/// Generate a complete (no missing hours) portfolio per the config.
/// Deterministic in the seed.
pub fn generate(config: &SynthConfig) -> Portfolio {
    assert!(config.n_buildings > 0 && config.n_days > 0, "empty synthetic portfolio");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = config.start.and_hms_opt(0, 0, 0).expect("midnight is valid");
    let denom = (config.n_buildings.max(2) - 1) as f64;
    let mut series = Vec::with_capacity(config.n_buildings);
    for b in 0..config.n_buildings {
        let base = 50.0 + 200.0 * rng.random::<f64>();
        let phase = 4.0 * rng.random::<f64>() - 2.0;
        // Stagger noise levels so each building settles at its own typical
        // profile-distance; 0.5x .. 2x of the configured amplitude.
        let sigma = config.noise * base * (0.5 + 1.5 * b as f64 / denom);
        let weekly: Vec<(f64, f64)> = (0..config.n_days.div_ceil(7))
            .map(|_| {
                (
                    1.0 + config.gain_jitter * (2.0 * rng.random::<f64>() - 1.0),
                    config.offset_jitter * base * (2.0 * rng.random::<f64>() - 1.0),
                )
            })
            .collect();
        let mut values = Vec::with_capacity(config.n_days * HOURS_PER_DAY);
        for day in 0..config.n_days {
            let date = config.start + Days::new(day as u64);
            let weekday = date.weekday().num_days_from_monday() as usize;
            let (gain, offset) = weekly[day / 7];
            for hour in 0..HOURS_PER_DAY {
                let clean = gain * template(base, phase, weekday, hour) + offset;
                values.push(Some((clean + sigma * normal(&mut rng)).max(0.0)));
            }
        }
        series.push(MeterSeries {
            building_id: format!("b{b:03}"),
            site_id: config.site_id.clone(),
            start,
            values,
        });
    }
    Portfolio { site_id: config.site_id.clone(), start, series }
}

/// What was injected where.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    /// A handful of hours raised far above the building's range.
    Spike,
    /// The whole day pinned near its own mean — values stay in range but
    /// the shape is gone.
    Flatline,
}

/// One injected anomalous site-day.
#[derive(Debug, Clone)]
pub struct InjectedAnomaly {
    pub date: NaiveDate,
    pub kind: AnomalyKind,
    pub building_ids: Vec<String>,
}

/// Ground truth of an injection pass.
#[derive(Debug, Clone)]
pub struct InjectionPlan {
    pub anomalies: Vec<InjectedAnomaly>,
}

impl InjectionPlan {
    pub fn dates(&self) -> Vec<NaiveDate> {
        self.anomalies.iter().map(|a| a.date).collect()
    }
}

/// Corrupt `n_anomalies` evenly spaced distinct dates, alternating spike
/// and flatline days, hitting `buildings_per_date` buildings in rotation.
/// Spike hours are re-drawn per (date, building) so no two anomalous days
/// share a shape. Deterministic in the seed.
pub fn inject_anomalies(
    portfolio: &mut Portfolio,
    n_anomalies: usize,
    buildings_per_date: usize,
    seed: u64,
) -> InjectionPlan {
    let n_days = portfolio.n_days();
    let n_buildings = portfolio.series.len();
    assert!(n_anomalies <= n_days, "more anomalies than days");
    assert!((1..=n_buildings).contains(&buildings_per_date), "bad building count");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Clean per-building spread, captured before any corruption.
    let clean_sd: Vec<f64> = portfolio
        .series
        .iter()
        .map(|s| {
            let vals: Vec<f64> = s.values.iter().flatten().copied().collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();

    let mut anomalies = Vec::with_capacity(n_anomalies);
    for i in 0..n_anomalies {
        let day = ((i as f64 + 0.5) * n_days as f64 / n_anomalies as f64).floor() as usize;
        let kind = if i % 2 == 0 { AnomalyKind::Spike } else { AnomalyKind::Flatline };
        let first = (i * buildings_per_date) % n_buildings;
        let chosen: Vec<usize> =
            (0..buildings_per_date).map(|k| (first + k) % n_buildings).collect();
        let mut building_ids = Vec::with_capacity(buildings_per_date);
        for &b in &chosen {
            let series = &mut portfolio.series[b];
            building_ids.push(series.building_id.clone());
            let day_start = day * HOURS_PER_DAY;
            match kind {
                AnomalyKind::Spike => {
                    let mut hours: Vec<usize> = (0..HOURS_PER_DAY).collect();
                    for k in 0..SPIKED_HOURS {
                        let j = rng.random_range(k..HOURS_PER_DAY);
                        hours.swap(k, j);
                    }
                    for &h in &hours[..SPIKED_HOURS] {
                        let v = series.values[day_start + h].expect("generated hours are present");
                        series.values[day_start + h] = Some(v + SPIKE_SIGMAS * clean_sd[b]);
                    }
                }
                AnomalyKind::Flatline => {
                    let day_mean = (0..HOURS_PER_DAY)
                        .map(|h| series.values[day_start + h].expect("present"))
                        .sum::<f64>()
                        / HOURS_PER_DAY as f64;
                    for h in 0..HOURS_PER_DAY {
                        let jitter = FLATLINE_JITTER * (2.0 * rng.random::<f64>() - 1.0);
                        series.values[day_start + h] = Some(day_mean * (1.0 + jitter));
                    }
                }
            }
        }
        anomalies.push(InjectedAnomaly {
            date: portfolio.date_of_day(day),
            kind,
            building_ids,
        });
    }
    InjectionPlan { anomalies }
}

/// Site-day ground truth over the portfolio's whole span: discord on
/// injected dates, non-discord elsewhere.
pub fn truth_site_day(portfolio: &Portfolio, plan: &InjectionPlan) -> LabelSet {
    let mut labels = LabelSet::new(MethodTag::GroundTruth, Granularity::SiteDay);
    for day in 0..portfolio.n_days() {
        labels.insert(
            LabelKey::site_day(&portfolio.site_id, portfolio.date_of_day(day)),
            LabelEntry::bare(Label::NonDiscord),
        );
    }
    for anomaly in &plan.anomalies {
        labels.insert(
            LabelKey::site_day(&portfolio.site_id, anomaly.date),
            LabelEntry::bare(Label::Discord),
        );
    }
    labels
}

/// Building-day ground truth: discord exactly for the corrupted
/// (building, date) pairs.
pub fn truth_building_day(portfolio: &Portfolio, plan: &InjectionPlan) -> LabelSet {
    let mut labels = LabelSet::new(MethodTag::GroundTruth, Granularity::BuildingDay);
    for series in &portfolio.series {
        for day in 0..portfolio.n_days() {
            labels.insert(
                LabelKey::building_day(
                    &portfolio.site_id,
                    &series.building_id,
                    portfolio.date_of_day(day),
                ),
                LabelEntry::bare(Label::NonDiscord),
            );
        }
    }
    for anomaly in &plan.anomalies {
        for building in &anomaly.building_ids {
            labels.insert(
                LabelKey::building_day(&portfolio.site_id, building, anomaly.date),
                LabelEntry::bare(Label::Discord),
            );
        }
    }
    labels
}
