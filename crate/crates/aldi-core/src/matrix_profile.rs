//! Self-join matrix profile over z-normalized subsequences.
//!
//! For every window of `window` consecutive hours the profile holds the
//! Euclidean distance to the most similar non-overlapping window of the same
//! series, after both are z-normalized. Distances are computed with an
//! incremental dot-product sweep along diagonals, O(n^2) time and O(n)
//! memory, never materializing the full distance matrix. The running dot
//! product is recomputed exactly every [`REFRESH_INTERVAL`] steps to bound
//! floating-point drift.
//!
//! Zero-variance (flat) windows z-normalize to the all-zero vector: two flat
//! windows are at distance 0, a flat and a non-flat window at `sqrt(window)`.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, NaiveDate, Weekday};
use thiserror::Error;

/// Default subsequence length: one day of hourly readings.
pub const DEFAULT_WINDOW: usize = 24;

/// Diagonal steps between exact recomputations of the running dot product.
pub const REFRESH_INTERVAL: usize = 4096;

/// A window whose population variance is at or below
/// `FLAT_EPSILON * max(mean^2, 1)` is treated as flat. Rolling-sum variance
/// of a constant window cancels to roughly 1e-11 relative noise, so an exact
/// zero test would misclassify real flatlines.
const FLAT_EPSILON: f64 = 1e-12;

/// Correlations this close to 1 count as exact matches (distance 0).
const CORRELATION_SNAP: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum MatrixProfileError {
    #[error("series of {len} hours is shorter than two windows of {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("window must be at least 2, got {window}")]
    WindowTooSmall { window: usize },
    #[error("no window of the series is fully observed")]
    AllWindowsInvalid,
    #[error("slices of lengths {a} and {b} cannot be compared")]
    LengthMismatch { a: usize, b: usize },
    #[error("daily aggregation needs window = 24, got {window}")]
    WindowNotDaily { window: usize },
}

/// Matrix profile of one series.
///
/// `distances[i]` and `neighbors[i]` are meaningful only where `valid[i]`;
/// a window is invalid when it overlaps a missing hour or has no valid
/// non-excluded peer. Neighbor pairs always satisfy
/// `|i - neighbors[i]| > exclusion_zone(window)`.
#[derive(Debug, Clone)]
pub struct MatrixProfile {
    pub window: usize,
    pub distances: Vec<f64>,
    pub neighbors: Vec<usize>,
    pub valid: Vec<bool>,
}

impl MatrixProfile {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// Trivial-match exclusion half-width: windows closer than this (inclusive)
/// to the query never count as its neighbor.
pub fn exclusion_zone(window: usize) -> usize {
    window.div_ceil(2)
}

/// How the per-window profile is reduced to one value per day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// The profile value of the window starting at the day's midnight.
    DayStart,
    /// Mean over the valid windows starting within the day.
    DayMean,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::DayStart => "day-start",
            Aggregation::DayMean => "day-mean",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day-start" => Ok(Aggregation::DayStart),
            "day-mean" => Ok(Aggregation::DayMean),
            other => Err(format!(
                "unknown aggregation {other:?} (expected day-start or day-mean)"
            )),
        }
    }
}

struct WindowStats {
    mean: Vec<f64>,
    sigma: Vec<f64>,
    flat: Vec<bool>,
}

/// `level_offset` is added back to each window mean when testing flatness:
/// the caller centers the series for numerical conditioning, but the flat
/// threshold is defined against the window's original level.
///
/// Window variances are computed by the two-pass formula rather than rolling
/// sums of squares: the rolling form's cancellation noise scales with the
/// series' absolute magnitudes and can flip the flatness decision for
/// constant runs. The exact form costs O(n * window), which is negligible
/// next to the O(n^2) join that consumes these stats.
fn window_stats(x: &[f64], window: usize, level_offset: f64) -> WindowStats {
    let n_windows = x.len() - window + 1;
    let mut sum = vec![0.0f64; x.len() + 1];
    for (i, &v) in x.iter().enumerate() {
        sum[i + 1] = sum[i] + v;
    }
    let m = window as f64;
    let mut mean = Vec::with_capacity(n_windows);
    let mut sigma = Vec::with_capacity(n_windows);
    let mut flat = Vec::with_capacity(n_windows);
    for i in 0..n_windows {
        let mu = (sum[i + window] - sum[i]) / m;
        let var = x[i..i + window].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
        let level = mu + level_offset;
        let threshold = FLAT_EPSILON * (level * level).max(1.0);
        let is_flat = var <= threshold;
        mean.push(mu);
        sigma.push(if is_flat { 0.0 } else { var.sqrt() });
        flat.push(is_flat);
    }
    WindowStats { mean, sigma, flat }
}

/// Euclidean distance between the z-normalized copies of two equal-length
/// slices. Affine changes of either input (positive or negative scale plus
/// offset up to sign) leave the result unchanged; flat inputs map to the
/// zero vector.
pub fn znorm_distance(a: &[f64], b: &[f64]) -> Result<f64, MatrixProfileError> {
    if a.len() != b.len() {
        return Err(MatrixProfileError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let zn = |v: &[f64]| -> Vec<f64> {
        let m = v.len() as f64;
        let mean = v.iter().sum::<f64>() / m;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
        if var <= FLAT_EPSILON * (mean * mean).max(1.0) {
            vec![0.0; v.len()]
        } else {
            let sd = var.sqrt();
            v.iter().map(|x| (x - mean) / sd).collect()
        }
    };
    let za = zn(a);
    let zb = zn(b);
    let d2: f64 = za.iter().zip(&zb).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(d2.max(0.0).sqrt())
}

/// Self-join matrix profile of an hourly series.
///
/// `values` may contain missing hours; any window overlapping one is marked
/// invalid and neither receives a profile value nor serves as a neighbor.
/// Ties in the nearest-neighbor search break toward the smallest index, so
/// the result is bit-reproducible regardless of traversal order.
///
/// # Errors
///
/// The series must be at least `2 * window` hours long with `window >= 2`,
/// and at least two windows must be fully observed.
pub fn self_join(values: &[Option<f64>], window: usize) -> Result<MatrixProfile, MatrixProfileError> {
    if window < 2 {
        return Err(MatrixProfileError::WindowTooSmall { window });
    }
    if values.len() < 2 * window {
        return Err(MatrixProfileError::SeriesTooShort { len: values.len(), window });
    }
    let n = values.len();
    let n_windows = n - window + 1;
    let exclusion = exclusion_zone(window);

    // Missing hours become placeholders; the windows covering them are
    // invalid, so placeholders never reach a reported distance.
    let mut x = vec![0.0f64; n];
    let mut missing_prefix = vec![0usize; n + 1];
    let mut observed_sum = 0.0f64;
    let mut observed_count = 0usize;
    for (i, v) in values.iter().enumerate() {
        missing_prefix[i + 1] = missing_prefix[i] + usize::from(v.is_none());
        if let Some(value) = v {
            x[i] = *value;
            observed_sum += *value;
            observed_count += 1;
        }
    }
    let observed =
        |i: usize| missing_prefix[i + window] - missing_prefix[i] == 0;
    let window_ok: Vec<bool> = (0..n_windows).map(observed).collect();
    if window_ok.iter().filter(|ok| **ok).count() < 2 {
        return Err(MatrixProfileError::AllWindowsInvalid);
    }

    // Center on the global observed mean. Z-normalized distances are exactly
    // shift-invariant, so this changes no result, but it keeps the rolling
    // sums conditioned on the data's spread rather than its absolute level
    // (readings far from zero would otherwise swamp small correlations).
    // Placeholders stay at the centered zero, i.e. at the data mean.
    let global_mean = observed_sum / observed_count as f64;
    for (i, v) in values.iter().enumerate() {
        if v.is_some() {
            x[i] -= global_mean;
        }
    }

    let stats = window_stats(&x, window, global_mean);
    let m = window as f64;

    let mut distances = vec![f64::INFINITY; n_windows];
    let mut neighbors = vec![usize::MAX; n_windows];
    let update = |row: usize, d: f64, peer: usize, distances: &mut [f64], neighbors: &mut [usize]| {
        if d < distances[row] || (d == distances[row] && peer < neighbors[row]) {
            distances[row] = d;
            neighbors[row] = peer;
        }
    };

    let dot = |i: usize, j: usize| -> f64 {
        (0..window).map(|k| x[i + k] * x[j + k]).sum()
    };

    for diag in (exclusion + 1)..n_windows {
        let mut q = dot(0, diag);
        let mut since_refresh = 0usize;
        for i in 0..(n_windows - diag) {
            let j = i + diag;
            if i > 0 {
                if since_refresh == REFRESH_INTERVAL {
                    q = dot(i, j);
                    since_refresh = 0;
                } else {
                    q = q - x[i - 1] * x[j - 1] + x[i + window - 1] * x[j + window - 1];
                    since_refresh += 1;
                }
            }
            if !(window_ok[i] && window_ok[j]) {
                continue;
            }
            let d = if stats.flat[i] && stats.flat[j] {
                0.0
            } else if stats.flat[i] || stats.flat[j] {
                m.sqrt()
            } else {
                let corr = (q - m * stats.mean[i] * stats.mean[j]) / (m * stats.sigma[i] * stats.sigma[j]);
                // Exact repeats must report 0, but the rolling dot product
                // leaves ~1e-16 of residue on the correlation, which the
                // square root would amplify to ~1e-8. Snapping costs at most
                // sqrt(2m * 1e-14) of accuracy, far inside the oracle budget.
                if corr >= 1.0 - CORRELATION_SNAP {
                    0.0
                } else {
                    (2.0 * m * (1.0 - corr)).max(0.0).sqrt()
                }
            };
            update(i, d, j, &mut distances, &mut neighbors);
            update(j, d, i, &mut distances, &mut neighbors);
        }
    }

    let valid: Vec<bool> = (0..n_windows)
        .map(|i| window_ok[i] && neighbors[i] != usize::MAX)
        .collect();
    for i in 0..n_windows {
        if !valid[i] {
            distances[i] = f64::NAN;
            neighbors[i] = usize::MAX;
        }
    }
    Ok(MatrixProfile { window, distances, neighbors, valid })
}

/// Reduce a daily-window profile to one optional value per day; `None`
/// marks a day that cannot be evaluated under the chosen aggregation.
///
/// The series behind the profile must span whole days (alignment guarantees
/// this) and the window must be 24 so that "the window starting at midnight"
/// covers exactly one day.
pub fn daily_mp(
    profile: &MatrixProfile,
    aggregation: Aggregation,
) -> Result<Vec<Option<f64>>, MatrixProfileError> {
    if profile.window != DEFAULT_WINDOW {
        return Err(MatrixProfileError::WindowNotDaily { window: profile.window });
    }
    let n_hours = profile.len() + profile.window - 1;
    let n_days = n_hours / DEFAULT_WINDOW;
    let mut out = Vec::with_capacity(n_days);
    for day in 0..n_days {
        let start = day * DEFAULT_WINDOW;
        let value = match aggregation {
            Aggregation::DayStart => {
                if start < profile.len() && profile.valid[start] {
                    Some(profile.distances[start])
                } else {
                    None
                }
            }
            Aggregation::DayMean => {
                let end = (start + DEFAULT_WINDOW).min(profile.len());
                let vals: Vec<f64> = (start..end)
                    .filter(|&i| profile.valid[i])
                    .map(|i| profile.distances[i])
                    .collect();
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            }
        };
        out.push(value);
    }
    Ok(out)
}

/// One building's per-day profile values, ready for pooling.
#[derive(Debug, Clone)]
pub struct BuildingDaily {
    pub building_id: String,
    pub first_date: NaiveDate,
    /// One slot per day; `None` is an unevaluable day.
    pub values: Vec<Option<f64>>,
}

/// Pooled per-day profile values of one reference group.
///
/// The reference pool key is the site id plus, in per-building mode, the
/// building id (`None` means all the site's buildings pool together).
#[derive(Debug, Clone, PartialEq)]
pub struct DailySample {
    pub site_id: String,
    pub building_id: Option<String>,
    pub date: NaiveDate,
    pub weekday: Weekday,
    /// Pooled values for the date; may be empty when every building was
    /// unevaluable (flagged downstream, never silently dropped).
    pub values: Vec<f64>,
}

/// Pool per-building daily values into one site-wide sample per date.
///
/// Buildings contribute in the order given; a date keeps an entry even when
/// no building could be evaluated on it.
pub fn collect_site_samples(site_id: &str, per_building: &[BuildingDaily]) -> Vec<DailySample> {
    let mut by_date: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for building in per_building {
        for (day, value) in building.values.iter().enumerate() {
            let date = building.first_date + chrono::Days::new(day as u64);
            let slot = by_date.entry(date).or_default();
            if let Some(v) = value {
                slot.push(*v);
            }
        }
    }
    by_date
        .into_iter()
        .map(|(date, values)| DailySample {
            site_id: site_id.to_string(),
            building_id: None,
            date,
            weekday: date.weekday(),
            values,
        })
        .collect()
}

/// One sample per date for a single building judged against its own history.
pub fn collect_building_samples(site_id: &str, building: &BuildingDaily) -> Vec<DailySample> {
    (0..building.values.len())
        .map(|day| {
            let date = building.first_date + chrono::Days::new(day as u64);
            DailySample {
                site_id: site_id.to_string(),
                building_id: Some(building.building_id.clone()),
                date,
                weekday: date.weekday(),
                values: building.values[day].into_iter().collect(),
            }
        })
        .collect()
}

/// Dump a profile as CSV (`index,distance,neighbor_index,valid`); invalid
/// rows leave distance and neighbor empty.
pub fn write_profile_csv<W: Write>(profile: &MatrixProfile, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "index,distance,neighbor_index,valid")?;
    for i in 0..profile.len() {
        if profile.valid[i] {
            writeln!(out, "{i},{},{},1", profile.distances[i], profile.neighbors[i])?;
        } else {
            writeln!(out, "{i},,,0")?;
        }
    }
    Ok(())
}
