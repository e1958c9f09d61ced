//! Two-sample Kolmogorov-Smirnov test and a univariate Gaussian mixture.
//!
//! Both are deliberately small, deterministic implementations: the KS
//! statistic is the exact supremum of the ECDF gap via a merge scan, its
//! p-value the asymptotic Kolmogorov series; the mixture is fitted by EM
//! with quantile-based initialization (no random restarts), all density
//! arithmetic in log space.

use thiserror::Error;

/// EM stops when the log-likelihood improves by less than this.
pub const EM_TOLERANCE: f64 = 1e-6;

/// Hard cap on EM iterations.
pub const EM_MAX_ITERATIONS: usize = 500;

/// Mixture weights never drop below this floor; a component that collapses
/// under it is frozen there and the rest renormalized, so the component
/// count never changes mid-fit.
pub const WEIGHT_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("{which} sample is empty")]
    EmptySample { which: &'static str },
    #[error("{which} sample contains a non-finite value")]
    NonFinite { which: &'static str },
    #[error("mixture needs at least one component")]
    NoComponents,
    #[error("{n_points} data points cannot support {n_components} components")]
    TooFewPoints { n_points: usize, n_components: usize },
}

/// Exact two-sample KS statistic with its asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub d_value: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Two-sample Kolmogorov-Smirnov test.
///
/// `d_value` is the supremum of the absolute ECDF difference, computed
/// exactly by a merge scan over the pooled sorted values (ties advance both
/// sides before the gap is read). Both inputs must be nonempty and finite.
/// The statistic depends only on the ranks, so any strictly increasing
/// transform applied to both samples leaves it unchanged.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    for (which, s) in [("first", a), ("second", b)] {
        if s.is_empty() {
            return Err(StatsError::EmptySample { which });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite { which });
        }
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|p, q| p.partial_cmp(q).expect("finite"));
    ys.sort_unstable_by(|p, q| p.partial_cmp(q).expect("finite"));

    let n1 = xs.len();
    let n2 = ys.len();
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n1 && j < n2 {
        let v = xs[i].min(ys[j]);
        while i < n1 && xs[i] == v {
            i += 1;
        }
        while j < n2 && ys[j] == v {
            j += 1;
        }
        let gap = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        if gap > d {
            d = gap;
        }
    }
    // Once one sample is exhausted the gap only shrinks toward both ECDFs
    // reaching 1, so the scan can stop.
    let n_eff = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let lambda = (n_eff.sqrt() + 0.12 + 0.11 / n_eff.sqrt()) * d;
    Ok(KsResult {
        d_value: d,
        p_value: kolmogorov_tail(lambda),
        n1,
        n2,
    })
}

/// Asymptotic tail probability Q(lambda) = 2 * sum_{j>=1} (-1)^(j-1)
/// exp(-2 j^2 lambda^2), clamped to [0, 1]. Terms below 1e-12 are dropped.
/// Below lambda = 0.1 the tail equals 1 to better than 1e-50 (the matching
/// CDF is dominated by exp(-pi^2 / (8 lambda^2))), so the series, which
/// converges slowly there, is skipped.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.1 {
        return 1.0;
    }
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for j in 1..=1000 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        if term < 1e-12 {
            break;
        }
        sum += sign * term;
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl GaussianComponent {
    fn log_weighted_density(&self, x: f64) -> f64 {
        let diff = x - self.mean;
        self.weight.ln()
            - 0.5 * ((2.0 * std::f64::consts::PI * self.variance).ln() + diff * diff / self.variance)
    }
}

/// A fitted univariate Gaussian mixture, components sorted by ascending
/// mean. Weights sum to 1 and every variance sits at or above the fit's
/// variance floor.
#[derive(Debug, Clone)]
pub struct GaussianMixture1d {
    pub components: Vec<GaussianComponent>,
    /// Log-likelihood after each E-step, in iteration order.
    pub log_likelihood_trace: Vec<f64>,
    /// Seed recorded for provenance; the quantile initialization makes the
    /// fit deterministic, so no randomness is actually consumed.
    pub seed: u64,
}

impl GaussianMixture1d {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Largest component mean.
    pub fn max_mean(&self) -> f64 {
        self.components.last().expect("at least one component").mean
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let last = sorted.len() - 1;
    let pos = q.clamp(0.0, 1.0) * last as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let t = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * t
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Fit a `n_components`-component univariate Gaussian mixture by EM.
///
/// Initialization is deterministic: component `c` starts at the
/// `(c + 0.5) / n_components` quantile with equal weights and variance equal
/// to the data variance over `n_components`. Variances are floored at
/// `max(1e-6, 1e-3 * data variance)`; weights at [`WEIGHT_FLOOR`]. EM stops
/// after [`EM_MAX_ITERATIONS`] or when the log-likelihood improvement drops
/// below [`EM_TOLERANCE`]. Identical calls are bit-identical.
///
/// All-identical data short-circuits to a defined result: the first
/// component carries all non-floor weight at the datum, the rest sit frozen
/// at the weight floor.
pub fn fit_gmm(data: &[f64], n_components: usize, seed: u64) -> Result<GaussianMixture1d, StatsError> {
    if n_components == 0 {
        return Err(StatsError::NoComponents);
    }
    if data.is_empty() {
        return Err(StatsError::EmptySample { which: "mixture" });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite { which: "mixture" });
    }
    if data.len() < n_components {
        return Err(StatsError::TooFewPoints {
            n_points: data.len(),
            n_components,
        });
    }

    let n = data.len();
    let nf = n as f64;
    let k = n_components;

    if data.iter().all(|v| *v == data[0]) {
        return Ok(degenerate_mixture(data[0], k, nf, seed));
    }

    let mean = data.iter().sum::<f64>() / nf;
    let variance = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;
    let variance_floor = (1e-3 * variance).max(1e-6);

    let mut sorted = data.to_vec();
    sorted.sort_unstable_by(|p, q| p.partial_cmp(q).expect("finite"));
    let mut components: Vec<GaussianComponent> = (0..k)
        .map(|c| GaussianComponent {
            weight: 1.0 / k as f64,
            mean: quantile(&sorted, (c as f64 + 0.5) / k as f64),
            variance: (variance / k as f64).max(variance_floor),
        })
        .collect();

    let mut trace = Vec::new();
    let mut responsibilities = vec![0.0f64; n * k];
    let mut log_terms = vec![0.0f64; k];

    for _ in 0..EM_MAX_ITERATIONS {
        // E-step: log-space responsibilities and total log-likelihood.
        let mut log_likelihood = 0.0f64;
        for (idx, &x) in data.iter().enumerate() {
            for (c, comp) in components.iter().enumerate() {
                log_terms[c] = comp.log_weighted_density(x);
            }
            let lse = log_sum_exp(&log_terms);
            log_likelihood += lse;
            for c in 0..k {
                responsibilities[idx * k + c] = (log_terms[c] - lse).exp();
            }
        }
        let converged = trace
            .last()
            .is_some_and(|prev| log_likelihood - prev < EM_TOLERANCE);
        trace.push(log_likelihood);
        if converged {
            break;
        }

        // M-step.
        for c in 0..k {
            let nk: f64 = (0..n).map(|idx| responsibilities[idx * k + c]).sum();
            if nk > 0.0 {
                let mu = (0..n)
                    .map(|idx| responsibilities[idx * k + c] * data[idx])
                    .sum::<f64>()
                    / nk;
                let var = (0..n)
                    .map(|idx| {
                        let d = data[idx] - mu;
                        responsibilities[idx * k + c] * d * d
                    })
                    .sum::<f64>()
                    / nk;
                components[c].mean = mu;
                components[c].variance = var.max(variance_floor);
            }
            components[c].weight = nk / nf;
        }
        enforce_weight_floor(&mut components);
    }

    components.sort_by(|a, b| a.mean.partial_cmp(&b.mean).expect("finite means"));
    Ok(GaussianMixture1d {
        components,
        log_likelihood_trace: trace,
        seed,
    })
}

fn degenerate_mixture(value: f64, k: usize, nf: f64, seed: u64) -> GaussianMixture1d {
    let variance = 1e-6;
    let lead_weight = 1.0 - WEIGHT_FLOOR * (k - 1) as f64;
    let components: Vec<GaussianComponent> = (0..k)
        .map(|c| GaussianComponent {
            weight: if c == 0 { lead_weight } else { WEIGHT_FLOOR },
            mean: value,
            variance,
        })
        .collect();
    // All components share mean and variance, so the mixture density at the
    // datum is the single-component density and weights drop out of the sum.
    let log_likelihood = nf
        * (-0.5 * (2.0 * std::f64::consts::PI * variance).ln());
    GaussianMixture1d {
        components,
        log_likelihood_trace: vec![log_likelihood],
        seed,
    }
}

fn enforce_weight_floor(components: &mut [GaussianComponent]) {
    let floored: Vec<bool> = components.iter().map(|c| c.weight < WEIGHT_FLOOR).collect();
    let n_floored = floored.iter().filter(|f| **f).count();
    if n_floored == 0 {
        return;
    }
    let free_mass: f64 = components
        .iter()
        .zip(&floored)
        .filter(|(_, f)| !**f)
        .map(|(c, _)| c.weight)
        .sum();
    let target = 1.0 - WEIGHT_FLOOR * n_floored as f64;
    for (comp, is_floored) in components.iter_mut().zip(&floored) {
        if *is_floored {
            comp.weight = WEIGHT_FLOOR;
        } else if free_mass > 0.0 {
            comp.weight *= target / free_mass;
        }
    }
}

/// Index of the component with the largest weighted density at `x`
/// (components are mean-sorted; exact ties go to the lower index).
pub fn responsibility(mixture: &GaussianMixture1d, x: f64) -> usize {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (c, comp) in mixture.components.iter().enumerate() {
        let score = comp.log_weighted_density(x);
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}
