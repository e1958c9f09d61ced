//! Evaluation: confusion matrices against ground truth, rank-based ROC
//! AUC, RMSLE, and a wall-clock benchmark harness that times each labeling
//! method and scores its output.
//!
//! Unevaluable labels are never tallied as hits or misses: pairs where
//! either side is unevaluable are excluded and counted separately.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use thiserror::Error;

use crate::detector::{Granularity, Label, LabelEntry, LabelKey, LabelSet};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction labels are {pred} but truth labels are {truth}")]
    GranularityMismatch { pred: Granularity, truth: Granularity },
    #[error("no evaluable (prediction, truth) pairs to score")]
    NothingToScore,
    #[error("AUC needs both classes, got only {class}")]
    SingleClass { class: &'static str },
    #[error("scores must be finite, got {value}")]
    NonFiniteScore { value: f64 },
    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },
    #[error("length mismatch: {left} predictions vs {right} actuals")]
    LengthMismatch { left: usize, right: usize },
    #[error("values must be non-negative and finite, got {value}")]
    BadValue { value: f64 },
    #[error("benchmark needs at least one run")]
    ZeroRuns,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Counts of evaluable (prediction, truth) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    /// Recall over actual positives; `None` when there are none.
    pub fn tpr(&self) -> Option<f64> {
        let positives = self.true_positive + self.false_negative;
        (positives > 0).then(|| self.true_positive as f64 / positives as f64)
    }

    /// False alarms over actual negatives; `None` when there are none.
    pub fn fpr(&self) -> Option<f64> {
        let negatives = self.false_positive + self.true_negative;
        (negatives > 0).then(|| self.false_positive as f64 / negatives as f64)
    }
}

/// [`confusion`] output: tallies plus how many pairs were excluded because
/// one side was unevaluable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionOutcome {
    pub matrix: ConfusionMatrix,
    pub excluded_unevaluable: usize,
}

/// Tally predictions against truth over the keys present in both sets.
///
/// # Errors
///
/// The two sets must share a granularity and at least one evaluable pair.
pub fn confusion(pred: &LabelSet, truth: &LabelSet) -> Result<ConfusionOutcome, EvalError> {
    if pred.granularity != truth.granularity {
        return Err(EvalError::GranularityMismatch {
            pred: pred.granularity,
            truth: truth.granularity,
        });
    }
    let mut matrix = ConfusionMatrix::default();
    let mut excluded = 0usize;
    for (key, p) in &pred.entries {
        let Some(t) = truth.entries.get(key) else { continue };
        match (p.label, t.label) {
            (Label::Unevaluable, _) | (_, Label::Unevaluable) => excluded += 1,
            (Label::Discord, Label::Discord) => matrix.true_positive += 1,
            (Label::Discord, Label::NonDiscord) => matrix.false_positive += 1,
            (Label::NonDiscord, Label::Discord) => matrix.false_negative += 1,
            (Label::NonDiscord, Label::NonDiscord) => matrix.true_negative += 1,
        }
    }
    if matrix.total() == 0 {
        return Err(EvalError::NothingToScore);
    }
    Ok(ConfusionOutcome { matrix, excluded_unevaluable: excluded })
}

/// Rank-based ROC AUC over `(score, is_positive)` pairs. Ties in score get
/// the average rank, so binary scores reproduce `(tpr + 1 - fpr) / 2`
/// exactly.
///
/// # Errors
///
/// Scores must be finite and both classes must appear.
pub fn roc_auc(scored: &[(f64, bool)]) -> Result<f64, EvalError> {
    if scored.is_empty() {
        return Err(EvalError::EmptyInput { what: "scored pairs" });
    }
    for (score, _) in scored {
        if !score.is_finite() {
            return Err(EvalError::NonFiniteScore { value: *score });
        }
    }
    let n_pos = scored.iter().filter(|(_, y)| *y).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 {
        return Err(EvalError::SingleClass { class: "negative" });
    }
    if n_neg == 0 {
        return Err(EvalError::SingleClass { class: "positive" });
    }

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.partial_cmp(&scored[b].0).expect("finite scores"));

    // Average ranks across tied scores, then sum the positives' ranks.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scored[order[j]].0 == scored[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if scored[idx].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// [`roc_auc`] over keyed scores against a truth label set: keys are
/// intersected and unevaluable truth keys are skipped.
pub fn roc_auc_keyed(
    scores: &BTreeMap<LabelKey, f64>,
    truth: &LabelSet,
) -> Result<f64, EvalError> {
    let mut scored = Vec::new();
    for (key, score) in scores {
        match truth.entries.get(key).map(|e| e.label) {
            Some(Label::Discord) => scored.push((*score, true)),
            Some(Label::NonDiscord) => scored.push((*score, false)),
            Some(Label::Unevaluable) | None => {}
        }
    }
    roc_auc(&scored)
}

/// Root mean squared logarithmic error via `ln(1 + x)`.
///
/// # Errors
///
/// Inputs must be equal-length, non-empty, non-negative and finite.
pub fn rmsle(predictions: &[f64], actuals: &[f64]) -> Result<f64, EvalError> {
    if predictions.len() != actuals.len() {
        return Err(EvalError::LengthMismatch {
            left: predictions.len(),
            right: actuals.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput { what: "rmsle values" });
    }
    let mut sum = 0.0f64;
    for (&p, &a) in predictions.iter().zip(actuals) {
        for v in [p, a] {
            if !v.is_finite() || v < 0.0 {
                return Err(EvalError::BadValue { value: v });
            }
        }
        let d = p.ln_1p() - a.ln_1p();
        sum += d * d;
    }
    Ok((sum / predictions.len() as f64).sqrt())
}

/// One labeling method under benchmark: a timed detection closure and an
/// untimed finalize step that converts its native output to the truth's
/// granularity.
pub struct Labeler<'a> {
    pub name: String,
    /// Timed: run detection end to end in the method's native granularity.
    pub run: Box<dyn Fn() -> Result<LabelSet, String> + 'a>,
    /// Untimed: normalize native labels for comparison against truth.
    pub finalize: Box<dyn Fn(LabelSet) -> Result<LabelSet, String> + 'a>,
}

/// Scores and timing of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    /// Wall-clock of each timed run, milliseconds.
    pub runtime_ms_runs: Vec<f64>,
    /// Arithmetic mean of `runtime_ms_runs`.
    pub runtime_mean_ms: f64,
    pub confusion: ConfusionMatrix,
    pub excluded_unevaluable: usize,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    /// Rank AUC against truth: over screening statistics when every
    /// evaluable prediction carries one, over hard 0/1 labels otherwise
    /// (which reproduces `(tpr + 1 - fpr) / 2`). `None` when truth has a
    /// single class among the scored keys.
    pub auc: Option<f64>,
}

/// One benchmark row: metrics, or the failure that prevented them.
#[derive(Debug)]
pub struct MethodReport {
    pub name: String,
    pub outcome: Result<MethodMetrics, String>,
}

/// All methods' results over a shared ground truth.
#[derive(Debug)]
pub struct BenchmarkReport {
    pub runs: usize,
    pub methods: Vec<MethodReport>,
}

fn auc_with(
    pred: &LabelSet,
    truth: &LabelSet,
    score: impl Fn(&LabelEntry) -> f64,
) -> Option<f64> {
    let mut scored = Vec::new();
    for (key, p) in &pred.entries {
        if p.label == Label::Unevaluable {
            continue;
        }
        let Some(t) = truth.entries.get(key) else { continue };
        match t.label {
            Label::Discord => scored.push((score(p), true)),
            Label::NonDiscord => scored.push((score(p), false)),
            Label::Unevaluable => {}
        }
    }
    roc_auc(&scored).ok()
}

/// Rank AUC of a prediction set against truth over their common evaluable
/// keys. Uses the screening statistic as the score when every evaluable
/// prediction carries one, hard 0/1 labels otherwise; `None` when the truth
/// side has a single class among the scored keys.
pub fn label_auc(pred: &LabelSet, truth: &LabelSet) -> Option<f64> {
    let continuous = pred
        .entries
        .values()
        .all(|e| e.d_value.is_some() || e.label == Label::Unevaluable);
    if continuous {
        auc_with(pred, truth, |p| p.d_value.expect("every evaluable entry carries one"))
    } else {
        hard_label_auc(pred, truth)
    }
}

/// Rank AUC scored on the hard 0/1 labels alone, ignoring any screening
/// statistics: the two-point trapezoid `(tpr + 1 - fpr) / 2`. This is the
/// score for comparing label files as classifications — a set evaluated
/// against itself scores exactly 1.
pub fn hard_label_auc(pred: &LabelSet, truth: &LabelSet) -> Option<f64> {
    auc_with(pred, truth, |p| f64::from(p.label == Label::Discord))
}

/// Run every labeler `runs` times, average wall-clock time over the runs,
/// then score the finalized labels against `truth`. A failing method is
/// reported as failed without aborting the others.
pub fn benchmark(
    labelers: &[Labeler<'_>],
    truth: &LabelSet,
    runs: usize,
) -> Result<BenchmarkReport, EvalError> {
    if runs == 0 {
        return Err(EvalError::ZeroRuns);
    }
    let mut methods = Vec::with_capacity(labelers.len());
    for labeler in labelers {
        methods.push(MethodReport {
            name: labeler.name.clone(),
            outcome: benchmark_one(labeler, truth, runs),
        });
    }
    Ok(BenchmarkReport { runs, methods })
}

fn benchmark_one(
    labeler: &Labeler<'_>,
    truth: &LabelSet,
    runs: usize,
) -> Result<MethodMetrics, String> {
    let mut runtime_ms_runs = Vec::with_capacity(runs);
    let mut native = None;
    for _ in 0..runs {
        let started = Instant::now();
        let labels = (labeler.run)()?;
        runtime_ms_runs.push(started.elapsed().as_secs_f64() * 1e3);
        native = Some(labels);
    }
    let native = native.expect("runs >= 1");
    let finalized = (labeler.finalize)(native)?;
    let auc = label_auc(&finalized, truth);
    let scored = confusion(&finalized, truth).map_err(|e| e.to_string())?;
    Ok(MethodMetrics {
        runtime_mean_ms: runtime_ms_runs.iter().sum::<f64>() / runs as f64,
        runtime_ms_runs,
        confusion: scored.matrix,
        excluded_unevaluable: scored.excluded_unevaluable,
        tpr: scored.matrix.tpr(),
        fpr: scored.matrix.fpr(),
        auc,
    })
}

/// Rounded for the terminal table; the CSV keeps full precision.
fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn fmt_opt_exact(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Mean runtime in whole seconds, rounded to the closest integer — the
/// headline figure reported next to the exact millisecond mean.
pub fn rounded_runtime_s(metrics: &MethodMetrics) -> i64 {
    (metrics.runtime_mean_ms / 1e3).round() as i64
}

/// Serialize a benchmark report as CSV, one row per method. Failed methods
/// keep their row with the error in the `status` column.
pub fn write_report_csv<W: Write>(report: &BenchmarkReport, out: &mut W) -> Result<(), EvalError> {
    writeln!(
        out,
        "method,runs,mean_runtime_ms,mean_runtime_s_rounded,tp,fp,tn,fn,excluded_unevaluable,tpr,fpr,auc,status"
    )?;
    for method in &report.methods {
        match &method.outcome {
            Ok(m) => {
                let c = m.confusion;
                writeln!(
                    out,
                    "{},{},{:.3},{},{},{},{},{},{},{},{},{},ok",
                    method.name,
                    report.runs,
                    m.runtime_mean_ms,
                    rounded_runtime_s(m),
                    c.true_positive,
                    c.false_positive,
                    c.true_negative,
                    c.false_negative,
                    m.excluded_unevaluable,
                    fmt_opt_exact(m.tpr),
                    fmt_opt_exact(m.fpr),
                    fmt_opt_exact(m.auc),
                )?;
            }
            Err(reason) => {
                let sanitized = reason.replace([',', '\n'], ";");
                writeln!(out, "{},{},,,,,,,,,,,{sanitized}", method.name, report.runs)?;
            }
        }
    }
    Ok(())
}

/// Render a fixed-width text table of the report for terminal output.
pub fn render_report_table(report: &BenchmarkReport) -> String {
    let mut rows = vec![vec![
        "method".to_string(),
        "mean ms".to_string(),
        "s".to_string(),
        "tp".to_string(),
        "fp".to_string(),
        "tn".to_string(),
        "fn".to_string(),
        "excl".to_string(),
        "tpr".to_string(),
        "fpr".to_string(),
        "auc".to_string(),
        "status".to_string(),
    ]];
    for method in &report.methods {
        rows.push(match &method.outcome {
            Ok(m) => vec![
                method.name.clone(),
                format!("{:.1}", m.runtime_mean_ms),
                rounded_runtime_s(m).to_string(),
                m.confusion.true_positive.to_string(),
                m.confusion.false_positive.to_string(),
                m.confusion.true_negative.to_string(),
                m.confusion.false_negative.to_string(),
                m.excluded_unevaluable.to_string(),
                fmt_opt(m.tpr),
                fmt_opt(m.fpr),
                fmt_opt(m.auc),
                "ok".to_string(),
            ],
            Err(reason) => {
                let mut row = vec![method.name.clone()];
                row.extend(std::iter::repeat_n(String::new(), 10));
                row.push(format!("failed: {reason}"));
                row
            }
        });
    }
    let n_cols = rows[0].len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:>w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
