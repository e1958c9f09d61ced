//! Subcommand implementations. Each command resolves its configuration
//! (defaults < config file < flags), runs library code, and writes artifacts
//! atomically into the chosen output location.

use std::path::{Path, PathBuf};

use clap::Args;

use aldi_core::detector::{self, Granularity, Label, LabelSet};
use aldi_core::eval::{self, Labeler, MethodMetrics, MethodReport};
use aldi_core::ingest::{self, IngestError, Portfolio};
use aldi_core::matrix_profile::Aggregation;
use aldi_core::pipeline::{self, DetectMethod, DetectParams, PipelineError, ReferenceScope};

use crate::config::{InputConfig, RunConfig};
use crate::output::{atomic_write, ensure_dir};
use crate::CliError;

/// Options shared by every command that reads meter data.
#[derive(Debug, Args)]
pub struct InputOpts {
    /// Long-format meter CSV (timestamp, building_id, meter_reading[, site_id])
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// TOML run configuration; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Longest interior run of missing hours bridged by interpolation
    #[arg(long)]
    pub max_gap: Option<usize>,
}

/// Detection parameters, overriding the `[detect]` config section.
#[derive(Debug, Args)]
pub struct DetectOpts {
    /// Labeling method: aldi++, aldi, or 2sd
    #[arg(long)]
    pub method: Option<DetectMethod>,
    /// Mixture components fitted over the screening statistics (aldi++)
    #[arg(long)]
    pub n_components: Option<usize>,
    /// Significance cutoff below which a day is a discord (aldi)
    #[arg(long)]
    pub p_threshold: Option<f64>,
    /// Profile-to-day reduction: day-start or day-mean
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    /// Reference pooling: site (all buildings together) or building
    #[arg(long)]
    pub granularity: Option<ReferenceScope>,
    /// Seed for the mixture fit
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exclude the judged day from its own reference pool
    #[arg(long)]
    pub leave_one_out: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputOpts,
    #[command(flatten)]
    pub detect: DetectOpts,
    /// Output directory for labels.csv, dvalues.csv, and resolved.toml
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Label CSV to score
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference label CSV scored against
    #[arg(long)]
    pub truth: PathBuf,
    /// Collapse building-hour labels to building-days at this discord-hour
    /// count before scoring
    #[arg(long)]
    pub to_daily: Option<usize>,
    /// Fan day labels out to building-hours before scoring
    #[arg(long)]
    pub to_hourly: bool,
    #[command(flatten)]
    pub input: InputOpts,
    /// Output directory for evaluation.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportFilterArgs {
    /// Label CSV at building-hour granularity, or day labels to fan out
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub input: InputOpts,
    /// Path of the keep/drop filter CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub input: InputOpts,
    #[command(flatten)]
    pub detect: DetectOpts,
    /// Reference label CSV every method is scored against
    #[arg(long)]
    pub truth: PathBuf,
    /// Comma-separated methods to race (default from config)
    #[arg(long)]
    pub methods: Option<String>,
    /// Timed detection runs per method
    #[arg(long)]
    pub runs: Option<usize>,
    /// Discord-hour count when collapsing hourly labels to days
    #[arg(long)]
    pub to_daily: Option<usize>,
    /// Output directory for benchmark.csv and resolved.toml
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Wide meter CSV: first column timestamps, one further column per building
    #[arg(long)]
    pub wide: PathBuf,
    /// Path of the long-format CSV to write
    #[arg(long)]
    pub out: PathBuf,
}

fn apply_input_opts(config: &mut RunConfig, opts: &InputOpts) {
    if let Some(path) = &opts.input {
        config.input.path = Some(path.clone());
    }
    if let Some(max_gap) = opts.max_gap {
        config.input.max_gap = max_gap;
    }
}

fn apply_detect_opts(config: &mut RunConfig, opts: &DetectOpts) {
    if let Some(method) = opts.method {
        config.detect.method = method.to_string();
    }
    if let Some(n) = opts.n_components {
        config.detect.n_components = n;
    }
    if let Some(p) = opts.p_threshold {
        config.detect.p_threshold = p;
    }
    if let Some(aggregation) = opts.aggregation {
        config.detect.aggregation = aggregation.to_string();
    }
    if let Some(scope) = opts.granularity {
        config.detect.granularity = scope.to_string();
    }
    if let Some(seed) = opts.seed {
        config.detect.seed = seed;
    }
    if opts.leave_one_out {
        config.detect.leave_one_out = true;
    }
}

fn resolve(input: &InputOpts, detect: &DetectOpts) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(input.config.as_deref())?;
    apply_input_opts(&mut config, input);
    apply_detect_opts(&mut config, detect);
    Ok(config)
}

fn ingest_error(e: IngestError) -> CliError {
    match e {
        IngestError::Io { .. } => CliError::Io(format!("ingest: {e}")),
        other => CliError::Pipeline(format!("ingest: {other}")),
    }
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::Io(_) => CliError::Io(format!("detect: {e}")),
        PipelineError::BadParams { .. } => CliError::Config(e.to_string()),
        other => CliError::Pipeline(format!("detect: {other}")),
    }
}

/// Parse the input CSV and align every site onto its calendar. Returns the
/// portfolios plus human-readable notes on skipped or overwritten rows.
fn load_portfolios(
    path: &Path,
    input: &InputConfig,
) -> Result<(Vec<Portfolio>, Vec<String>), CliError> {
    let columns = input.column_map()?;
    let parsed = ingest::parse_csv(path, &columns).map_err(ingest_error)?;
    let mut notes = parsed.diagnostics.clone();
    if parsed.malformed > 0 {
        notes.push(format!(
            "skipped {} malformed of {} rows",
            parsed.malformed, parsed.rows_read
        ));
    }
    let mut portfolios = Vec::new();
    for site in ingest::site_ids(&parsed.records) {
        let aligned = ingest::align(&parsed.records, &site).map_err(ingest_error)?;
        if aligned.duplicate_overwrites > 0 {
            notes.push(format!(
                "site {site}: {} duplicate records overwritten",
                aligned.duplicate_overwrites
            ));
        }
        if aligned.trimmed_records > 0 {
            notes.push(format!(
                "site {site}: {} records dropped with a trailing partial day",
                aligned.trimmed_records
            ));
        }
        portfolios.push(aligned.portfolio);
    }
    Ok((portfolios, notes))
}

fn read_label_file(path: &Path) -> Result<LabelSet, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("labels {}: {e}", path.display())))?;
    detector::read_labels(file)
        .map_err(|e| CliError::Pipeline(format!("labels {}: {e}", path.display())))
}

/// Portfolios for commands where meter data is optional context (label
/// conversions). Loaded only when an input path is actually configured.
fn load_optional_portfolios(opts: &InputOpts) -> Result<Vec<Portfolio>, CliError> {
    let mut config = RunConfig::load(opts.config.as_deref())?;
    apply_input_opts(&mut config, opts);
    match &config.input.path {
        None => Ok(Vec::new()),
        Some(path) => Ok(load_portfolios(&path.clone(), &config.input)?.0),
    }
}

fn print_notes(notes: &[String]) {
    for note in notes {
        eprintln!("note: {note}");
    }
}

pub fn detect(args: &DetectArgs) -> Result<(), CliError> {
    let config = resolve(&args.input, &args.detect)?;
    let params = config.detect.detect_params(config.input.max_gap)?;
    let input_path = config.input_path()?.to_path_buf();
    let (portfolios, notes) = load_portfolios(&input_path, &config.input)?;
    print_notes(&notes);

    let output = pipeline::detect(&portfolios, &params).map_err(pipeline_error)?;
    print_notes(&output.diagnostics);

    ensure_dir(&args.out)?;
    atomic_write(&args.out.join("labels.csv"), |mut w| {
        detector::write_labels(&output.labels, &mut w)
    })?;
    atomic_write(&args.out.join("dvalues.csv"), |mut w| {
        pipeline::write_dvalues(&output.dvalues, &mut w)
    })?;
    atomic_write(&args.out.join("resolved.toml"), |w| {
        w.write_all(config.to_toml().as_bytes())
    })?;

    let labels = &output.labels;
    println!(
        "{} labeled {} {} units: {} discord, {} non-discord, {} unevaluable",
        labels.method,
        labels.len(),
        labels.granularity,
        labels.count(Label::Discord),
        labels.count(Label::NonDiscord),
        labels.count(Label::Unevaluable),
    );
    for (group, threshold) in &output.thresholds {
        println!(
            "{group}: largest component mean {:.4}, {} of {} components non-discord",
            threshold.mu_max, threshold.n_nondiscord, threshold.n_components
        );
    }
    println!("wrote labels.csv, dvalues.csv, resolved.toml to {}", args.out.display());
    Ok(())
}

/// Apply the requested granularity conversions to one label set.
fn convert_labels(
    labels: LabelSet,
    to_hourly: bool,
    to_daily: Option<usize>,
    portfolios: &[Portfolio],
) -> Result<LabelSet, CliError> {
    let mut labels = labels;
    if to_hourly && labels.granularity != Granularity::BuildingHour {
        labels = fan_out_to_hours(labels, portfolios)?;
    }
    if let Some(threshold) = to_daily {
        if labels.granularity == Granularity::BuildingHour {
            labels = detector::hourly_to_daily(&labels, threshold)
                .map_err(|e| CliError::Pipeline(format!("convert labels: {e}")))?;
        }
    }
    Ok(labels)
}

fn fan_out_to_hours(labels: LabelSet, portfolios: &[Portfolio]) -> Result<LabelSet, CliError> {
    detector::convert_granularity(labels, Granularity::BuildingHour, portfolios, 1).map_err(|e| {
        match e {
            detector::DetectorError::UnknownSite { .. } => CliError::Config(format!(
                "{e}; site-day labels need --input (or a config input path) to list buildings"
            )),
            other => CliError::Pipeline(format!("convert labels: {other}")),
        }
    })
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let pred = read_label_file(&args.pred)?;
    let truth = read_label_file(&args.truth)?;
    let portfolios = load_optional_portfolios(&args.input)?;

    let pred = convert_labels(pred, args.to_hourly, args.to_daily, &portfolios)?;
    let truth = convert_labels(truth, args.to_hourly, args.to_daily, &portfolios)?;
    if pred.granularity != truth.granularity {
        return Err(CliError::Config(format!(
            "evaluate: predictions are {} labels but truth is {}; \
             pass --to-daily <hours> and/or --to-hourly to align them",
            pred.granularity, truth.granularity
        )));
    }

    // Label files are compared as classifications: hard 0/1 scores, so a
    // prediction evaluated against itself reports exactly 1. The richer
    // statistic-ranked AUC belongs to `benchmark`, which sees live labelers.
    let auc = eval::hard_label_auc(&pred, &truth);
    let scored = eval::confusion(&pred, &truth)
        .map_err(|e| CliError::Pipeline(format!("evaluate: {e}")))?;
    let report = eval::BenchmarkReport {
        runs: 0,
        methods: vec![MethodReport {
            name: pred.method.to_string(),
            outcome: Ok(MethodMetrics {
                runtime_ms_runs: Vec::new(),
                runtime_mean_ms: 0.0,
                confusion: scored.matrix,
                excluded_unevaluable: scored.excluded_unevaluable,
                tpr: scored.matrix.tpr(),
                fpr: scored.matrix.fpr(),
                auc,
            }),
        }],
    };

    ensure_dir(&args.out)?;
    atomic_write(&args.out.join("evaluation.csv"), |mut w| {
        eval::write_report_csv(&report, &mut w)
    })?;
    println!(
        "scoring {} ({}) against {} over {} shared keys",
        pred.method,
        pred.granularity,
        truth.method,
        scored.matrix.total() + scored.excluded_unevaluable,
    );
    print!("{}", eval::render_report_table(&report));
    println!("wrote evaluation.csv to {}", args.out.display());
    Ok(())
}

pub fn export_filter(args: &ExportFilterArgs) -> Result<(), CliError> {
    let labels = read_label_file(&args.labels)?;
    let hourly = if labels.granularity == Granularity::BuildingHour {
        labels
    } else {
        let portfolios = load_optional_portfolios(&args.input)?;
        fan_out_to_hours(labels, &portfolios)?
    };
    let total = hourly.len();
    let kept = hourly.count(Label::NonDiscord);
    atomic_write(&args.out, |mut w| detector::export_train_filter(&hourly, &mut w))?;
    println!(
        "wrote {} hours to {}: keep {}, drop {}",
        total,
        args.out.display(),
        kept,
        total - kept
    );
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<(), CliError> {
    let mut config = resolve(&args.input, &args.detect)?;
    if let Some(methods) = &args.methods {
        config.benchmark.methods = methods.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(runs) = args.runs {
        config.benchmark.runs = runs;
    }
    if let Some(to_daily) = args.to_daily {
        config.benchmark.to_daily = to_daily;
    }

    // Validate the full method list before any (possibly long) run starts.
    let methods: Vec<DetectMethod> = config
        .benchmark
        .methods
        .iter()
        .map(|name| name.parse().map_err(CliError::Config))
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Config("benchmark: no methods configured".into()));
    }
    if config.benchmark.runs == 0 {
        return Err(CliError::Config("benchmark: runs must be at least 1".into()));
    }

    let truth = read_label_file(&args.truth)?;
    let base = config.detect.detect_params(config.input.max_gap)?;
    let input_path = config.input_path()?.to_path_buf();
    let (portfolios, notes) = load_portfolios(&input_path, &config.input)?;
    print_notes(&notes);

    let target = truth.granularity;
    let to_daily = config.benchmark.to_daily;
    let portfolios_ref = &portfolios;
    let labelers: Vec<Labeler<'_>> = methods
        .iter()
        .map(|&method| {
            let params = DetectParams { method, ..base.clone() };
            Labeler {
                name: method.to_string(),
                run: Box::new(move || {
                    pipeline::detect(portfolios_ref, &params)
                        .map(|output| output.labels)
                        .map_err(|e| e.to_string())
                }),
                finalize: Box::new(move |labels| {
                    detector::convert_granularity(labels, target, portfolios_ref, to_daily)
                        .map_err(|e| e.to_string())
                }),
            }
        })
        .collect();

    let report = eval::benchmark(&labelers, &truth, config.benchmark.runs)
        .map_err(|e| CliError::Pipeline(format!("benchmark: {e}")))?;

    ensure_dir(&args.out)?;
    atomic_write(&args.out.join("benchmark.csv"), |mut w| {
        eval::write_report_csv(&report, &mut w)
    })?;
    atomic_write(&args.out.join("resolved.toml"), |w| {
        w.write_all(config.to_toml().as_bytes())
    })?;
    print!("{}", eval::render_report_table(&report));
    println!("wrote benchmark.csv, resolved.toml to {}", args.out.display());
    Ok(())
}

pub fn convert(args: &ConvertArgs) -> Result<(), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&args.wide)
        .map_err(|e| CliError::Io(format!("convert {}: {e}", args.wide.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Pipeline(format!("convert: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(CliError::Pipeline(
            "convert: wide input needs a timestamp column plus one column per building".into(),
        ));
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Pipeline(format!("convert: row {}: {e}", i + 2)))?;
        rows.push(record);
    }
    // Timestamps in the canonical format sort chronologically as strings.
    rows.sort_by(|a, b| a.get(0).cmp(&b.get(0)));
    let mut buildings: Vec<(usize, &str)> =
        headers.iter().enumerate().skip(1).map(|(i, name)| (i, name)).collect();
    buildings.sort_by_key(|&(_, name)| name);

    atomic_write(&args.out, |w| -> std::io::Result<()> {
        let mut csv_out = csv::Writer::from_writer(w);
        csv_out.write_record(["timestamp", "building_id", "meter_reading"])?;
        for &(column, building) in &buildings {
            for row in &rows {
                let timestamp = row.get(0).unwrap_or_default();
                let reading = row.get(column).unwrap_or_default();
                csv_out.write_record([timestamp, building, reading])?;
            }
        }
        csv_out.flush()?;
        Ok(())
    })?;
    println!(
        "wrote {} long rows ({} buildings x {} timestamps) to {}",
        buildings.len() * rows.len(),
        buildings.len(),
        rows.len(),
        args.out.display()
    );
    Ok(())
}
