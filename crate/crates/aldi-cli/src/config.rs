//! Run configuration: TOML file + command-line overrides resolved into one
//! fully-specified, re-serializable value. Every run writes its resolved
//! config next to its outputs so the exact run can be replayed from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use aldi_core::ingest::{ColumnMap, DEFAULT_MAX_GAP};
use aldi_core::matrix_profile::Aggregation;
use aldi_core::pipeline::{DetectMethod, DetectParams, ReferenceScope};

use crate::CliError;

/// `[input]`: where the meter CSV lives and how to read it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub timestamp_column: String,
    pub building_column: String,
    pub reading_column: String,
    pub site_column: String,
    /// Single character; when the CSV has no site column, everything in a
    /// building id before this delimiter names its site.
    pub site_prefix_delimiter: Option<String>,
    pub default_site: String,
    pub max_gap: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        let columns = ColumnMap::default();
        InputConfig {
            path: None,
            timestamp_column: columns.timestamp,
            building_column: columns.building_id,
            reading_column: columns.reading,
            site_column: columns.site,
            site_prefix_delimiter: None,
            default_site: columns.default_site,
            max_gap: DEFAULT_MAX_GAP,
        }
    }
}

impl InputConfig {
    pub fn column_map(&self) -> Result<ColumnMap, CliError> {
        let delimiter = match &self.site_prefix_delimiter {
            None => None,
            Some(s) => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Some(c),
                    _ => {
                        return Err(CliError::Config(format!(
                            "site_prefix_delimiter must be one character, got {s:?}"
                        )))
                    }
                }
            }
        };
        Ok(ColumnMap {
            timestamp: self.timestamp_column.clone(),
            building_id: self.building_column.clone(),
            reading: self.reading_column.clone(),
            site: self.site_column.clone(),
            site_prefix_delimiter: delimiter,
            default_site: self.default_site.clone(),
        })
    }
}

/// `[detect]`: method choice and its parameters. Enumerated fields are
/// stored as their command-line spellings and validated on resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub method: String,
    pub n_components: usize,
    pub p_threshold: f64,
    pub aggregation: String,
    pub granularity: String,
    pub seed: u64,
    pub leave_one_out: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        let params = DetectParams::default();
        DetectConfig {
            method: params.method.to_string(),
            n_components: params.n_components,
            p_threshold: params.p_threshold,
            aggregation: params.aggregation.to_string(),
            granularity: params.scope.to_string(),
            seed: params.seed,
            leave_one_out: params.leave_one_out,
        }
    }
}

impl DetectConfig {
    /// Validate and convert into typed pipeline parameters.
    pub fn detect_params(&self, max_gap: usize) -> Result<DetectParams, CliError> {
        Ok(DetectParams {
            method: self.parse_method()?,
            n_components: self.n_components,
            p_threshold: self.p_threshold,
            seed: self.seed,
            aggregation: self
                .aggregation
                .parse::<Aggregation>()
                .map_err(CliError::Config)?,
            scope: self
                .granularity
                .parse::<ReferenceScope>()
                .map_err(CliError::Config)?,
            leave_one_out: self.leave_one_out,
            max_gap,
        })
    }

    pub fn parse_method(&self) -> Result<DetectMethod, CliError> {
        self.method.parse::<DetectMethod>().map_err(CliError::Config)
    }
}

/// `[benchmark]`: which methods to race and how.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub methods: Vec<String>,
    pub runs: usize,
    /// Hour threshold used when converting hourly labels to daily ones.
    pub to_daily: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            methods: vec!["aldi++".into(), "aldi".into(), "2sd".into()],
            runs: 10,
            to_daily: aldi_core::detector::DEFAULT_HOURLY_THRESHOLD,
        }
    }
}

/// The whole run configuration, exactly as serialized to `resolved.toml`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub detect: DetectConfig,
    pub benchmark: BenchmarkConfig,
}

impl RunConfig {
    /// Load a TOML config file; `None` yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Io(format!("config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))
            }
        }
    }

    /// The input path after config/flag resolution; required by every
    /// command that reads meter data.
    pub fn input_path(&self) -> Result<&Path, CliError> {
        self.input.path.as_deref().ok_or_else(|| {
            CliError::Config(
                "ingest: no input path (pass --input or set [input] path in the config)".into(),
            )
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
