//! Pipeline configuration: a flat TOML file plus one-for-one flag
//! overrides, validated field by field before any work starts. API
//! credentials come from the environment variable named by
//! `api_key_env`; the key itself never appears in config.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use concord::annotator::backend::{Backend, HttpBackend};
use concord::annotator::mock::{parse_mock_url, MockBackend};
use concord::annotator::{RetryPolicy, RunConfig};
use concord::datasets::{ColumnMap, SplitRatios};
use concord::taxonomy::PromptKind;

use crate::error::CliError;
use crate::events::Level;

/// Consecutive transport-class failures tolerated before a corpus run
/// aborts as backend-unavailable.
const FAILURE_BUDGET: u32 = 10;

/// Raw config file contents; every key optional so flags can fill gaps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub endpoint_url: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub prompt: Option<String>,
    pub runs: Option<u32>,
    pub retries: Option<u32>,
    pub concurrency: Option<usize>,
    pub seed: Option<u64>,
    pub api_key_env: Option<String>,
    pub corpus: Option<PathBuf>,
    pub col_id: Option<String>,
    pub col_text: Option<String>,
    pub col_golden: Option<String>,
    pub split_seed: Option<u64>,
    pub split_ratios: Option<[f64; 3]>,
    pub threshold: Option<u32>,
    pub out_dir: Option<PathBuf>,
    pub log_level: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let body = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&body)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

/// Global flags mirroring the config keys one-for-one.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true, help = "Chat completions URL or mock: scheme")]
    pub endpoint_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true, help = "Prompt kind: rlp or mlp")]
    pub prompt: Option<String>,
    #[arg(long, global = true, help = "Independent runs per item")]
    pub runs: Option<u32>,
    #[arg(long, global = true)]
    pub retries: Option<u32>,
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, help = "Env var holding the API key")]
    pub api_key_env: Option<String>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub col_id: Option<String>,
    #[arg(long, global = true)]
    pub col_text: Option<String>,
    #[arg(long, global = true)]
    pub col_golden: Option<String>,
    #[arg(long, global = true)]
    pub split_seed: Option<u64>,
    #[arg(long, global = true, help = "Comma-separated train,dev,test ratios")]
    pub split_ratios: Option<String>,
    #[arg(long, global = true, help = "Consensus keep threshold override")]
    pub threshold: Option<u32>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, help = "error, warn, info, or debug")]
    pub log_level: Option<String>,
}

/// Config file merged with flag overrides; flags win.
#[derive(Debug, Clone)]
pub struct Settings {
    file: FileConfig,
    flags: Overrides,
}

pub enum BackendChoice {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl BackendChoice {
    pub fn as_backend(&self) -> &dyn Backend {
        match self {
            BackendChoice::Mock(b) => b,
            BackendChoice::Http(b) => b,
        }
    }
}

impl Settings {
    pub fn new(file: FileConfig, flags: Overrides) -> Self {
        Settings { file, flags }
    }

    fn endpoint_url(&self) -> Result<&str, CliError> {
        self.flags
            .endpoint_url
            .as_deref()
            .or(self.file.endpoint_url.as_deref())
            .ok_or_else(|| CliError::Config("endpoint_url is not set".into()))
    }

    pub fn temperature(&self) -> Result<f64, CliError> {
        let t = self
            .flags
            .temperature
            .or(self.file.temperature)
            .unwrap_or(0.5);
        if !t.is_finite() || !(0.0..=2.0).contains(&t) {
            return Err(CliError::Config(format!(
                "temperature must lie in [0, 2], got {t}"
            )));
        }
        Ok(t)
    }

    fn prompt(&self) -> Result<PromptKind, CliError> {
        let raw = self
            .flags
            .prompt
            .as_deref()
            .or(self.file.prompt.as_deref())
            .ok_or_else(|| CliError::Config("prompt is not set (rlp or mlp)".into()))?;
        raw.parse()
            .map_err(|_| CliError::Config(format!("prompt must be rlp or mlp, got {raw:?}")))
    }

    pub fn seed(&self) -> u64 {
        self.flags.seed.or(self.file.seed).unwrap_or(42)
    }

    /// Builds the run configuration and backend, validating every field
    /// and resolving credentials before a single request goes out.
    pub fn annotation(&self) -> Result<(RunConfig, BackendChoice), CliError> {
        let url = self.endpoint_url()?.to_owned();
        let temperature = self.temperature()?;
        let prompt = self.prompt()?;
        let runs = self.flags.runs.or(self.file.runs).unwrap_or(5);
        if runs == 0 {
            return Err(CliError::Config("runs must be at least 1".into()));
        }
        let retries = self.flags.retries.or(self.file.retries).unwrap_or(3);
        let concurrency = self
            .flags
            .concurrency
            .or(self.file.concurrency)
            .unwrap_or(4);
        if concurrency == 0 {
            return Err(CliError::Config("concurrency must be at least 1".into()));
        }
        let seed = self.seed();

        let (backend, model) = match parse_mock_url(&url) {
            Some(profile) => {
                let profile =
                    profile.map_err(|e| CliError::Config(format!("endpoint_url: {e}")))?;
                let model = self.model_or("mock");
                (BackendChoice::Mock(MockBackend::new(profile, seed)), model)
            }
            None => {
                if !url.starts_with("http://") && !url.starts_with("https://") {
                    return Err(CliError::Config(format!(
                        "endpoint_url must be http(s) or mock:, got {url:?}"
                    )));
                }
                let model = self
                    .flags
                    .model
                    .clone()
                    .or_else(|| self.file.model.clone())
                    .ok_or_else(|| CliError::Config("model is not set".into()))?;
                let var = self
                    .flags
                    .api_key_env
                    .as_deref()
                    .or(self.file.api_key_env.as_deref())
                    .ok_or_else(|| {
                        CliError::Config("api_key_env is not set for an http endpoint".into())
                    })?;
                let key = std::env::var(var).ok().filter(|k| !k.is_empty()).ok_or_else(
                    || CliError::Config(format!("credential env var {var} is not set")),
                )?;
                let http = HttpBackend::new(url.clone(), Some(key))
                    .map_err(|e| CliError::Backend(e.to_string()))?;
                (BackendChoice::Http(http), model)
            }
        };

        let cfg = RunConfig {
            endpoint_url: url,
            model,
            temperature,
            prompt,
            runs_per_item: runs,
            max_retries: retries,
            concurrency,
            seed,
            retry: RetryPolicy::default(),
            failure_budget: FAILURE_BUDGET,
        };
        Ok((cfg, backend))
    }

    fn model_or(&self, default: &str) -> String {
        self.flags
            .model
            .clone()
            .or_else(|| self.file.model.clone())
            .unwrap_or_else(|| default.to_owned())
    }

    pub fn corpus(&self) -> Result<PathBuf, CliError> {
        let path = self
            .flags
            .corpus
            .clone()
            .or_else(|| self.file.corpus.clone())
            .ok_or_else(|| CliError::Config("corpus is not set".into()))?;
        if !path.exists() {
            return Err(CliError::Config(format!(
                "corpus file {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn column_map(&self) -> Result<ColumnMap, CliError> {
        let text = self
            .flags
            .col_text
            .clone()
            .or_else(|| self.file.col_text.clone())
            .ok_or_else(|| CliError::Config("col_text is not set".into()))?;
        Ok(ColumnMap {
            id: self.flags.col_id.clone().or_else(|| self.file.col_id.clone()),
            text,
            golden: self
                .flags
                .col_golden
                .clone()
                .or_else(|| self.file.col_golden.clone()),
        })
    }

    pub fn split_seed(&self) -> u64 {
        self.flags.split_seed.or(self.file.split_seed).unwrap_or(42)
    }

    pub fn split_ratios(&self) -> Result<SplitRatios, CliError> {
        let parts = match (&self.flags.split_ratios, self.file.split_ratios) {
            (Some(raw), _) => {
                let parsed: Vec<f64> = raw
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| {
                        CliError::Config(format!("split_ratios must be three numbers, got {raw:?}"))
                    })?;
                <[f64; 3]>::try_from(parsed).map_err(|_| {
                    CliError::Config(format!("split_ratios must have three parts, got {raw:?}"))
                })?
            }
            (None, Some(arr)) => arr,
            (None, None) => return Ok(SplitRatios::default()),
        };
        SplitRatios::new(parts[0], parts[1], parts[2])
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn threshold(&self) -> Result<Option<u32>, CliError> {
        match self.flags.threshold.or(self.file.threshold) {
            Some(0) => Err(CliError::Config("threshold must be at least 1".into())),
            other => Ok(other),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.flags
            .out_dir
            .clone()
            .or_else(|| self.file.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn log_level(&self) -> Result<Level, CliError> {
        match self
            .flags
            .log_level
            .as_deref()
            .or(self.file.log_level.as_deref())
        {
            Some(raw) => raw.parse().map_err(|e: String| CliError::Config(e)),
            None => Ok(Level::Info),
        }
    }
}

/// File-name-safe tag for a run configuration fingerprint.
pub fn slugify(fingerprint: &str) -> String {
    let mut out = String::with_capacity(fingerprint.len());
    let mut dash = false;
    for c in fingerprint.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    out.trim_end_matches('-').to_owned()
}
