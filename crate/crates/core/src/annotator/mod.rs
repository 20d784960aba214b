//! Annotation engine: N independent completions per item, bounded
//! concurrency, retry with backoff, and crash-safe resume.

pub mod backend;
pub mod journal;
pub mod mock;
pub mod prompt;

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{self, CanonLabel, ParseError, PromptKind};
use backend::{Backend, BackendError, CallContext, ChatRequest};
use journal::JournalWriter;

/// One text to annotate. Gold labels, when present, ride along untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub item_id: String,
    pub user_input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_dominant: Option<CanonLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_secondary: Option<CanonLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one (item, run) pair after retries. Failed runs keep an
/// empty label list and carry the cause in `warnings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub model: String,
    pub temperature: f64,
    pub prompt: PromptKind,
    pub run_index: u32,
    pub raw_response: String,
    pub labels: Vec<CanonLabel>,
    pub status: RunStatus,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Identifies the producing configuration; records from different
    /// configurations must not be mixed in one file.
    pub fn fingerprint(&self) -> String {
        format!("{}@{}:{}", self.model, self.temperature, self.prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Full completions URL, or a `mock:` scheme for offline runs.
    pub endpoint_url: String,
    pub model: String,
    pub temperature: f64,
    pub prompt: PromptKind,
    pub runs_per_item: u32,
    pub max_retries: u32,
    pub concurrency: usize,
    pub seed: u64,
    pub retry: RetryPolicy,
    /// Consecutive transport-class run failures before the whole corpus
    /// run aborts as backend-unavailable. Zero disables the budget.
    pub failure_budget: u32,
}

impl RunConfig {
    pub fn matches_record(&self, record: &RunRecord) -> bool {
        record.model == self.model
            && record.temperature.to_bits() == self.temperature.to_bits()
            && record.prompt == self.prompt
    }
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("no items to annotate")]
    EmptyCorpus,
    #[error("item {item_id} has an empty user input")]
    EmptyInput { item_id: String },
    #[error("duplicate item id {item_id}")]
    DuplicateItem { item_id: String },
    #[error("resume record does not fit this run ({reason})")]
    ResumeMismatch { reason: String },
    #[error(
        "backend unavailable: {consecutive} consecutive transport failures (last: {last_error})"
    )]
    BackendUnavailable {
        consecutive: u32,
        last_error: String,
    },
    #[error("journal write failed: {0}")]
    Journal(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub items: usize,
    pub runs_per_item: u32,
    /// Total (item, run) pairs the run was responsible for.
    pub expected: usize,
    /// Pairs already satisfied by resume records.
    pub skipped: usize,
    /// Pairs attempted in this invocation.
    pub attempted: usize,
    /// Final totals over the merged record set.
    pub ok: usize,
    pub failed: usize,
}

struct RunAttempt {
    record: RunRecord,
    /// True when the run failed with retries exhausted on a
    /// transport-class error; feeds the unavailability budget.
    transport_exhausted: bool,
    last_error: Option<String>,
}

async fn backoff(policy: &RetryPolicy, attempt: u32, hint: Option<Duration>) {
    let exp = policy
        .base_delay
        .saturating_mul(2u32.saturating_pow(attempt));
    let capped = exp.min(policy.max_delay);
    // Jitter spreads concurrent retries; 50..100% of the capped delay.
    let jittered = capped.mul_f64(0.5 + rand::random::<f64>() * 0.5);
    let delay = match hint {
        Some(h) => h.min(policy.max_delay),
        None => jittered,
    };
    tokio::time::sleep(delay).await;
}

fn finish_record(
    item: &AnnotationItem,
    cfg: &RunConfig,
    run_index: u32,
    raw_response: String,
    labels: Vec<CanonLabel>,
    status: RunStatus,
    warnings: Vec<String>,
) -> RunRecord {
    RunRecord {
        item_id: item.item_id.clone(),
        model: cfg.model.clone(),
        temperature: cfg.temperature,
        prompt: cfg.prompt,
        run_index,
        raw_response,
        labels,
        status,
        warnings,
    }
}

/// Drives one (item, run) pair to a terminal record. Retryable failures
/// (transport, rate limit, 5xx, empty response) are retried up to
/// `max_retries` times with exponential backoff; other failures settle
/// immediately as a failed record.
async fn run_once(
    item: &AnnotationItem,
    run_index: u32,
    cfg: &RunConfig,
    backend: &dyn Backend,
) -> RunAttempt {
    let messages = prompt::chat_messages(item, cfg.prompt)
        .expect("inputs validated before dispatch");
    let request = ChatRequest {
        model: cfg.model.clone(),
        temperature: cfg.temperature,
        messages: messages.to_vec(),
    };
    let ctx = CallContext {
        item_id: &item.item_id,
        run_index,
    };

    let mut attempt: u32 = 0;
    loop {
        match backend.complete(&request, ctx).await {
            Ok(raw) => match taxonomy::parse_response(&raw, cfg.prompt) {
                Ok(parsed) => {
                    return RunAttempt {
                        record: finish_record(
                            item,
                            cfg,
                            run_index,
                            raw,
                            parsed.labels,
                            RunStatus::Ok,
                            parsed.warnings,
                        ),
                        transport_exhausted: false,
                        last_error: None,
                    };
                }
                Err(ParseError::EmptyResponse) => {
                    if attempt < cfg.max_retries {
                        backoff(&cfg.retry, attempt, None).await;
                        attempt += 1;
                        continue;
                    }
                    return RunAttempt {
                        record: finish_record(
                            item,
                            cfg,
                            run_index,
                            raw,
                            Vec::new(),
                            RunStatus::Failed,
                            vec![format!(
                                "empty response after {} attempts",
                                attempt + 1
                            )],
                        ),
                        transport_exhausted: false,
                        last_error: Some("empty response".into()),
                    };
                }
            },
            Err(err) => {
                let retryable = err.is_retryable();
                if retryable && attempt < cfg.max_retries {
                    let hint = match &err {
                        BackendError::RateLimited { retry_after, .. } => *retry_after,
                        _ => None,
                    };
                    backoff(&cfg.retry, attempt, hint).await;
                    attempt += 1;
                    continue;
                }
                let message = err.to_string();
                return RunAttempt {
                    record: finish_record(
                        item,
                        cfg,
                        run_index,
                        String::new(),
                        Vec::new(),
                        RunStatus::Failed,
                        vec![message.clone()],
                    ),
                    transport_exhausted: retryable,
                    last_error: Some(message),
                };
            }
        }
    }
}

fn validate_items(items: &[AnnotationItem]) -> Result<(), AnnotateError> {
    if items.is_empty() {
        return Err(AnnotateError::EmptyCorpus);
    }
    let mut seen = HashMap::new();
    for item in items {
        if item.user_input.trim().is_empty() {
            return Err(AnnotateError::EmptyInput {
                item_id: item.item_id.clone(),
            });
        }
        if seen.insert(item.item_id.as_str(), ()).is_some() {
            return Err(AnnotateError::DuplicateItem {
                item_id: item.item_id.clone(),
            });
        }
    }
    Ok(())
}

/// Annotates a single item with `runs_per_item` sequential runs. Errors
/// only when every run died on transport, meaning the backend never
/// answered at all.
pub async fn annotate_item(
    item: &AnnotationItem,
    cfg: &RunConfig,
    backend: &dyn Backend,
) -> Result<Vec<RunRecord>, AnnotateError> {
    validate_items(std::slice::from_ref(item))?;
    let mut records = Vec::new();
    let mut transport_failures = 0u32;
    let mut last_error = String::new();
    for run_index in 0..cfg.runs_per_item {
        let attempt = run_once(item, run_index, cfg, backend).await;
        if attempt.transport_exhausted {
            transport_failures += 1;
            last_error = attempt.last_error.clone().unwrap_or_default();
        }
        records.push(attempt.record);
    }
    if cfg.runs_per_item > 0 && transport_failures == cfg.runs_per_item {
        return Err(AnnotateError::BackendUnavailable {
            consecutive: transport_failures,
            last_error,
        });
    }
    Ok(records)
}

/// Annotates the whole corpus with bounded concurrency.
///
/// `resume` carries records from a previous invocation (final file or
/// journal); ok records for in-range (item, run) pairs are kept and not
/// re-attempted. Every newly completed record is appended to `journal`
/// before the function returns it, so an interrupted run can resume.
/// Output records are ordered by corpus position then run index,
/// independent of completion order.
pub async fn annotate_corpus(
    items: &[AnnotationItem],
    cfg: &RunConfig,
    backend: &dyn Backend,
    resume: &[RunRecord],
    journal: &mut JournalWriter,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<(Vec<RunRecord>, CorpusSummary), AnnotateError> {
    validate_items(items)?;

    let index_of: HashMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.item_id.as_str(), i))
        .collect();

    let mut merged: BTreeMap<(usize, u32), RunRecord> = BTreeMap::new();
    for rec in resume {
        if !cfg.matches_record(rec) {
            return Err(AnnotateError::ResumeMismatch {
                reason: format!(
                    "record {} was produced by {}, current run is {}@{}:{}",
                    rec.item_id,
                    rec.fingerprint(),
                    cfg.model,
                    cfg.temperature,
                    cfg.prompt
                ),
            });
        }
        let Some(&idx) = index_of.get(rec.item_id.as_str()) else {
            return Err(AnnotateError::ResumeMismatch {
                reason: format!("record for item {} not in the corpus", rec.item_id),
            });
        };
        if rec.run_index >= cfg.runs_per_item {
            return Err(AnnotateError::ResumeMismatch {
                reason: format!(
                    "record {} run {} exceeds runs_per_item={}",
                    rec.item_id, rec.run_index, cfg.runs_per_item
                ),
            });
        }
        if rec.is_ok() {
            merged.insert((idx, rec.run_index), rec.clone());
        }
    }

    let skipped = merged.len();
    let mut pending: Vec<(usize, u32)> = Vec::new();
    for i in 0..items.len() {
        for r in 0..cfg.runs_per_item {
            if !merged.contains_key(&(i, r)) {
                pending.push((i, r));
            }
        }
    }
    let attempted = pending.len();

    let mut completions = stream::iter(pending.into_iter().map(|(i, r)| {
        let item = &items[i];
        async move { (i, r, run_once(item, r, cfg, backend).await) }
    }))
    .buffer_unordered(cfg.concurrency.max(1));

    let mut consecutive_transport = 0u32;
    while let Some((i, r, attempt)) = completions.next().await {
        journal.append(&attempt.record)?;
        on_record(&attempt.record);
        if attempt.transport_exhausted {
            consecutive_transport += 1;
            if cfg.failure_budget > 0 && consecutive_transport >= cfg.failure_budget {
                let last_error = attempt.last_error.clone().unwrap_or_default();
                return Err(AnnotateError::BackendUnavailable {
                    consecutive: consecutive_transport,
                    last_error,
                });
            }
        } else {
            consecutive_transport = 0;
        }
        merged.insert((i, r), attempt.record);
    }
    drop(completions);

    let records: Vec<RunRecord> = merged.into_values().collect();
    let ok = records.iter().filter(|r| r.is_ok()).count();
    let summary = CorpusSummary {
        items: items.len(),
        runs_per_item: cfg.runs_per_item,
        expected: items.len() * cfg.runs_per_item as usize,
        skipped,
        attempted,
        ok,
        failed: records.len() - ok,
    };
    Ok((records, summary))
}
