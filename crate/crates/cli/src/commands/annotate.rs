//! `concord annotate`: run the corpus through the backend with per-run
//! journaling, then write the merged record file.

use std::fs;

use serde_json::json;

use concord::annotator::journal::{self, JournalWriter};
use concord::annotator::{annotate_corpus, RunRecord, RunStatus};
use concord::datasets;
use concord::jsonl;

use crate::config::{slugify, Settings};
use crate::error::CliError;
use crate::events::EventLog;

pub fn run(settings: &Settings, log: &EventLog) -> Result<(), CliError> {
    // Full validation, including credential resolution, happens here
    // before the corpus is even opened.
    let (cfg, backend) = settings.annotation()?;
    let corpus_path = settings.corpus()?;
    let map = settings.column_map()?;
    let items = datasets::ingest(&corpus_path, &map)?;

    let out_dir = settings.out_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;
    let slug = slugify(&format!("{}@{}:{}", cfg.model, cfg.temperature, cfg.prompt));
    let records_path = out_dir.join(format!("records-{slug}.jsonl"));
    let journal_path = out_dir.join(format!("records-{slug}.jsonl.journal"));

    let mut resume: Vec<RunRecord> = Vec::new();
    if records_path.exists() {
        resume.extend(jsonl::read_jsonl::<RunRecord>(&records_path)?);
    }
    if journal_path.exists() {
        let (records, skipped) = journal::load(&journal_path)?;
        if !skipped.is_empty() {
            log.warn(
                "annotate.journal_truncated",
                json!({ "skipped_lines": skipped }),
            );
        }
        log.info(
            "annotate.resuming",
            json!({ "journal": journal_path.display().to_string(), "records": records.len() }),
        );
        resume.extend(records);
    }

    let mut journal = JournalWriter::append_to(&journal_path)
        .map_err(|e| CliError::Input(format!("cannot open journal: {e}")))?;
    let on_record = |record: &RunRecord| {
        log.debug(
            "annotate.record",
            json!({
                "item_id": record.item_id,
                "run_index": record.run_index,
                "status": if record.status == RunStatus::Ok { "ok" } else { "failed" },
            }),
        );
        for warning in &record.warnings {
            log.warn(
                "annotate.warning",
                json!({ "item_id": record.item_id, "run_index": record.run_index, "warning": warning }),
            );
        }
    };

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Backend(format!("cannot start runtime: {e}")))?;
    let result = runtime.block_on(annotate_corpus(
        &items,
        &cfg,
        backend.as_backend(),
        &resume,
        &mut journal,
        on_record,
    ));
    let (records, summary) = result?;

    jsonl::write_jsonl(&records_path, &records)?;
    // The journal only covers a run in flight; the record file now holds
    // everything, so drop it to mark the pass complete.
    let _ = fs::remove_file(&journal_path);

    log.info(
        "annotate.complete",
        json!({
            "records": records_path.display().to_string(),
            "items": summary.items,
            "expected": summary.expected,
            "resumed": summary.skipped,
            "attempted": summary.attempted,
            "ok": summary.ok,
            "failed": summary.failed,
        }),
    );
    if summary.failed > 0 {
        return Err(CliError::Partial(format!(
            "{} of {} runs failed; see {}",
            summary.failed,
            summary.expected,
            records_path.display()
        )));
    }
    Ok(())
}
