//! `concord aggregate`: collapse run records into consensus labels and a
//! label-share report.

use std::fs;
use std::path::Path;

use serde_json::json;

use concord::aggregation::{
    count_labels, group_records, label_distribution, max_repetition_distribution,
    AggregationError, ConsensusResult, LabelCounts,
};
use concord::annotator::RunRecord;
use concord::jsonl;

use crate::config::{slugify, Settings};
use crate::error::CliError;
use crate::events::EventLog;

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

/// Loads records and enforces the single-configuration rule.
pub fn load_records(path: &Path) -> Result<(Vec<RunRecord>, String), CliError> {
    let records: Vec<RunRecord> = jsonl::read_jsonl(path)?;
    if records.is_empty() {
        return Err(CliError::Input(format!(
            "{} holds no records",
            path.display()
        )));
    }
    let fingerprint = records[0].fingerprint();
    if let Some(stray) = records.iter().find(|r| r.fingerprint() != fingerprint) {
        return Err(CliError::Input(format!(
            "records mix configurations: {} vs {}",
            fingerprint,
            stray.fingerprint()
        )));
    }
    Ok((records, fingerprint))
}

pub fn run(settings: &Settings, log: &EventLog, records_path: &Path) -> Result<(), CliError> {
    let threshold = settings.threshold()?;
    let (records, fingerprint) = load_records(records_path)?;
    let slug = slugify(&fingerprint);
    let groups = group_records(&records);

    let mut results: Vec<ConsensusResult> = Vec::with_capacity(groups.len());
    let mut counts: Vec<LabelCounts> = Vec::with_capacity(groups.len());
    let mut skipped: Vec<String> = Vec::new();
    for (item_id, group) in &groups {
        match count_labels(group) {
            Ok(c) => {
                let result = concord::aggregation::select_final_with(&c, threshold);
                for warning in &result.warnings {
                    log.warn(
                        "aggregate.warning",
                        json!({ "item_id": item_id, "warning": warning }),
                    );
                }
                counts.push(c);
                results.push(result);
            }
            Err(AggregationError::NoOkRuns { .. }) => skipped.push(item_id.clone()),
            Err(other) => return Err(other.into()),
        }
    }
    if results.is_empty() {
        return Err(CliError::Input("no item produced a consensus".into()));
    }

    let out_dir = settings.out_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;

    let consensus_path = out_dir.join(format!("consensus-{slug}.jsonl"));
    jsonl::write_jsonl(&consensus_path, &results)?;

    let shares = label_distribution(&results);
    let dist_path = out_dir.join(format!("distribution-{slug}.csv"));
    let mut writer = csv::Writer::from_path(&dist_path)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", dist_path.display())))?;
    writer
        .write_record(["label", "count", "percent"])
        .and_then(|()| {
            shares.iter().try_for_each(|s| {
                writer.write_record([
                    s.label.as_str(),
                    &s.count.to_string(),
                    &format!("{:.4}", s.percent),
                ])
            })
        })
        .and_then(|()| writer.flush().map_err(csv::Error::from))
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", dist_path.display())))?;

    let max_rep = max_repetition_distribution(&counts);
    let fallbacks = results.iter().filter(|r| r.is_fallback()).count();
    let summary = json!({
        "fingerprint": fingerprint,
        "items": groups.len(),
        "decided": results.len() - fallbacks,
        "fallbacks": fallbacks,
        "skipped_no_ok_runs": skipped,
        "threshold_override": threshold,
        "label_distribution": shares.iter().map(|s| json!({
            "label": s.label,
            "count": s.count,
            "percent": round4(s.percent),
        })).collect::<Vec<_>>(),
        "max_repetition_at_least": max_rep.iter().map(|(k, v)| json!({
            "repetition": k,
            "fraction": round4(*v),
        })).collect::<Vec<_>>(),
    });
    let summary_path = out_dir.join(format!("summary-{slug}.json"));
    jsonl::write_atomic(
        &summary_path,
        serde_json::to_string_pretty(&summary)
            .expect("summary serializes")
            .as_bytes(),
    )?;

    log.info(
        "aggregate.complete",
        json!({
            "consensus": consensus_path.display().to_string(),
            "items": groups.len(),
            "fallbacks": fallbacks,
            "skipped_no_ok_runs": skipped.len(),
        }),
    );
    Ok(())
}
