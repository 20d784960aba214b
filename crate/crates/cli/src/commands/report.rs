//! `concord report`: per-label inter-run agreement with the cross-label
//! average.

use std::fs;
use std::path::Path;

use serde_json::json;

use concord::aggregation::group_records;
use concord::jsonl;
use concord::reliability::agreement_report;

use crate::commands::aggregate::load_records;
use crate::config::{slugify, Settings};
use crate::error::CliError;
use crate::events::EventLog;

pub fn run(settings: &Settings, log: &EventLog, records_path: &Path) -> Result<(), CliError> {
    let (records, fingerprint) = load_records(records_path)?;
    let slug = slugify(&fingerprint);
    let groups = group_records(&records);
    let report = agreement_report(&groups)?;

    let out_dir = settings.out_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;

    let csv_path = out_dir.join(format!("kappa-{slug}.csv"));
    let mut writer = csv::Writer::from_path(&csv_path)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", csv_path.display())))?;
    writer
        .write_record(["label", "kappa", "p_bar", "p_e", "items", "raters"])
        .and_then(|()| {
            report.results.iter().try_for_each(|r| {
                writer.write_record([
                    r.label.as_str().to_owned(),
                    r.kappa.map(|k| k.to_string()).unwrap_or_default(),
                    r.p_bar.to_string(),
                    r.p_e.to_string(),
                    r.items.to_string(),
                    r.raters.to_string(),
                ])
            })
        })
        .and_then(|()| writer.flush().map_err(csv::Error::from))
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", csv_path.display())))?;

    let body = json!({
        "fingerprint": fingerprint,
        "labels": report.results.iter().map(|r| json!({
            "label": r.label.as_str(),
            "kappa": r.kappa,
            "p_bar": r.p_bar,
            "p_e": r.p_e,
            "items": r.items,
            "raters": r.raters,
        })).collect::<Vec<_>>(),
        "average": {
            "mean": report.average.mean,
            "included": report.average.included,
            "excluded": report.average.excluded.iter().map(|l| l.as_str()).collect::<Vec<_>>(),
        },
        "excluded_items": report.excluded_items,
    });
    let json_path = out_dir.join(format!("kappa-{slug}.json"));
    jsonl::write_atomic(
        &json_path,
        serde_json::to_string_pretty(&body)
            .expect("report serializes")
            .as_bytes(),
    )?;

    log.info(
        "report.complete",
        json!({
            "kappa_csv": csv_path.display().to_string(),
            "kappa_average": report.average.mean,
            "labels_included": report.average.included,
            "items_excluded": report.excluded_items.len(),
        }),
    );
    Ok(())
}
