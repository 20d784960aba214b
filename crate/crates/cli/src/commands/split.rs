//! `concord split`: fixed stratified assignment, ambiguity filtration
//! against both prompt consensus files, and bundle persistence.

use std::collections::HashMap;
use std::path::Path;

use serde_json::json;

use concord::aggregation::{ConsensusOutcome, ConsensusResult};
use concord::datasets::{
    filter_ambiguous, ingest, stratified_split, write_bundle, LabelView,
};
use concord::jsonl;

use crate::config::Settings;
use crate::error::CliError;
use crate::events::EventLog;

fn load_views(path: &Path) -> Result<HashMap<String, LabelView>, CliError> {
    let rows: Vec<ConsensusResult> = jsonl::read_jsonl(path)?;
    let mut views = HashMap::with_capacity(rows.len());
    for row in rows {
        let view = match row.outcome {
            ConsensusOutcome::Labels(labels) => LabelView::Labels(labels),
            ConsensusOutcome::Fallback(f) => LabelView::Fallback(f),
        };
        if views.insert(row.item_id.clone(), view).is_some() {
            return Err(CliError::Input(format!(
                "{}: duplicate consensus entry for item {}",
                path.display(),
                row.item_id
            )));
        }
    }
    Ok(views)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn run(
    settings: &Settings,
    log: &EventLog,
    rlp_path: &Path,
    mlp_path: &Path,
) -> Result<(), CliError> {
    let corpus_path = settings.corpus()?;
    let map = settings.column_map()?;
    let ratios = settings.split_ratios()?;
    let seed = settings.split_seed();
    let items = ingest(&corpus_path, &map)?;

    let assignment = stratified_split(&items, ratios, seed)?;
    let rlp = load_views(rlp_path)?;
    let mlp = load_views(mlp_path)?;
    let config = format!("rlp:{},mlp:{}", stem(rlp_path), stem(mlp_path));
    let bundle = filter_ambiguous(&items, &assignment, &rlp, &mlp, config)?;

    let dir = settings.out_dir().join("bundle");
    let manifest = write_bundle(&bundle, &dir)?;
    for removal in &manifest.removed {
        log.debug(
            "split.removed",
            json!({ "item_id": removal.item_id, "cause": removal.cause }),
        );
    }
    log.info(
        "split.complete",
        json!({
            "bundle": dir.display().to_string(),
            "train": manifest.counts.train,
            "dev": manifest.counts.dev,
            "test": manifest.counts.test,
            "removed": manifest.removed.len(),
            "digest": manifest.digest,
        }),
    );
    Ok(())
}
