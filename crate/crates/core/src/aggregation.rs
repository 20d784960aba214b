//! Consensus over repeated runs: keep labels that recur in at least a
//! threshold share of successful runs, otherwise fall back to an
//! uncertainty category.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::annotator::RunRecord;
use crate::taxonomy::{CanonLabel, FallbackCategory};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AggregationError {
    #[error("no records given")]
    NoRecords,
    #[error("item {item_id}: no successful runs")]
    NoOkRuns { item_id: String },
    #[error("records mix items or configurations: {details}")]
    MixedRecords { details: String },
}

/// Per-item label repetition counts over the successful runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCounts {
    pub item_id: String,
    pub counts: BTreeMap<CanonLabel, u32>,
    pub ok_runs: u32,
}

impl LabelCounts {
    pub fn max_repetition(&self) -> u32 {
        self.counts.values().copied().max().unwrap_or(0)
    }
}

/// Tallies labels across one item's runs. Failed runs are ignored; all
/// records must belong to the same item and configuration.
pub fn count_labels(records: &[&RunRecord]) -> Result<LabelCounts, AggregationError> {
    let first = records.first().ok_or(AggregationError::NoRecords)?;
    for rec in records {
        if rec.item_id != first.item_id || rec.fingerprint() != first.fingerprint() {
            return Err(AggregationError::MixedRecords {
                details: format!(
                    "{} ({}) vs {} ({})",
                    first.item_id,
                    first.fingerprint(),
                    rec.item_id,
                    rec.fingerprint()
                ),
            });
        }
    }
    let mut counts = BTreeMap::new();
    let mut ok_runs = 0;
    for rec in records.iter().filter(|r| r.is_ok()) {
        ok_runs += 1;
        for label in &rec.labels {
            *counts.entry(*label).or_insert(0) += 1;
        }
    }
    if ok_runs == 0 {
        return Err(AggregationError::NoOkRuns {
            item_id: first.item_id.clone(),
        });
    }
    Ok(LabelCounts {
        item_id: first.item_id.clone(),
        counts,
        ok_runs,
    })
}

/// Groups records by item, preserving first-appearance order.
pub fn group_records(records: &[RunRecord]) -> Vec<(String, Vec<&RunRecord>)> {
    let mut order: Vec<(String, Vec<&RunRecord>)> = Vec::new();
    let mut index: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for rec in records {
        match index.get(rec.item_id.as_str()) {
            Some(&i) => order[i].1.push(rec),
            None => {
                index.insert(rec.item_id.as_str(), order.len());
                order.push((rec.item_id.clone(), vec![rec]));
            }
        }
    }
    order
}

/// Keep threshold for `ok_runs` successful runs: the smallest count that
/// is at least 80 percent of them (4 of 5 in the standard setup).
pub fn default_threshold(ok_runs: u32) -> u32 {
    (4 * ok_runs).div_ceil(5)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusOutcome {
    /// Labels at or above the threshold, ordered by repetition count
    /// descending, ties alphabetically.
    Labels(Vec<CanonLabel>),
    Fallback(FallbackCategory),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusResult {
    pub item_id: String,
    pub outcome: ConsensusOutcome,
    pub threshold_used: u32,
    pub max_repetition: u32,
    /// Consensus-stage cleanup notes; logged, not serialized.
    pub warnings: Vec<String>,
}

impl ConsensusResult {
    pub fn is_fallback(&self) -> bool {
        matches!(self.outcome, ConsensusOutcome::Fallback(_))
    }
}

/// Consensus with the default threshold for the item's run count.
pub fn select_final(counts: &LabelCounts) -> ConsensusResult {
    select_final_with(counts, None)
}

/// Consensus with an explicit keep threshold (must be at least 1).
///
/// If nothing survives, the item falls back: distortion-vs-not uncertainty
/// when any run said `No Distortion`, which-distortion uncertainty
/// otherwise.
pub fn select_final_with(counts: &LabelCounts, threshold: Option<u32>) -> ConsensusResult {
    let t = threshold.unwrap_or_else(|| default_threshold(counts.ok_runs));
    debug_assert!(t >= 1, "threshold must be positive");

    let mut kept: Vec<(CanonLabel, u32)> = counts
        .counts
        .iter()
        .filter(|(_, &c)| c >= t)
        .map(|(&l, &c)| (l, c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.as_str().cmp(b.0.as_str())));
    let mut labels: Vec<CanonLabel> = kept.into_iter().map(|(l, _)| l).collect();

    let mut warnings = Vec::new();
    if labels.iter().any(|l| l.is_named_distortion()) {
        labels.retain(|l| *l != CanonLabel::Others);
        let before = labels.len();
        labels.retain(|l| *l != CanonLabel::NoDistortion);
        if labels.len() < before {
            warnings.push(
                "dropped No Distortion from consensus: a distortion also passed the threshold"
                    .to_owned(),
            );
        }
    }

    let outcome = if labels.is_empty() {
        let saw_no_distortion = counts
            .counts
            .get(&CanonLabel::NoDistortion)
            .is_some_and(|&c| c > 0);
        ConsensusOutcome::Fallback(if saw_no_distortion {
            FallbackCategory::NotSureIfDistortion
        } else {
            FallbackCategory::NotSureWhichDistortion
        })
    } else {
        ConsensusOutcome::Labels(labels)
    };

    ConsensusResult {
        item_id: counts.item_id.clone(),
        outcome,
        threshold_used: t,
        max_repetition: counts.max_repetition(),
        warnings,
    }
}

// File shape: item_id, labels or fallback, threshold, max_repetition.
impl Serialize for ConsensusResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(4))?;
        map.serialize_entry("item_id", &self.item_id)?;
        match &self.outcome {
            ConsensusOutcome::Labels(labels) => map.serialize_entry("labels", labels)?,
            ConsensusOutcome::Fallback(f) => map.serialize_entry("fallback", f)?,
        }
        map.serialize_entry("threshold", &self.threshold_used)?;
        map.serialize_entry("max_repetition", &self.max_repetition)?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for ConsensusResult {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Row {
            item_id: String,
            #[serde(default)]
            labels: Option<Vec<CanonLabel>>,
            #[serde(default)]
            fallback: Option<FallbackCategory>,
            threshold: u32,
            max_repetition: u32,
        }
        let row = Row::deserialize(deserializer)?;
        let outcome = match (row.labels, row.fallback) {
            (Some(labels), None) if !labels.is_empty() => ConsensusOutcome::Labels(labels),
            (None, Some(f)) => ConsensusOutcome::Fallback(f),
            (Some(_), Some(_)) => {
                return Err(D::Error::custom("row has both labels and fallback"))
            }
            _ => return Err(D::Error::custom("row needs labels or fallback")),
        };
        Ok(ConsensusResult {
            item_id: row.item_id,
            outcome,
            threshold_used: row.threshold,
            max_repetition: row.max_repetition,
            warnings: Vec::new(),
        })
    }
}

/// For each repetition level k, the fraction of items whose most repeated
/// label reached at least k. Keys run from 1 to the largest run count.
pub fn max_repetition_distribution(items: &[LabelCounts]) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    if items.is_empty() {
        return out;
    }
    let runs = items.iter().map(|c| c.ok_runs).max().unwrap_or(0);
    let n = items.len() as f64;
    for k in 1..=runs {
        let hit = items.iter().filter(|c| c.max_repetition() >= k).count();
        out.insert(k, hit as f64 / n);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelShare {
    pub label: String,
    pub count: u32,
    pub percent: f64,
}

/// Distribution of final labels and fallbacks over consensus results.
/// Every category gets a row, zero or not: the ten distortions in
/// alphabetical order, the two remaining labels, then the fallbacks.
pub fn label_distribution(results: &[ConsensusResult]) -> Vec<LabelShare> {
    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for res in results {
        match &res.outcome {
            ConsensusOutcome::Labels(labels) => {
                for l in labels {
                    *counts.entry(l.as_str()).or_insert(0) += 1;
                }
            }
            ConsensusOutcome::Fallback(f) => {
                *counts.entry(f.as_str()).or_insert(0) += 1;
            }
        }
    }
    let n = results.len() as f64;
    let mut ordered: Vec<&str> = crate::taxonomy::AGREEMENT_LABELS
        .iter()
        .map(|l| l.as_str())
        .collect();
    ordered.remove(ordered.len() - 1); // reinsert No Distortion after the distortions
    ordered.push(CanonLabel::NoDistortion.as_str());
    ordered.push(CanonLabel::Others.as_str());
    ordered.push(FallbackCategory::NotSureIfDistortion.as_str());
    ordered.push(FallbackCategory::NotSureWhichDistortion.as_str());
    ordered
        .into_iter()
        .map(|label| {
            let count = counts.get(label).copied().unwrap_or(0);
            LabelShare {
                label: label.to_owned(),
                count,
                percent: if n > 0.0 { 100.0 * count as f64 / n } else { 0.0 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::RunStatus;
    use crate::taxonomy::PromptKind;

    fn record(item: &str, run: u32, labels: &[CanonLabel]) -> RunRecord {
        RunRecord {
            item_id: item.into(),
            model: "m".into(),
            temperature: 0.5,
            prompt: PromptKind::Mlp,
            run_index: run,
            raw_response: labels
                .iter()
                .map(|l| l.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            labels: labels.to_vec(),
            status: RunStatus::Ok,
            warnings: vec![],
        }
    }

    fn counts_for(runs: &[&[CanonLabel]]) -> LabelCounts {
        let records: Vec<RunRecord> = runs
            .iter()
            .enumerate()
            .map(|(i, ls)| record("it", i as u32, ls))
            .collect();
        let refs: Vec<&RunRecord> = records.iter().collect();
        count_labels(&refs).unwrap()
    }

    use CanonLabel::{FortuneTelling as Ft, MindReading as Mr, NoDistortion as Nd, Personalization as P};
    use CanonLabel::EmotionalReasoning as Er;

    #[test]
    fn recurring_label_survives_threshold() {
        // Five runs: the dominant label recurs in all five, companions
        // never reach four repetitions.
        let counts = counts_for(&[&[P, Ft], &[P, Ft], &[P, Er], &[P, Er], &[P, Ft]]);
        assert_eq!(counts.ok_runs, 5);
        assert_eq!(counts.counts[&P], 5);
        assert_eq!(counts.counts[&Ft], 3);
        assert_eq!(counts.counts[&Er], 2);

        let res = select_final(&counts);
        assert_eq!(res.threshold_used, 4);
        assert_eq!(res.max_repetition, 5);
        assert_eq!(res.outcome, ConsensusOutcome::Labels(vec![P]));
    }

    #[test]
    fn four_of_five_is_enough() {
        let counts = counts_for(&[&[P], &[P], &[P], &[P], &[Nd]]);
        let res = select_final(&counts);
        assert_eq!(res.outcome, ConsensusOutcome::Labels(vec![P]));
        assert_eq!(res.max_repetition, 4);
    }

    #[test]
    fn no_distortion_majority_falls_back_to_if_distortion() {
        let counts = counts_for(&[&[Nd], &[Nd], &[Nd], &[P], &[P]]);
        let res = select_final(&counts);
        assert_eq!(
            res.outcome,
            ConsensusOutcome::Fallback(FallbackCategory::NotSureIfDistortion)
        );
        assert_eq!(res.max_repetition, 3);
    }

    #[test]
    fn scattered_distortions_fall_back_to_which_distortion() {
        let counts = counts_for(&[&[P], &[P], &[Ft], &[Ft], &[Mr]]);
        let res = select_final(&counts);
        assert_eq!(
            res.outcome,
            ConsensusOutcome::Fallback(FallbackCategory::NotSureWhichDistortion)
        );
    }

    #[test]
    fn consensus_drops_no_distortion_when_a_distortion_also_passes() {
        let counts = counts_for(&[&[Nd], &[Nd], &[P], &[P], &[Nd]]);
        let res = select_final_with(&counts, Some(2));
        assert_eq!(res.outcome, ConsensusOutcome::Labels(vec![P]));
        assert_eq!(res.warnings.len(), 1);
    }

    #[test]
    fn kept_labels_are_ordered_by_count_then_name() {
        let counts = counts_for(&[&[P, Ft], &[P, Ft], &[P, Mr], &[Ft, P], &[P, Ft, Mr]]);
        // P=5, Ft=4, Mr=2
        let res = select_final_with(&counts, Some(2));
        assert_eq!(res.outcome, ConsensusOutcome::Labels(vec![P, Ft, Mr]));
    }

    #[test]
    fn threshold_tracks_run_count() {
        assert_eq!(default_threshold(5), 4);
        assert_eq!(default_threshold(4), 4);
        assert_eq!(default_threshold(3), 3);
        assert_eq!(default_threshold(2), 2);
        assert_eq!(default_threshold(1), 1);
        assert_eq!(default_threshold(10), 8);
    }

    #[test]
    fn failed_runs_do_not_count() {
        let mut records = vec![
            record("it", 0, &[P]),
            record("it", 1, &[P]),
            record("it", 2, &[P]),
        ];
        records.push(RunRecord {
            status: RunStatus::Failed,
            labels: vec![],
            ..record("it", 3, &[])
        });
        let refs: Vec<&RunRecord> = records.iter().collect();
        let counts = count_labels(&refs).unwrap();
        assert_eq!(counts.ok_runs, 3);
        // Threshold adapts to the three successful runs.
        let res = select_final(&counts);
        assert_eq!(res.threshold_used, 3);
        assert_eq!(res.outcome, ConsensusOutcome::Labels(vec![P]));
    }

    #[test]
    fn all_failed_is_an_error() {
        let rec = RunRecord {
            status: RunStatus::Failed,
            labels: vec![],
            ..record("it", 0, &[])
        };
        let err = count_labels(&[&rec]).unwrap_err();
        assert_eq!(
            err,
            AggregationError::NoOkRuns {
                item_id: "it".into()
            }
        );
    }

    #[test]
    fn mixed_items_are_rejected() {
        let a = record("a", 0, &[P]);
        let b = record("b", 0, &[P]);
        assert!(matches!(
            count_labels(&[&a, &b]).unwrap_err(),
            AggregationError::MixedRecords { .. }
        ));
        let mut c = record("a", 1, &[P]);
        c.model = "other".into();
        assert!(matches!(
            count_labels(&[&a, &c]).unwrap_err(),
            AggregationError::MixedRecords { .. }
        ));
    }

    #[test]
    fn consensus_rows_round_trip_both_shapes() {
        let labels = ConsensusResult {
            item_id: "a".into(),
            outcome: ConsensusOutcome::Labels(vec![P, Ft]),
            threshold_used: 4,
            max_repetition: 5,
            warnings: vec![],
        };
        let json = serde_json::to_value(&labels).unwrap();
        assert_eq!(json["labels"][0], "Personalization");
        assert_eq!(json["threshold"], 4);
        assert!(json.get("fallback").is_none());
        assert!(json.get("warnings").is_none());
        let back: ConsensusResult = serde_json::from_value(json).unwrap();
        assert_eq!(back, labels);

        let fb = ConsensusResult {
            item_id: "b".into(),
            outcome: ConsensusOutcome::Fallback(FallbackCategory::NotSureIfDistortion),
            threshold_used: 4,
            max_repetition: 3,
            warnings: vec![],
        };
        let json = serde_json::to_value(&fb).unwrap();
        assert_eq!(json["fallback"], "Not sure if distortion");
        let back: ConsensusResult = serde_json::from_value(json).unwrap();
        assert_eq!(back, fb);

        let bad: Result<ConsensusResult, _> = serde_json::from_str(
            "{\"item_id\":\"x\",\"labels\":[\"Labeling\"],\"fallback\":\"Not sure if distortion\",\"threshold\":4,\"max_repetition\":2}",
        );
        assert!(bad.is_err());
    }

    #[test]
    fn repetition_distribution_counts_at_least_k() {
        let items = vec![
            counts_for(&[&[P], &[P], &[P], &[P], &[P]]),
            counts_for(&[&[Nd], &[Nd], &[Nd], &[P], &[P]]),
            counts_for(&[&[P], &[P], &[P], &[P], &[Nd]]),
        ];
        let dist = max_repetition_distribution(&items);
        assert_eq!(dist[&1], 1.0);
        assert_eq!(dist[&3], 1.0);
        assert!((dist[&4] - 2.0 / 3.0).abs() < 1e-12);
        assert!((dist[&5] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(dist.len(), 5);
    }

    #[test]
    fn label_distribution_includes_zero_rows() {
        let results = vec![
            select_final(&counts_for(&[&[P], &[P], &[P], &[P], &[P]])),
            select_final(&counts_for(&[&[Nd], &[Nd], &[Nd], &[P], &[P]])),
        ];
        let rows = label_distribution(&results);
        assert_eq!(rows.len(), 14);
        let p = rows.iter().find(|r| r.label == "Personalization").unwrap();
        assert_eq!((p.count, p.percent), (1, 50.0));
        let nsid = rows
            .iter()
            .find(|r| r.label == "Not sure if distortion")
            .unwrap();
        assert_eq!(nsid.count, 1);
        let ft = rows.iter().find(|r| r.label == "Fortune Telling").unwrap();
        assert_eq!(ft.count, 0);
    }
}
