//! Inter-run agreement: per-label binary Fleiss' kappa.
//!
//! Each label is scored on its own presence/absence matrix: the N runs of
//! one item act as M raters giving binary votes. Chance agreement uses the
//! pooled positive rate, so a label that never varies has no defined kappa
//! and is reported as undefined rather than zero.

use serde::Serialize;
use thiserror::Error;

use crate::annotator::RunRecord;
use crate::taxonomy::{CanonLabel, AGREEMENT_LABELS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReliabilityError {
    #[error("need at least two runs per item for agreement, got {raters}")]
    InsufficientRuns { raters: u32 },
    #[error("no items with successful runs")]
    NoItems,
    #[error("kappa is undefined for every label")]
    AllUndefined,
}

/// Binary votes for one item: how many of the M runs said the label is
/// present and how many said absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemVotes {
    pub item_id: String,
    pub present: u32,
    pub absent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgreementTable {
    pub label: CanonLabel,
    pub rows: Vec<ItemVotes>,
    pub raters: u32,
}

/// Binarization output plus the items that had to be excluded because
/// their successful-run count differed from the modal count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarizeReport {
    pub table: AgreementTable,
    pub excluded_items: Vec<String>,
}

/// Modal successful-run count over the grouped records; ties resolve to
/// the larger count so a full set of runs is preferred.
fn modal_ok_count(groups: &[(String, Vec<&RunRecord>)]) -> Option<u32> {
    let mut freq: std::collections::BTreeMap<u32, u32> = std::collections::BTreeMap::new();
    for (_, records) in groups {
        let ok = records.iter().filter(|r| r.is_ok()).count() as u32;
        if ok > 0 {
            *freq.entry(ok).or_insert(0) += 1;
        }
    }
    freq.into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(count, _)| count)
}

/// Builds the presence/absence matrix for one label. Items whose
/// successful-run count differs from the modal count cannot act as rows of
/// a fixed-rater design and are listed in `excluded_items`.
pub fn binarize(
    groups: &[(String, Vec<&RunRecord>)],
    label: CanonLabel,
) -> Result<BinarizeReport, ReliabilityError> {
    let raters = modal_ok_count(groups).ok_or(ReliabilityError::NoItems)?;
    if raters < 2 {
        return Err(ReliabilityError::InsufficientRuns { raters });
    }
    let mut rows = Vec::new();
    let mut excluded_items = Vec::new();
    for (item_id, records) in groups {
        let ok: Vec<&&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
        if ok.len() as u32 != raters {
            excluded_items.push(item_id.clone());
            continue;
        }
        let present = ok.iter().filter(|r| r.labels.contains(&label)).count() as u32;
        rows.push(ItemVotes {
            item_id: item_id.clone(),
            present,
            absent: raters - present,
        });
    }
    if rows.is_empty() {
        return Err(ReliabilityError::NoItems);
    }
    Ok(BinarizeReport {
        table: AgreementTable {
            label,
            rows,
            raters,
        },
        excluded_items,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaResult {
    pub label: CanonLabel,
    /// `None` when every vote across all items is identical, which makes
    /// expected agreement 1 and the statistic undefined.
    pub kappa: Option<f64>,
    pub p_bar: f64,
    pub p_e: f64,
    pub items: usize,
    pub raters: u32,
}

/// Binary Fleiss' kappa over the table.
///
/// Per-item agreement is the fraction of concordant rater pairs; expected
/// agreement comes from the pooled positive rate p as p^2 + (1-p)^2.
/// Degeneracy is decided on exact counts, not on a float comparison.
pub fn fleiss_kappa(table: &AgreementTable) -> KappaResult {
    let n = table.rows.len();
    let m = table.raters;
    debug_assert!(n > 0 && m >= 2);
    let mm = f64::from(m) * f64::from(m - 1);

    let mut p_sum = 0.0;
    let mut present_total: u64 = 0;
    for row in &table.rows {
        debug_assert_eq!(row.present + row.absent, m);
        let n1 = f64::from(row.present);
        let n0 = f64::from(row.absent);
        p_sum += (n1 * (n1 - 1.0) + n0 * (n0 - 1.0)) / mm;
        present_total += u64::from(row.present);
    }
    let p_bar = p_sum / n as f64;

    let votes_total = n as u64 * u64::from(m);
    let p = present_total as f64 / votes_total as f64;
    let p_e = p * p + (1.0 - p) * (1.0 - p);

    let degenerate = present_total == 0 || present_total == votes_total;
    KappaResult {
        label: table.label,
        kappa: if degenerate {
            None
        } else {
            Some((p_bar - p_e) / (1.0 - p_e))
        },
        p_bar,
        p_e,
        items: n,
        raters: m,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaAverage {
    pub mean: f64,
    /// How many labels had a defined kappa.
    pub included: usize,
    pub excluded: Vec<CanonLabel>,
}

/// Mean kappa over the labels where it is defined.
pub fn average_kappa(results: &[KappaResult]) -> Result<KappaAverage, ReliabilityError> {
    let mut sum = 0.0;
    let mut included = 0usize;
    let mut excluded = Vec::new();
    for res in results {
        match res.kappa {
            Some(k) => {
                sum += k;
                included += 1;
            }
            None => excluded.push(res.label),
        }
    }
    if included == 0 {
        return Err(ReliabilityError::AllUndefined);
    }
    Ok(KappaAverage {
        mean: sum / included as f64,
        included,
        excluded,
    })
}

/// Full agreement report over grouped records: one kappa per scored label
/// plus their average.
pub struct AgreementReport {
    pub results: Vec<KappaResult>,
    pub average: KappaAverage,
    pub excluded_items: Vec<String>,
}

pub fn agreement_report(
    groups: &[(String, Vec<&RunRecord>)],
) -> Result<AgreementReport, ReliabilityError> {
    let mut results = Vec::with_capacity(AGREEMENT_LABELS.len());
    let mut excluded_items = Vec::new();
    for label in AGREEMENT_LABELS {
        let report = binarize(groups, label)?;
        if excluded_items.is_empty() {
            excluded_items = report.excluded_items;
        }
        results.push(fleiss_kappa(&report.table));
    }
    let average = average_kappa(&results)?;
    Ok(AgreementReport {
        results,
        average,
        excluded_items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::RunStatus;
    use crate::taxonomy::PromptKind;
    use proptest::prelude::*;

    fn table(rows: &[(u32, u32)], label: CanonLabel) -> AgreementTable {
        let m = rows[0].0 + rows[0].1;
        AgreementTable {
            label,
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, &(present, absent))| ItemVotes {
                    item_id: format!("i{i}"),
                    present,
                    absent,
                })
                .collect(),
            raters: m,
        }
    }

    #[test]
    fn worked_three_item_example() {
        let t = table(&[(5, 0), (0, 5), (4, 1)], CanonLabel::Personalization);
        let res = fleiss_kappa(&t);
        assert!((res.p_bar - 13.0 / 15.0).abs() < 1e-12);
        assert!((res.p_e - 0.52).abs() < 1e-12);
        let kappa = res.kappa.unwrap();
        assert!((kappa - 13.0 / 18.0).abs() < 1e-12);
        assert!((kappa - 0.72222).abs() < 1e-4);
    }

    #[test]
    fn perfect_agreement_with_variation_is_one() {
        let t = table(&[(5, 0), (0, 5)], CanonLabel::Labeling);
        assert_eq!(fleiss_kappa(&t).kappa, Some(1.0));
    }

    #[test]
    fn unanimous_constant_votes_are_undefined() {
        let t = table(&[(5, 0), (5, 0)], CanonLabel::Labeling);
        let res = fleiss_kappa(&t);
        assert_eq!(res.kappa, None);
        assert_eq!(res.p_e, 1.0);

        let t = table(&[(0, 5), (0, 5), (0, 5)], CanonLabel::Labeling);
        assert_eq!(fleiss_kappa(&t).kappa, None);
    }

    #[test]
    fn average_skips_undefined_labels() {
        let defined = |label, kappa| KappaResult {
            label,
            kappa: Some(kappa),
            p_bar: 0.9,
            p_e: 0.5,
            items: 3,
            raters: 5,
        };
        let undefined = KappaResult {
            label: CanonLabel::MentalFilter,
            kappa: None,
            p_bar: 1.0,
            p_e: 1.0,
            items: 3,
            raters: 5,
        };
        let avg = average_kappa(&[
            defined(CanonLabel::Personalization, 0.8),
            undefined.clone(),
            defined(CanonLabel::Labeling, 0.6),
        ])
        .unwrap();
        assert!((avg.mean - 0.7).abs() < 1e-12);
        assert_eq!(avg.included, 2);
        assert_eq!(avg.excluded, vec![CanonLabel::MentalFilter]);

        assert_eq!(
            average_kappa(&[undefined]).unwrap_err(),
            ReliabilityError::AllUndefined
        );
    }

    #[test]
    fn published_column_style_average() {
        // Eleven per-label kappas averaging to 8.55/11.
        let kappas = [0.66, 0.81, 0.80, 0.87, 0.82, 0.46, 0.84, 0.73, 0.81, 0.82, 0.93];
        let results: Vec<KappaResult> = AGREEMENT_LABELS
            .iter()
            .zip(kappas)
            .map(|(&label, kappa)| KappaResult {
                label,
                kappa: Some(kappa),
                p_bar: 0.0,
                p_e: 0.0,
                items: 0,
                raters: 5,
            })
            .collect();
        let avg = average_kappa(&results).unwrap();
        assert!((avg.mean - 8.55 / 11.0).abs() < 1e-12);
        assert!((avg.mean - 0.78).abs() < 5e-3);
    }

    fn record(item: &str, run: u32, labels: &[CanonLabel], ok: bool) -> RunRecord {
        RunRecord {
            item_id: item.into(),
            model: "m".into(),
            temperature: 0.5,
            prompt: PromptKind::Mlp,
            run_index: run,
            raw_response: String::new(),
            labels: labels.to_vec(),
            status: if ok { RunStatus::Ok } else { RunStatus::Failed },
            warnings: vec![],
        }
    }

    #[test]
    fn binarize_counts_presence_and_excludes_off_modal_items() {
        use CanonLabel::{NoDistortion as Nd, Personalization as P};
        let records = vec![
            record("a", 0, &[P], true),
            record("a", 1, &[P, Nd], true),
            record("a", 2, &[Nd], true),
            record("b", 0, &[Nd], true),
            record("b", 1, &[Nd], true),
            record("b", 2, &[Nd], true),
            // c lost a run, so it cannot sit in a 3-rater table.
            record("c", 0, &[P], true),
            record("c", 1, &[P], true),
            record("c", 2, &[], false),
        ];
        let groups = crate::aggregation::group_records(&records);
        let report = binarize(&groups, P).unwrap();
        assert_eq!(report.excluded_items, vec!["c".to_owned()]);
        assert_eq!(report.table.raters, 3);
        assert_eq!(
            report.table.rows,
            vec![
                ItemVotes {
                    item_id: "a".into(),
                    present: 2,
                    absent: 1
                },
                ItemVotes {
                    item_id: "b".into(),
                    present: 0,
                    absent: 3
                },
            ]
        );
    }

    #[test]
    fn modal_tie_prefers_more_runs() {
        use CanonLabel::Personalization as P;
        let records = vec![
            record("a", 0, &[P], true),
            record("a", 1, &[P], true),
            record("a", 2, &[P], true),
            record("b", 0, &[P], true),
            record("b", 1, &[P], true),
        ];
        let groups = crate::aggregation::group_records(&records);
        let report = binarize(&groups, P).unwrap();
        assert_eq!(report.table.raters, 3);
        assert_eq!(report.excluded_items, vec!["b".to_owned()]);
    }

    #[test]
    fn single_run_items_cannot_be_scored() {
        use CanonLabel::Personalization as P;
        let records = vec![record("a", 0, &[P], true), record("b", 0, &[P], true)];
        let groups = crate::aggregation::group_records(&records);
        assert_eq!(
            binarize(&groups, P).unwrap_err(),
            ReliabilityError::InsufficientRuns { raters: 1 }
        );
    }

    fn choose(n: u32, k: u32) -> f64 {
        if k > n {
            return 0.0;
        }
        let mut out = 1.0;
        for i in 0..k {
            out = out * f64::from(n - i) / f64::from(i + 1);
        }
        out
    }

    proptest! {
        // Independent check: per-item agreement equals the share of
        // concordant rater pairs, and kappa stays in range.
        #[test]
        fn matches_pair_counting_formulation(
            m in 2u32..8,
            presents in proptest::collection::vec(0u32..8, 1..40)
        ) {
            let rows: Vec<(u32, u32)> = presents
                .iter()
                .map(|&p| {
                    let p = p.min(m);
                    (p, m - p)
                })
                .collect();
            let t = table(&rows, CanonLabel::MindReading);
            let res = fleiss_kappa(&t);

            let pair_mean = rows
                .iter()
                .map(|&(n1, n0)| (choose(n1, 2) + choose(n0, 2)) / choose(m, 2))
                .sum::<f64>()
                / rows.len() as f64;
            prop_assert!((res.p_bar - pair_mean).abs() < 1e-12);

            if let Some(kappa) = res.kappa {
                prop_assert!(kappa <= 1.0 + 1e-12);
                prop_assert!(kappa >= -1.0 - 1e-12);
            }
        }
    }
}
