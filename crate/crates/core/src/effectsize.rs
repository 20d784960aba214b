//! Chance-normalized evaluation.
//!
//! Scores are weighted F1 against a random baseline computed analytically
//! from the gold label distribution: a predictor sampling classes with the
//! gold proportions scores Sum p_i^2 on single-label tasks, and its
//! multilabel counterpart is the support-weighted mean of per-label
//! positive rates. The effect size
//! `kappa_f1 = (f1 - f1_random) / (1 - f1_random)` is 0 at chance and 1 at
//! perfection, which makes scores comparable across datasets with
//! different class balance. A seeded Monte Carlo estimator verifies the
//! analytic baselines empirically.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::seed::derive_rng;
use crate::taxonomy::CanonLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
    Multilabel,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            "multilabel" => Ok(Task::Multilabel),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

/// One evaluated row: an item and its gold or predicted labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemLabels {
    pub item_id: String,
    pub labels: Vec<CanonLabel>,
}

impl ItemLabels {
    pub fn new(item_id: impl Into<String>, labels: Vec<CanonLabel>) -> Self {
        ItemLabels {
            item_id: item_id.into(),
            labels,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold and predictions are misaligned: {details}")]
    Alignment { details: String },
    #[error("item {item_id}: {task} needs exactly one label, got {got}")]
    SingleLabelRequired {
        item_id: String,
        task: Task,
        got: usize,
    },
    #[error("item {item_id}: empty label set")]
    EmptyLabels { item_id: String },
    #[error("item {item_id}: label {value:?} is outside the canonical space")]
    NonCanonical { item_id: String, value: String },
    #[error("item {item_id}: field {field:?} does not fit task {task}")]
    WrongShape {
        item_id: String,
        field: &'static str,
        task: Task,
    },
    #[error("invalid class distribution: {details}")]
    BadDistribution { details: String },
    #[error("multilabel baseline needs positive total support")]
    EmptySupport,
    #[error("random baseline is 1, so kappa-F1 is undefined")]
    DegenerateBaseline,
    #[error("monte carlo needs at least 2 repeats, got {repeats}")]
    TooFewRepeats { repeats: u32 },
    #[error("no items to evaluate")]
    Empty,
    #[error(transparent)]
    File(#[from] JsonlError),
}

/// Distortion-or-not projection: `No Distortion` is the negative class,
/// everything else (including `Others`) is positive.
fn binary_class(labels: &[CanonLabel]) -> bool {
    labels.iter().any(|l| l.is_distortion_like())
}

fn single_class(item: &ItemLabels, task: Task) -> Result<CanonLabel, EvalError> {
    if item.labels.len() != 1 {
        return Err(EvalError::SingleLabelRequired {
            item_id: item.item_id.clone(),
            task,
            got: item.labels.len(),
        });
    }
    Ok(item.labels[0])
}

fn label_set(item: &ItemLabels) -> BTreeSet<CanonLabel> {
    item.labels.iter().copied().collect()
}

fn validate_rows(rows: &[ItemLabels], task: Task) -> Result<(), EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    for row in rows {
        if row.labels.is_empty() {
            return Err(EvalError::EmptyLabels {
                item_id: row.item_id.clone(),
            });
        }
        if task == Task::Multiclass {
            single_class(row, task)?;
        }
    }
    Ok(())
}

fn check_alignment(gold: &[ItemLabels], pred: &[ItemLabels]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Alignment {
            details: format!("{} gold items vs {} predictions", gold.len(), pred.len()),
        });
    }
    for (g, p) in gold.iter().zip(pred) {
        if g.item_id != p.item_id {
            return Err(EvalError::Alignment {
                details: format!("gold item {} paired with prediction {}", g.item_id, p.item_id),
            });
        }
    }
    Ok(())
}

/// Weighted F1 over class keys: per-class F1 weighted by gold support.
/// Classes never seen in gold carry no weight; 0/0 ratios score 0.
fn weighted_f1_keys<K: Ord + Copy>(gold: &[K], pred: &[K]) -> f64 {
    let mut support: BTreeMap<K, f64> = BTreeMap::new();
    for g in gold {
        *support.entry(*g).or_insert(0.0) += 1.0;
    }
    let n = gold.len() as f64;
    let mut total = 0.0;
    for (&class, &sup) in &support {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fnn = 0.0;
        for (g, p) in gold.iter().zip(pred) {
            match (*g == class, *p == class) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fnn += 1.0,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += sup / n * f1;
    }
    total
}

/// Multilabel weighted F1: per-label positive-class F1 weighted by the
/// label's gold support, over labels that occur in gold.
fn weighted_f1_sets(gold: &[BTreeSet<CanonLabel>], pred: &[BTreeSet<CanonLabel>]) -> f64 {
    let mut support: BTreeMap<CanonLabel, f64> = BTreeMap::new();
    for set in gold {
        for &l in set {
            *support.entry(l).or_insert(0.0) += 1.0;
        }
    }
    let total_support: f64 = support.values().sum();
    let mut total = 0.0;
    for (&label, &sup) in &support {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fnn = 0.0;
        for (g, p) in gold.iter().zip(pred) {
            match (g.contains(&label), p.contains(&label)) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fnn += 1.0,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += sup / total_support * f1;
    }
    total
}

/// Weighted F1 for id-aligned gold and predictions.
pub fn weighted_f1(
    gold: &[ItemLabels],
    pred: &[ItemLabels],
    task: Task,
) -> Result<f64, EvalError> {
    check_alignment(gold, pred)?;
    validate_rows(gold, task)?;
    validate_rows(pred, task)?;
    Ok(match task {
        Task::Binary => {
            let g: Vec<bool> = gold.iter().map(|r| binary_class(&r.labels)).collect();
            let p: Vec<bool> = pred.iter().map(|r| binary_class(&r.labels)).collect();
            weighted_f1_keys(&g, &p)
        }
        Task::Multiclass => {
            let g: Vec<CanonLabel> = gold
                .iter()
                .map(|r| single_class(r, task))
                .collect::<Result<_, _>>()?;
            let p: Vec<CanonLabel> = pred
                .iter()
                .map(|r| single_class(r, task))
                .collect::<Result<_, _>>()?;
            weighted_f1_keys(&g, &p)
        }
        Task::Multilabel => {
            let g: Vec<BTreeSet<CanonLabel>> = gold.iter().map(label_set).collect();
            let p: Vec<BTreeSet<CanonLabel>> = pred.iter().map(label_set).collect();
            weighted_f1_sets(&g, &p)
        }
    })
}

/// Gold class proportions for single-label tasks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDistribution {
    pub classes: Vec<String>,
    pub proportions: Vec<f64>,
    pub n: usize,
}

impl ClassDistribution {
    pub fn new(
        classes: Vec<String>,
        proportions: Vec<f64>,
        n: usize,
    ) -> Result<Self, EvalError> {
        if classes.len() != proportions.len() {
            return Err(EvalError::BadDistribution {
                details: format!(
                    "{} classes but {} proportions",
                    classes.len(),
                    proportions.len()
                ),
            });
        }
        if proportions.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EvalError::BadDistribution {
                details: "proportions must lie in [0, 1]".into(),
            });
        }
        let sum: f64 = proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EvalError::BadDistribution {
                details: format!("proportions sum to {sum}, expected 1"),
            });
        }
        Ok(ClassDistribution {
            classes,
            proportions,
            n,
        })
    }

    /// Measures the distribution on gold labels (never on predictions).
    pub fn from_gold(gold: &[ItemLabels], task: Task) -> Result<Self, EvalError> {
        validate_rows(gold, task)?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for row in gold {
            let class = match task {
                Task::Binary => if binary_class(&row.labels) { "1" } else { "0" }.to_owned(),
                Task::Multiclass => single_class(row, task)?.as_str().to_owned(),
                Task::Multilabel => {
                    return Err(EvalError::BadDistribution {
                        details: "multilabel tasks use per-label prevalences".into(),
                    })
                }
            };
            *counts.entry(class).or_insert(0) += 1;
        }
        let n = gold.len();
        let (classes, proportions) = counts
            .into_iter()
            .map(|(c, k)| (c, k as f64 / n as f64))
            .unzip();
        ClassDistribution::new(classes, proportions, n)
    }
}

/// Expected weighted F1 of a predictor that samples classes with the gold
/// proportions: Sum p_i^2. Covers binary as the two-class case.
pub fn random_f1_multiclass(dist: &ClassDistribution) -> f64 {
    dist.proportions.iter().map(|p| p * p).sum()
}

/// One multilabel gold label with its positive rate and support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelPrevalence {
    pub label: String,
    pub prevalence: f64,
    pub support: f64,
}

/// Per-label positive rates measured on multilabel gold.
pub fn prevalences_from_gold(gold: &[ItemLabels]) -> Result<Vec<LabelPrevalence>, EvalError> {
    validate_rows(gold, Task::Multilabel)?;
    let mut counts: BTreeMap<CanonLabel, usize> = BTreeMap::new();
    for row in gold {
        for label in label_set(row) {
            *counts.entry(label).or_insert(0) += 1;
        }
    }
    let n = gold.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(label, c)| LabelPrevalence {
            label: label.as_str().to_owned(),
            prevalence: c as f64 / n,
            support: c as f64,
        })
        .collect())
}

/// Expected weighted F1 of a multilabel predictor that marks label j
/// present independently with its gold rate p_j. The per-label expected
/// positive-class F1 is p_j, so the support-weighted mean is
/// Sum s_j p_j / Sum s_j.
pub fn random_f1_multilabel(rows: &[LabelPrevalence]) -> Result<f64, EvalError> {
    for row in rows {
        if !(0.0..=1.0).contains(&row.prevalence) || row.support < 0.0 {
            return Err(EvalError::BadDistribution {
                details: format!(
                    "label {}: prevalence {} support {}",
                    row.label, row.prevalence, row.support
                ),
            });
        }
    }
    let total: f64 = rows.iter().map(|r| r.support).sum();
    if total <= 0.0 {
        return Err(EvalError::EmptySupport);
    }
    Ok(rows.iter().map(|r| r.support * r.prevalence).sum::<f64>() / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std: f64,
    pub repeats: u32,
    pub seed: u64,
}

/// Empirical random baseline: draws predictions from the gold-derived
/// distribution, scores weighted F1 per repeat, and returns the sample
/// mean and standard deviation. Seeded per repeat, so the estimate does
/// not depend on scheduling or repeat order.
pub fn monte_carlo_random_f1(
    gold: &[ItemLabels],
    task: Task,
    repeats: u32,
    seed: u64,
) -> Result<McEstimate, EvalError> {
    if repeats < 2 {
        return Err(EvalError::TooFewRepeats { repeats });
    }
    validate_rows(gold, task)?;
    let n = gold.len();

    let mut scores = Vec::with_capacity(repeats as usize);
    match task {
        Task::Binary | Task::Multiclass => {
            let gold_keys: Vec<u32> = match task {
                Task::Binary => gold
                    .iter()
                    .map(|r| u32::from(binary_class(&r.labels)))
                    .collect(),
                _ => {
                    let mut ids: BTreeMap<CanonLabel, u32> = BTreeMap::new();
                    let mut keys = Vec::with_capacity(n);
                    for row in gold {
                        let label = single_class(row, task)?;
                        let next = ids.len() as u32;
                        keys.push(*ids.entry(label).or_insert(next));
                    }
                    keys
                }
            };
            for rep in 0..repeats {
                let mut rng = derive_rng(seed, "mc-repeat", u64::from(rep));
                // Resampling gold keys uniformly with replacement draws each
                // class with exactly its gold proportion.
                let pred: Vec<u32> = (0..n).map(|_| gold_keys[rng.gen_range(0..n)]).collect();
                scores.push(weighted_f1_keys(&gold_keys, &pred));
            }
        }
        Task::Multilabel => {
            let gold_sets: Vec<BTreeSet<CanonLabel>> = gold.iter().map(label_set).collect();
            let prevalences = prevalences_from_gold(gold)?;
            let labels: Vec<CanonLabel> = prevalences
                .iter()
                .map(|r| r.label.parse().expect("labels came from CanonLabel"))
                .collect();
            let ps: Vec<f64> = prevalences.iter().map(|r| r.prevalence).collect();
            for rep in 0..repeats {
                let mut rng = derive_rng(seed, "mc-repeat", u64::from(rep));
                let pred: Vec<BTreeSet<CanonLabel>> = (0..n)
                    .map(|_| {
                        labels
                            .iter()
                            .zip(&ps)
                            .filter(|(_, &p)| rng.gen_bool(p))
                            .map(|(&l, _)| l)
                            .collect()
                    })
                    .collect();
                scores.push(weighted_f1_sets(&gold_sets, &pred));
            }
        }
    }

    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
        / (scores.len() - 1) as f64;
    Ok(McEstimate {
        mean,
        std: var.sqrt(),
        repeats,
        seed,
    })
}

/// Effect size of `f1` against the random baseline: 0 at chance, 1 at
/// perfection, negative below chance.
pub fn kappa_f1(f1: f64, f1_random: f64) -> Result<f64, EvalError> {
    if f1_random >= 1.0 {
        return Err(EvalError::DegenerateBaseline);
    }
    Ok((f1 - f1_random) / (1.0 - f1_random))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: Task,
    pub f1: f64,
    pub f1_random_analytic: f64,
    pub f1_random_mc: Option<McEstimate>,
    pub kappa_f1: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct McSettings {
    pub repeats: u32,
    pub seed: u64,
}

/// Full evaluation: aligns predictions to gold by item id, scores weighted
/// F1, derives the analytic baseline from gold, optionally verifies it by
/// Monte Carlo, and normalizes into kappa-F1.
pub fn evaluate(
    gold: &[ItemLabels],
    pred: &[ItemLabels],
    task: Task,
    mc: Option<McSettings>,
) -> Result<EvalReport, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut by_id: HashMap<&str, &ItemLabels> = HashMap::with_capacity(pred.len());
    for row in pred {
        if by_id.insert(row.item_id.as_str(), row).is_some() {
            return Err(EvalError::Alignment {
                details: format!("duplicate prediction for item {}", row.item_id),
            });
        }
    }
    let mut gold_ids: HashSet<&str> = HashSet::with_capacity(gold.len());
    for row in gold {
        if !gold_ids.insert(row.item_id.as_str()) {
            return Err(EvalError::Alignment {
                details: format!("duplicate gold item {}", row.item_id),
            });
        }
    }
    if let Some(extra) = pred.iter().find(|p| !gold_ids.contains(p.item_id.as_str())) {
        return Err(EvalError::Alignment {
            details: format!("prediction for item {} has no gold row", extra.item_id),
        });
    }
    let aligned: Vec<ItemLabels> = gold
        .iter()
        .map(|g| {
            by_id
                .get(g.item_id.as_str())
                .map(|p| (*p).clone())
                .ok_or_else(|| EvalError::Alignment {
                    details: format!("no prediction for item {}", g.item_id),
                })
        })
        .collect::<Result<_, _>>()?;

    let f1 = weighted_f1(gold, &aligned, task)?;
    let f1_random_analytic = match task {
        Task::Binary | Task::Multiclass => {
            random_f1_multiclass(&ClassDistribution::from_gold(gold, task)?)
        }
        Task::Multilabel => random_f1_multilabel(&prevalences_from_gold(gold)?)?,
    };
    let kappa = kappa_f1(f1, f1_random_analytic)?;
    let f1_random_mc = match mc {
        Some(settings) => Some(monte_carlo_random_f1(
            gold,
            task,
            settings.repeats,
            settings.seed,
        )?),
        None => None,
    };
    Ok(EvalReport {
        task,
        f1,
        f1_random_analytic,
        f1_random_mc,
        kappa_f1: kappa,
    })
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    item_id: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

/// Reads a gold or prediction file: JSON-lines rows with `item_id` and
/// either `label` (single-label tasks) or `labels` (multilabel). Label
/// values must be canonical; fallbacks and free text are rejected.
pub fn read_label_file(path: &Path, task: Task) -> Result<Vec<ItemLabels>, EvalError> {
    let rows: Vec<LabelRow> = jsonl::read_jsonl(path)?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let labels: Vec<String> = match (task, row.label, row.labels) {
            (Task::Binary | Task::Multiclass, Some(label), None) => vec![label],
            (Task::Multilabel, None, Some(labels)) => labels,
            (_, Some(_), Some(_)) => {
                return Err(EvalError::WrongShape {
                    item_id: row.item_id,
                    field: "label+labels",
                    task,
                })
            }
            (Task::Binary | Task::Multiclass, None, Some(_)) => {
                return Err(EvalError::WrongShape {
                    item_id: row.item_id,
                    field: "labels",
                    task,
                })
            }
            (Task::Multilabel, Some(_), None) => {
                return Err(EvalError::WrongShape {
                    item_id: row.item_id,
                    field: "label",
                    task,
                })
            }
            (_, None, None) => {
                return Err(EvalError::EmptyLabels {
                    item_id: row.item_id,
                })
            }
        };
        let mut parsed = Vec::with_capacity(labels.len());
        for value in labels {
            let label = value.parse::<CanonLabel>().map_err(|_| EvalError::NonCanonical {
                item_id: row.item_id.clone(),
                value: value.clone(),
            })?;
            if !parsed.contains(&label) {
                parsed.push(label);
            }
        }
        out.push(ItemLabels::new(row.item_id, parsed));
    }
    Ok(out)
}

/// File-level wrapper around [`evaluate`].
pub fn evaluate_files(
    gold_path: &Path,
    pred_path: &Path,
    task: Task,
    mc: Option<McSettings>,
) -> Result<EvalReport, EvalError> {
    let gold = read_label_file(gold_path, task)?;
    let pred = read_label_file(pred_path, task)?;
    evaluate(&gold, &pred, task, mc)
}
