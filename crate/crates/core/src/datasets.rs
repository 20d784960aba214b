//! Corpus ingestion, deterministic stratified splits, ambiguity
//! filtration, and versioned bundle persistence.
//!
//! The split assignment is computed once per corpus and seed, stratified
//! by the dominant gold label, and never changes between derived
//! datasets: filtration only removes items, so any two bundles built from
//! the same assignment agree on the split of every shared item.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotator::AnnotationItem;
use crate::jsonl::{self, JsonlError};
use crate::seed::{derive_rng, stable_hash};
use crate::taxonomy::{match_canonical, CanonLabel, FallbackCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self, DatasetError> {
        let parts = [train, dev, test];
        if parts.iter().any(|r| !r.is_finite() || !(0.0..=1.0).contains(r)) {
            return Err(DatasetError::BadRatios {
                details: format!("ratios must lie in [0, 1], got {parts:?}"),
            });
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadRatios {
                details: format!("ratios sum to {sum}, expected 1"),
            });
        }
        Ok(SplitRatios { train, dev, test })
    }

    fn as_array(self) -> [f64; 3] {
        [self.train, self.dev, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            dev: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {details}")]
    Format { path: String, details: String },
    #[error("schema mismatch: {details}")]
    Schema { details: String },
    #[error("line {line}: {details}")]
    Row { line: u64, details: String },
    #[error("duplicate item id {item_id:?}")]
    DuplicateId { item_id: String },
    #[error("invalid split ratios: {details}")]
    BadRatios { details: String },
    #[error("item {item_id} has no {view} consensus entry")]
    Coverage { item_id: String, view: &'static str },
    #[error("item {item_id} is not in the split assignment")]
    Unassigned { item_id: String },
    #[error("item {item_id} carries no gold label")]
    MissingGold { item_id: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Maps corpus columns (or JSON fields) onto item fields. Without an id
/// column, ids fall back to the 1-based data row ordinal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: Option<String>,
    pub text: String,
    pub golden: Option<String>,
}

/// Splits a gold cell like "Personalization; Fortune Telling" into
/// dominant and optional secondary labels.
fn parse_golden_cell(
    cell: &str,
    line: u64,
) -> Result<(Option<CanonLabel>, Option<CanonLabel>), DatasetError> {
    let parts: Vec<&str> = cell
        .split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if parts.len() > 2 {
        return Err(DatasetError::Row {
            line,
            details: format!("gold cell {cell:?} has more than two labels"),
        });
    }
    let mut labels = parts.iter().map(|p| {
        match_canonical(p).ok_or_else(|| DatasetError::Row {
            line,
            details: format!("gold label {p:?} is not canonical"),
        })
    });
    let dominant = labels.next().transpose()?;
    let secondary = labels.next().transpose()?;
    Ok((dominant, secondary))
}

fn check_unique_ids(items: &[AnnotationItem]) -> Result<(), DatasetError> {
    let mut seen = HashSet::with_capacity(items.len());
    for item in items {
        if !seen.insert(item.item_id.as_str()) {
            return Err(DatasetError::DuplicateId {
                item_id: item.item_id.clone(),
            });
        }
    }
    Ok(())
}

fn ingest_csv(path: &Path, map: &ColumnMap) -> Result<Vec<AnnotationItem>, DatasetError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DatasetError::Format {
        path: path.display().to_string(),
        details: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Format {
            path: path.display().to_string(),
            details: e.to_string(),
        })?
        .clone();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::Schema {
                details: format!("column {name:?} not found in {:?}", headers),
            })
    };
    let text_col = index_of(&map.text)?;
    let id_col = map.id.as_deref().map(index_of).transpose()?;
    let golden_col = map.golden.as_deref().map(index_of).transpose()?;

    let mut items = Vec::new();
    for (ordinal, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DatasetError::Format {
            path: path.display().to_string(),
            details: e.to_string(),
        })?;
        let line = record.position().map_or(ordinal as u64 + 2, |p| p.line());
        let text = record.get(text_col).unwrap_or("").trim();
        if text.is_empty() {
            return Err(DatasetError::Row {
                line,
                details: "empty text cell".into(),
            });
        }
        let item_id = match id_col {
            Some(col) => {
                let id = record.get(col).unwrap_or("").trim();
                if id.is_empty() {
                    return Err(DatasetError::Row {
                        line,
                        details: "empty id cell".into(),
                    });
                }
                id.to_owned()
            }
            None => format!("row-{}", ordinal + 1),
        };
        let (golden_dominant, golden_secondary) = match golden_col {
            Some(col) => parse_golden_cell(record.get(col).unwrap_or(""), line)?,
            None => (None, None),
        };
        items.push(AnnotationItem {
            item_id,
            user_input: text.to_owned(),
            golden_dominant,
            golden_secondary,
        });
    }
    check_unique_ids(&items)?;
    Ok(items)
}

fn ingest_jsonl(path: &Path, map: &ColumnMap) -> Result<Vec<AnnotationItem>, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut items = Vec::new();
    let mut ordinal = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        ordinal += 1;
        let row: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Format {
                path: path.display().to_string(),
                details: format!("line {line_no}: {e}"),
            })?;
        let field = |name: &str| -> Result<Option<&str>, DatasetError> {
            match row.get(name) {
                None | Some(serde_json::Value::Null) => Ok(None),
                Some(serde_json::Value::String(s)) => Ok(Some(s.as_str())),
                Some(other) => Err(DatasetError::Row {
                    line: line_no,
                    details: format!("field {name:?} is not a string: {other}"),
                }),
            }
        };
        let text = field(&map.text)?
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| DatasetError::Row {
                line: line_no,
                details: format!("missing or empty field {:?}", map.text),
            })?
            .to_owned();
        let item_id = match &map.id {
            Some(name) => field(name)?
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| DatasetError::Row {
                    line: line_no,
                    details: format!("missing or empty field {name:?}"),
                })?
                .to_owned(),
            None => format!("row-{ordinal}"),
        };
        let (golden_dominant, golden_secondary) = match &map.golden {
            Some(name) => match field(name)? {
                Some(cell) => parse_golden_cell(cell, line_no)?,
                None => (None, None),
            },
            None => (None, None),
        };
        items.push(AnnotationItem {
            item_id,
            user_input: text,
            golden_dominant,
            golden_secondary,
        });
    }
    check_unique_ids(&items)?;
    Ok(items)
}

/// Reads a corpus file as CSV or JSON-lines, chosen by extension.
pub fn ingest(path: &Path, map: &ColumnMap) -> Result<Vec<AnnotationItem>, DatasetError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => ingest_csv(path, map),
        Some("jsonl") | Some("json") => ingest_jsonl(path, map),
        other => Err(DatasetError::Format {
            path: path.display().to_string(),
            details: format!("unsupported extension {other:?}; expected csv or jsonl"),
        }),
    }
}

/// Stratum key for items without a gold label.
pub const UNLABELED_STRATUM: &str = "unlabeled";

/// Frozen item -> split partition for one corpus and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    map: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, item_id: &str) -> Option<Split> {
        self.map.get(item_id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.map.iter().map(|(id, s)| (id.as_str(), *s))
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for split in self.map.values() {
            counts[*split as usize] += 1;
        }
        counts
    }
}

/// Largest-remainder apportionment of `n` items. Remainder ties go to the
/// split furthest below its cumulative quota so far, which keeps the
/// global counts within one item of exact ratios no matter how many
/// strata tie.
fn apportion(n: usize, ratios: [f64; 3], assigned: [usize; 3], processed: usize) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let base = quotas.map(|q| q.floor() as usize);
    let leftovers = n - base.iter().sum::<usize>();
    let remainders = [0, 1, 2].map(|s| quotas[s] - base[s] as f64);
    let deficits = [0, 1, 2].map(|s| {
        (processed + n) as f64 * ratios[s] - (assigned[s] + base[s]) as f64
    });
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        remainders[b]
            .total_cmp(&remainders[a])
            .then(deficits[b].total_cmp(&deficits[a]))
            .then(a.cmp(&b))
    });
    let mut counts = base;
    for &s in order.iter().take(leftovers) {
        counts[s] += 1;
    }
    counts
}

/// Partitions items into train/dev/test, stratified by the dominant gold
/// label. Within a stratum, order is decided by a generator derived from
/// the seed and the stratum name, so the outcome is independent of input
/// order and of which other strata exist.
pub fn stratified_split(
    items: &[AnnotationItem],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    check_unique_ids(items)?;
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for item in items {
        let key = item
            .golden_dominant
            .map_or(UNLABELED_STRATUM, |l| l.as_str());
        strata.entry(key).or_default().push(&item.item_id);
    }

    let ratio_array = ratios.as_array();
    let mut map = BTreeMap::new();
    let mut assigned = [0usize; 3];
    let mut processed = 0usize;
    for (key, mut ids) in strata {
        ids.sort_unstable();
        let mut rng = derive_rng(seed, "split", stable_hash(key.as_bytes()));
        ids.shuffle(&mut rng);
        let counts = apportion(ids.len(), ratio_array, assigned, processed);
        let mut cursor = ids.into_iter();
        for (split, count) in Split::ALL.into_iter().zip(counts) {
            for id in cursor.by_ref().take(count) {
                map.insert(id.to_owned(), split);
            }
            assigned[split as usize] += count;
        }
        processed += counts.iter().sum::<usize>();
    }
    Ok(SplitAssignment { seed, ratios, map })
}

/// One prompt's consensus outcome for one item, as seen by filtration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelView {
    Labels(Vec<CanonLabel>),
    Fallback(FallbackCategory),
    NoOkRuns,
}

impl LabelView {
    fn removal_cause(&self, view: &str) -> Option<String> {
        match self {
            LabelView::Labels(_) => None,
            LabelView::Fallback(f) => Some(format!("{view}: {}", f.as_str())),
            LabelView::NoOkRuns => Some(format!("{view}: no ok runs")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub item_id: String,
    pub cause: String,
}

/// One retained item with all three label views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleItem {
    pub item: AnnotationItem,
    pub split: Split,
    pub rlp_labels: Vec<CanonLabel>,
    pub mlp_labels: Vec<CanonLabel>,
}

/// A filtered dataset: retained items in corpus order plus the removal
/// log, pinned to the producing configuration and split seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub config: String,
    pub seed: u64,
    pub items: Vec<BundleItem>,
    pub removed: Vec<Removal>,
}

impl DatasetBundle {
    pub fn counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for item in &self.items {
            counts[item.split as usize] += 1;
        }
        counts
    }

    pub fn split_items(&self, split: Split) -> impl Iterator<Item = &BundleItem> {
        self.items.iter().filter(move |i| i.split == split)
    }
}

/// Drops every item whose RLP or MLP consensus is a fallback category or
/// has no successful runs; survivors keep their assigned split. Both
/// consensus maps must cover the whole corpus.
pub fn filter_ambiguous(
    items: &[AnnotationItem],
    assignment: &SplitAssignment,
    rlp: &HashMap<String, LabelView>,
    mlp: &HashMap<String, LabelView>,
    config: impl Into<String>,
) -> Result<DatasetBundle, DatasetError> {
    let mut kept = Vec::with_capacity(items.len());
    let mut removed = Vec::new();
    for item in items {
        let split = assignment
            .get(&item.item_id)
            .ok_or_else(|| DatasetError::Unassigned {
                item_id: item.item_id.clone(),
            })?;
        let rlp_view = rlp.get(&item.item_id).ok_or_else(|| DatasetError::Coverage {
            item_id: item.item_id.clone(),
            view: "rlp",
        })?;
        let mlp_view = mlp.get(&item.item_id).ok_or_else(|| DatasetError::Coverage {
            item_id: item.item_id.clone(),
            view: "mlp",
        })?;
        let causes: Vec<String> = [rlp_view.removal_cause("rlp"), mlp_view.removal_cause("mlp")]
            .into_iter()
            .flatten()
            .collect();
        if !causes.is_empty() {
            removed.push(Removal {
                item_id: item.item_id.clone(),
                cause: causes.join("; "),
            });
            continue;
        }
        let (LabelView::Labels(rlp_labels), LabelView::Labels(mlp_labels)) = (rlp_view, mlp_view)
        else {
            unreachable!("non-label views produce removal causes");
        };
        kept.push(BundleItem {
            item: item.clone(),
            split,
            rlp_labels: rlp_labels.clone(),
            mlp_labels: mlp_labels.clone(),
        });
    }
    Ok(DatasetBundle {
        config: config.into(),
        seed: assignment.seed,
        items: kept,
        removed,
    })
}

/// On-disk row of a split file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub item_id: String,
    pub split: Split,
    pub text: String,
    pub golden: GoldenLabels,
    pub rlp_labels: Vec<CanonLabel>,
    pub mlp_labels: Vec<CanonLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenLabels {
    pub dominant: Option<CanonLabel>,
    pub secondary: Option<CanonLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: String,
    pub counts: SplitCounts,
    pub removed: Vec<Removal>,
    pub digest: String,
}

fn split_row(item: &BundleItem) -> SplitRow {
    SplitRow {
        item_id: item.item.item_id.clone(),
        split: item.split,
        text: item.item.user_input.clone(),
        golden: GoldenLabels {
            dominant: item.item.golden_dominant,
            secondary: item.item.golden_secondary,
        },
        rlp_labels: item.rlp_labels.clone(),
        mlp_labels: item.mlp_labels.clone(),
    }
}

/// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl`, and `manifest.json`
/// into `dir`. The manifest digest is the SHA-256 of the three split
/// files concatenated in that order, so any byte change is detectable.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<Manifest, DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut hasher = Sha256::new();
    let mut counts = [0usize; 3];
    for split in Split::ALL {
        let rows: Vec<SplitRow> = bundle.split_items(split).map(split_row).collect();
        counts[split as usize] = rows.len();
        let path = dir.join(format!("{split}.jsonl"));
        jsonl::write_jsonl(&path, &rows)?;
        let bytes = fs::read(&path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        hasher.update(&bytes);
    }
    let manifest = Manifest {
        seed: bundle.seed,
        config: bundle.config.clone(),
        counts: SplitCounts {
            train: counts[0],
            dev: counts[1],
            test: counts[2],
        },
        removed: bundle.removed.clone(),
        digest: hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect(),
    };
    let manifest_path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    jsonl::write_atomic(&manifest_path, body.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join("manifest.json");
    let body = fs::read_to_string(&path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|e| DatasetError::Format {
        path: path.display().to_string(),
        details: e.to_string(),
    })
}

pub fn read_split_file(dir: &Path, split: Split) -> Result<Vec<SplitRow>, DatasetError> {
    Ok(jsonl::read_jsonl(&dir.join(format!("{split}.jsonl")))?)
}

/// Which label view backs the gold side of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoldView {
    Golden,
    Rlp,
    Mlp,
}

impl std::str::FromStr for GoldView {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "golden" => Ok(GoldView::Golden),
            "rlp" => Ok(GoldView::Rlp),
            "mlp" => Ok(GoldView::Mlp),
            other => Err(format!("unknown gold view {other:?}")),
        }
    }
}

/// Full label set of one view; for golden that is dominant plus
/// secondary.
pub fn view_labels(row: &SplitRow, view: GoldView) -> Result<Vec<CanonLabel>, DatasetError> {
    let labels = match view {
        GoldView::Golden => {
            let dominant = row.golden.dominant.ok_or_else(|| DatasetError::MissingGold {
                item_id: row.item_id.clone(),
            })?;
            let mut labels = vec![dominant];
            if let Some(sec) = row.golden.secondary {
                if sec != dominant {
                    labels.push(sec);
                }
            }
            labels
        }
        GoldView::Rlp => row.rlp_labels.clone(),
        GoldView::Mlp => row.mlp_labels.clone(),
    };
    if labels.is_empty() {
        return Err(DatasetError::MissingGold {
            item_id: row.item_id.clone(),
        });
    }
    Ok(labels)
}

/// Single-label projection of a view: the dominant gold label, or the
/// first (highest-ranked) label of an LLM view.
pub fn view_dominant(row: &SplitRow, view: GoldView) -> Result<CanonLabel, DatasetError> {
    Ok(view_labels(row, view)?[0])
}
