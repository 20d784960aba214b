//! `concord evaluate` and `concord mc-verify`: chance-normalized scoring
//! of prediction files against a gold view, and empirical verification of
//! the analytic baseline.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use concord::datasets::{read_split_file, view_dominant, view_labels, GoldView, Split};
use concord::effectsize::{
    evaluate, kappa_f1, monte_carlo_random_f1, prevalences_from_gold, random_f1_multiclass,
    random_f1_multilabel, read_label_file, ClassDistribution, EvalReport, ItemLabels,
    McSettings, Task,
};
use concord::jsonl;

use crate::config::Settings;
use crate::error::CliError;
use crate::events::EventLog;

#[derive(Debug, Clone)]
pub struct GoldSource {
    pub gold: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub split: Option<String>,
    pub gold_view: Option<String>,
}

impl GoldSource {
    /// Resolves gold rows either from a label file or from one split of a
    /// persisted bundle under the chosen label view.
    pub fn load(&self, task: Task) -> Result<Vec<ItemLabels>, CliError> {
        match (&self.gold, &self.bundle) {
            (Some(path), None) => Ok(read_label_file(path, task)?),
            (None, Some(dir)) => {
                let split: Split = self
                    .split
                    .as_deref()
                    .unwrap_or("test")
                    .parse()
                    .map_err(CliError::Config)?;
                let view: GoldView = self
                    .gold_view
                    .as_deref()
                    .unwrap_or("golden")
                    .parse()
                    .map_err(CliError::Config)?;
                let rows = read_split_file(dir, split)?;
                let mut gold = Vec::with_capacity(rows.len());
                for row in &rows {
                    let labels = match task {
                        Task::Multiclass => vec![view_dominant(row, view)?],
                        Task::Binary | Task::Multilabel => view_labels(row, view)?,
                    };
                    gold.push(ItemLabels::new(row.item_id.clone(), labels));
                }
                Ok(gold)
            }
            _ => Err(CliError::Config(
                "provide exactly one gold source: --gold or --bundle".into(),
            )),
        }
    }
}

fn parse_task(raw: &str) -> Result<Task, CliError> {
    raw.parse().map_err(CliError::Config)
}

fn write_and_print(
    settings: &Settings,
    log: &EventLog,
    report: &EvalReport,
) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(report).expect("report serializes");
    println!("{body}");
    let out_dir = settings.out_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join(format!("eval-{}.json", report.task));
    jsonl::write_atomic(&path, body.as_bytes())?;
    log.info(
        "evaluate.complete",
        json!({
            "report": path.display().to_string(),
            // Display value; the stored report keeps full precision.
            "kappa_f1": format!("{:.3}", report.kappa_f1),
        }),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    settings: &Settings,
    log: &EventLog,
    task: &str,
    source: &GoldSource,
    pred: Option<&Path>,
    f1: Option<f64>,
    f1_random: Option<f64>,
    mc_repeats: Option<u32>,
    mc_seed: Option<u64>,
) -> Result<(), CliError> {
    let task = parse_task(task)?;

    // Replay mode: normalize an already-computed score pair.
    if f1.is_some() || f1_random.is_some() {
        let (Some(f1), Some(f1_random)) = (f1, f1_random) else {
            return Err(CliError::Config(
                "--f1 and --f1-random must be given together".into(),
            ));
        };
        let report = EvalReport {
            task,
            f1,
            f1_random_analytic: f1_random,
            f1_random_mc: None,
            kappa_f1: kappa_f1(f1, f1_random)?,
        };
        return write_and_print(settings, log, &report);
    }

    let gold = source.load(task)?;
    let pred_path = pred.ok_or_else(|| CliError::Config("--pred is not set".into()))?;
    let predictions = read_label_file(pred_path, task)?;
    let mc = mc_repeats.map(|repeats| McSettings {
        repeats,
        seed: mc_seed.unwrap_or_else(|| settings.seed()),
    });
    let report = evaluate(&gold, &predictions, task, mc)?;
    write_and_print(settings, log, &report)
}

pub fn mc_verify(
    settings: &Settings,
    log: &EventLog,
    task: &str,
    source: &GoldSource,
    repeats: Option<u32>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let task = parse_task(task)?;
    let gold = source.load(task)?;
    let analytic = match task {
        Task::Binary | Task::Multiclass => {
            random_f1_multiclass(&ClassDistribution::from_gold(&gold, task)?)
        }
        Task::Multilabel => random_f1_multilabel(&prevalences_from_gold(&gold)?)?,
    };
    let repeats = repeats.unwrap_or(1000);
    let seed = seed.unwrap_or_else(|| settings.seed());
    let mc = monte_carlo_random_f1(&gold, task, repeats, seed)?;
    let std_error = mc.std / f64::from(repeats).sqrt();
    let delta = mc.mean - analytic;
    let body = json!({
        "task": task,
        "f1_random_analytic": analytic,
        "f1_random_mc": mc,
        "delta": delta,
        "std_error": std_error,
        "within_3_se": delta.abs() <= 3.0 * std_error,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&body).expect("verification serializes")
    );
    log.info(
        "mc_verify.complete",
        json!({ "delta": delta, "std_error": std_error }),
    );
    Ok(())
}
