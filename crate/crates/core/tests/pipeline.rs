//! Cross-module flows: scripted responses through the engine into
//! consensus and agreement, plus request-independence checks on the mock
//! transcript.

use std::collections::HashMap;

use concord::aggregation::{count_labels, group_records, select_final, ConsensusOutcome};
use concord::annotator::journal::JournalWriter;
use concord::annotator::mock::{MockBackend, MockProfile, ScriptedBackend};
use concord::annotator::{annotate_corpus, AnnotationItem, RetryPolicy, RunConfig};
use concord::reliability::agreement_report;
use concord::taxonomy::{CanonLabel, FallbackCategory, PromptKind};

fn items(ids: &[&str]) -> Vec<AnnotationItem> {
    ids.iter()
        .map(|id| AnnotationItem {
            item_id: (*id).to_owned(),
            user_input: format!("thought {id}"),
            golden_dominant: None,
            golden_secondary: None,
        })
        .collect()
}

fn config(endpoint: &str, prompt: PromptKind, runs: u32) -> RunConfig {
    RunConfig {
        endpoint_url: endpoint.to_owned(),
        model: "mock".into(),
        temperature: 0.5,
        prompt,
        runs_per_item: runs,
        max_retries: 0,
        concurrency: 4,
        seed: 11,
        retry: RetryPolicy::default(),
        failure_budget: 0,
    }
}

async fn annotate(
    backend: &impl concord::annotator::backend::Backend,
    corpus: &[AnnotationItem],
    cfg: &RunConfig,
) -> Vec<concord::annotator::RunRecord> {
    let dir = tempfile::tempdir().unwrap();
    let mut journal = JournalWriter::append_to(&dir.path().join("j.jsonl")).unwrap();
    let (records, _) = annotate_corpus(corpus, cfg, backend, &[], &mut journal, |_| {})
        .await
        .unwrap();
    records
}

/// Five runs that keep naming the same dominant label settle on it even
/// though the secondary label never recurs enough; five scattered runs
/// settle on nothing and fall back.
#[tokio::test]
async fn run_sequences_settle_or_fall_back_through_the_engine() {
    let mut scripts = HashMap::new();
    scripts.insert(
        "settles".to_owned(),
        vec![
            "Personalization, Fortune Telling".to_owned(),
            "Personalization, Fortune Telling".to_owned(),
            "Personalization, Emotional Reasoning".to_owned(),
            "Personalization, Emotional Reasoning".to_owned(),
            "Personalization, Fortune Telling".to_owned(),
        ],
    );
    scripts.insert(
        "undecided".to_owned(),
        vec![
            "No Distortion".to_owned(),
            "No Distortion".to_owned(),
            "No Distortion".to_owned(),
            "Personalization".to_owned(),
            "Personalization".to_owned(),
        ],
    );
    let backend = ScriptedBackend::new(scripts);
    let corpus = items(&["settles", "undecided"]);
    let cfg = config("scripted:", PromptKind::Rlp, 5);
    let records = annotate(&backend, &corpus, &cfg).await;
    assert_eq!(records.len(), 10);

    let groups = group_records(&records);
    let by_id: HashMap<&str, _> = groups
        .iter()
        .map(|(id, group)| {
            (
                id.as_str(),
                select_final(&count_labels(group).unwrap()),
            )
        })
        .collect();

    let settled = &by_id["settles"];
    assert_eq!(
        settled.outcome,
        ConsensusOutcome::Labels(vec![CanonLabel::Personalization])
    );
    assert_eq!(settled.max_repetition, 5);

    let undecided = &by_id["undecided"];
    assert_eq!(
        undecided.outcome,
        ConsensusOutcome::Fallback(FallbackCategory::NotSureIfDistortion)
    );
    assert_eq!(undecided.max_repetition, 3);
}

/// Every request the engine sends is a fresh two-message conversation;
/// nothing from earlier runs leaks into later ones.
#[tokio::test]
async fn requests_carry_no_prior_run_content() {
    let backend = MockBackend::new(MockProfile::IidLabels { p: 0.3 }, 5).with_transcript();
    let corpus = items(&["a", "b", "c"]);
    let cfg = config("mock:iid?p=0.3", PromptKind::Mlp, 4);
    let records = annotate(&backend, &corpus, &cfg).await;
    assert_eq!(records.len(), 12);

    let transcript = backend.transcript();
    assert_eq!(transcript.len(), 12);
    for (item_id, _run, request) in &transcript {
        assert_eq!(request.messages.len(), 2);
        assert_eq!(request.messages[0].role, "system");
        assert_eq!(request.messages[1].role, "user");
        assert_eq!(
            request.messages[1].content,
            format!("User Input: thought {item_id}")
        );
        // No run may see another run's output.
        for record in &records {
            if !record.raw_response.is_empty() {
                assert!(!request.messages[1].content.contains(&record.raw_response));
            }
        }
    }
    // Each (item, run) pair appears exactly once.
    let mut pairs: Vec<(String, u32)> = transcript
        .iter()
        .map(|(id, run, _)| (id.clone(), *run))
        .collect();
    pairs.sort();
    pairs.dedup();
    assert_eq!(pairs.len(), 12);
}

/// A labeler that answers identically on every run is in perfect
/// agreement with itself: kappa hits 1 on every scored label as long as
/// the marginals are mixed.
#[tokio::test]
async fn deterministic_labeler_scores_kappa_one() {
    let ids: Vec<String> = (0..120).map(|i| format!("item-{i:03}")).collect();
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let corpus = items(&id_refs);
    let backend = MockBackend::new(MockProfile::Deterministic, 21);
    let cfg = config("mock:deterministic", PromptKind::Rlp, 5);
    let records = annotate(&backend, &corpus, &cfg).await;

    let groups = group_records(&records);
    let report = agreement_report(&groups).unwrap();
    // 120 hashed items cover enough labels for mixed marginals.
    assert!(report.average.included >= 8, "included {}", report.average.included);
    for result in &report.results {
        if let Some(kappa) = result.kappa {
            assert!((kappa - 1.0).abs() < 1e-12, "{:?}: {kappa}", result.label);
        }
    }
    assert!((report.average.mean - 1.0).abs() < 1e-12);
}

/// Independent per-run draws mean zero true agreement beyond chance;
/// kappa should sit near zero for every label.
#[tokio::test]
async fn independent_runs_score_kappa_near_zero() {
    let ids: Vec<String> = (0..600).map(|i| format!("item-{i:03}")).collect();
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let corpus = items(&id_refs);
    let backend = MockBackend::new(MockProfile::IidLabels { p: 0.3 }, 9);
    let cfg = config("mock:iid?p=0.3", PromptKind::Mlp, 5);
    let records = annotate(&backend, &corpus, &cfg).await;

    let groups = group_records(&records);
    let report = agreement_report(&groups).unwrap();
    for result in &report.results {
        let kappa = result.kappa.expect("mixed votes at N=600");
        assert!(
            kappa.abs() < 0.1,
            "{:?}: kappa {kappa} too far from zero",
            result.label
        );
    }
}
