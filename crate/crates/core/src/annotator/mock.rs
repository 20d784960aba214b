//! Offline backends: seeded stochastic labelers and a scripted replayer.
//!
//! Selected through the `mock:` endpoint scheme so every pipeline command
//! can run without network access. Responses depend only on the backend
//! seed and the (item, run) pair, never on scheduling order.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Mutex;

use async_trait::async_trait;
use rand::Rng;
use thiserror::Error;

use super::backend::{Backend, BackendError, CallContext, ChatRequest};
use crate::seed::{derive_rng, stable_hash};
use crate::taxonomy::{CanonLabel, AGREEMENT_LABELS};

#[derive(Debug, Clone, PartialEq)]
pub enum MockProfile {
    /// Each item gets one fixed label on every run (perfect agreement).
    Deterministic,
    /// Each of the ten distortions is present independently with
    /// probability `p` per run; an empty draw reads `No Distortion`.
    /// Presence is independent across runs, so agreement is at chance.
    IidLabels { p: f64 },
    /// One label per run drawn from a weighted distribution.
    Categorical { weights: Vec<(CanonLabel, f64)> },
}

/// Seeded simulator implementing the chat backend contract.
pub struct MockBackend {
    profile: MockProfile,
    seed: u64,
    transcript: Option<Mutex<Vec<(String, u32, ChatRequest)>>>,
}

impl MockBackend {
    pub fn new(profile: MockProfile, seed: u64) -> Self {
        MockBackend {
            profile,
            seed,
            transcript: None,
        }
    }

    /// Enables request capture; used by tests that assert on what was sent.
    pub fn with_transcript(mut self) -> Self {
        self.transcript = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn transcript(&self) -> Vec<(String, u32, ChatRequest)> {
        self.transcript
            .as_ref()
            .map(|t| t.lock().unwrap().clone())
            .unwrap_or_default()
    }

    fn respond(&self, ctx: CallContext<'_>) -> String {
        match &self.profile {
            MockProfile::Deterministic => {
                let idx = (stable_hash(ctx.item_id.as_bytes()) % 11) as usize;
                AGREEMENT_LABELS[idx].as_str().to_owned()
            }
            MockProfile::IidLabels { p } => {
                let mut rng = derive_rng(self.seed, ctx.item_id, u64::from(ctx.run_index));
                let drawn: Vec<&str> = CanonLabel::DISTORTIONS
                    .iter()
                    .filter(|_| rng.gen_bool(*p))
                    .map(|l| l.as_str())
                    .collect();
                if drawn.is_empty() {
                    CanonLabel::NoDistortion.as_str().to_owned()
                } else {
                    drawn.join(", ")
                }
            }
            MockProfile::Categorical { weights } => {
                let mut rng = derive_rng(self.seed, ctx.item_id, u64::from(ctx.run_index));
                let total: f64 = weights.iter().map(|(_, w)| w).sum();
                let mut draw = rng.gen_range(0.0..total);
                for (label, w) in weights {
                    if draw < *w {
                        return label.as_str().to_owned();
                    }
                    draw -= w;
                }
                weights.last().expect("weights validated non-empty").0.as_str().to_owned()
            }
        }
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn complete(
        &self,
        request: &ChatRequest,
        ctx: CallContext<'_>,
    ) -> Result<String, BackendError> {
        if let Some(t) = &self.transcript {
            t.lock()
                .unwrap()
                .push((ctx.item_id.to_owned(), ctx.run_index, request.clone()));
        }
        Ok(self.respond(ctx))
    }
}

/// Replays pre-recorded responses keyed by item id and run index. Lets
/// tests and demos feed exact run sequences through the real engine.
pub struct ScriptedBackend {
    responses: HashMap<String, Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(responses: HashMap<String, Vec<String>>) -> Self {
        ScriptedBackend { responses }
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    async fn complete(
        &self,
        _request: &ChatRequest,
        ctx: CallContext<'_>,
    ) -> Result<String, BackendError> {
        self.responses
            .get(ctx.item_id)
            .and_then(|runs| runs.get(ctx.run_index as usize))
            .cloned()
            .ok_or_else(|| {
                BackendError::Rejected {
                    status: 404,
                    message: format!(
                        "no scripted response for item {} run {}",
                        ctx.item_id, ctx.run_index
                    ),
                }
            })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MockUrlError {
    #[error("unknown mock profile {0:?}")]
    UnknownProfile(String),
    #[error("bad mock parameter {0:?}")]
    BadParameter(String),
}

/// Recognizes `mock:` endpoint URLs.
///
/// Forms: `mock:deterministic`, `mock:iid?p=0.3`,
/// `mock:categorical?weights=Personalization:0.5;No Distortion:0.5`.
/// Returns `None` for non-mock URLs.
pub fn parse_mock_url(url: &str) -> Option<Result<MockProfile, MockUrlError>> {
    let rest = url.strip_prefix("mock:")?;
    Some(parse_profile(rest))
}

fn parse_profile(rest: &str) -> Result<MockProfile, MockUrlError> {
    let (name, query) = match rest.split_once('?') {
        Some((n, q)) => (n, Some(q)),
        None => (rest, None),
    };
    match name {
        "deterministic" => Ok(MockProfile::Deterministic),
        "iid" => {
            let q = query.unwrap_or("");
            let p_str = q
                .strip_prefix("p=")
                .ok_or_else(|| MockUrlError::BadParameter(q.to_owned()))?;
            let p: f64 = p_str
                .parse()
                .map_err(|_| MockUrlError::BadParameter(p_str.to_owned()))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(MockUrlError::BadParameter(format!("p={p} out of [0,1]")));
            }
            Ok(MockProfile::IidLabels { p })
        }
        "categorical" => {
            let q = query.unwrap_or("");
            let spec = q
                .strip_prefix("weights=")
                .ok_or_else(|| MockUrlError::BadParameter(q.to_owned()))?;
            let mut weights = Vec::new();
            for pair in spec.split(';').filter(|s| !s.trim().is_empty()) {
                let (label, w) = pair
                    .rsplit_once(':')
                    .ok_or_else(|| MockUrlError::BadParameter(pair.to_owned()))?;
                let label = CanonLabel::from_str(label.trim())
                    .map_err(|_| MockUrlError::BadParameter(pair.to_owned()))?;
                let w: f64 = w
                    .trim()
                    .parse()
                    .map_err(|_| MockUrlError::BadParameter(pair.to_owned()))?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(MockUrlError::BadParameter(pair.to_owned()));
                }
                weights.push((label, w));
            }
            if weights.is_empty() {
                return Err(MockUrlError::BadParameter("weights list is empty".into()));
            }
            Ok(MockProfile::Categorical { weights })
        }
        other => Err(MockUrlError::UnknownProfile(other.to_owned())),
    }
}
