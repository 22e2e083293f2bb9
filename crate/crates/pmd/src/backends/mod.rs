//! Model capabilities behind one interface: question generation, question
//! answering, success classification, rephrasing, entailment and embedding.
//!
//! [`HttpBackend`] talks to OpenAI-compatible chat servers plus two small
//! JSON endpoints for NLI and embeddings. [`ScriptedBackend`] answers from a
//! fixture file and never touches the network. [`RecordingBackend`] wraps
//! any backend and captures its traffic as a fixture.

mod http;
mod recording;
mod scripted;
mod synthetic;

use std::sync::Arc;

use pmd_core::{CandidateQuestion, YesNo};
use serde::{Deserialize, Serialize};

pub use http::{BackendConfig, HttpBackend, ReplayLog};
pub use recording::RecordingBackend;
pub use scripted::{
    lookup_key, Fixture, FixtureBuilder, FixtureEntry, FixtureHeader, MissCounts, ScriptedBackend,
    FIXTURE_VERSION,
};
pub use synthetic::{SyntheticBackend, SyntheticParams};

/// Number of candidates requested from question generation.
pub const VQG_CANDIDATES: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    /// Transport failure or server error after all retries.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// The provider refused the request (content filter); the example is
    /// skipped rather than failed.
    #[error("request rejected by content filter: {0}")]
    ContentFiltered(String),
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
}

impl BackendError {
    pub fn is_skip(&self) -> bool {
        matches!(self, BackendError::ContentFiltered(_))
    }
}

pub type BackendResult<T> = Result<T, BackendError>;

/// Result of one question-generation call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateBatch {
    /// Descending by log-likelihood, at most the requested count.
    pub candidates: Vec<CandidateQuestion>,
    /// The backend returned no content twice; the example must be skipped.
    #[serde(default)]
    pub skip: bool,
}

/// Canonical request descriptor. Its JSON form (kind tag first, fields in
/// declaration order) is what scripted fixtures are keyed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendRequest {
    Vqg { prompt: String, max_candidates: usize },
    Vqa { question: String, frame_ref: String },
    SuccessClassify { prompt: String, frame_ref: String },
    Rephrase { question: String, answer: YesNo },
    Embed { text: String },
    Entail { premise: String, hypothesis: String },
}

impl BackendRequest {
    pub fn kind(&self) -> RequestKind {
        match self {
            BackendRequest::Vqg { .. } => RequestKind::Vqg,
            BackendRequest::Vqa { .. } => RequestKind::Vqa,
            BackendRequest::SuccessClassify { .. } => RequestKind::SuccessClassify,
            BackendRequest::Rephrase { .. } => RequestKind::Rephrase,
            BackendRequest::Embed { .. } => RequestKind::Embed,
            BackendRequest::Entail { .. } => RequestKind::Entail,
        }
    }

    /// Question generation is text-only; answering and success
    /// classification always see the frame.
    pub fn frame_ref(&self) -> Option<&str> {
        match self {
            BackendRequest::Vqa { frame_ref, .. } | BackendRequest::SuccessClassify { frame_ref, .. } => {
                Some(frame_ref)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Vqg,
    Vqa,
    SuccessClassify,
    Rephrase,
    Embed,
    Entail,
}

impl RequestKind {
    pub const ALL: [RequestKind; 6] = [
        RequestKind::Vqg,
        RequestKind::Vqa,
        RequestKind::SuccessClassify,
        RequestKind::Rephrase,
        RequestKind::Embed,
        RequestKind::Entail,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Uniform model interface. Implementations are shared across worker
/// threads.
pub trait Backend: Send + Sync {
    fn generate_candidates(&self, prompt: &str, max_candidates: usize) -> BackendResult<CandidateBatch>;

    /// Normalized probability of `Yes` for a question about the frame.
    fn answer_yes_probability(&self, question: &str, frame_ref: &str) -> BackendResult<f64>;

    /// Normalized probability of `Yes` for the success-classification prompt.
    fn success_yes_probability(&self, prompt: &str, frame_ref: &str) -> BackendResult<f64>;

    /// Declarative statement for a sure question/answer pair. Falls back to
    /// concatenation when the model gives no content.
    fn rephrase(&self, question: &str, answer: YesNo) -> BackendResult<String>;

    /// Entailment probability over {entailment, contradiction}.
    fn entail(&self, premise: &str, hypothesis: &str) -> BackendResult<f64>;

    fn embed(&self, text: &str) -> BackendResult<Vec<f64>>;
}

macro_rules! forward_backend {
    ($ty:ty) => {
        impl<B: Backend + ?Sized> Backend for $ty {
            fn generate_candidates(&self, prompt: &str, max_candidates: usize) -> BackendResult<CandidateBatch> {
                (**self).generate_candidates(prompt, max_candidates)
            }
            fn answer_yes_probability(&self, question: &str, frame_ref: &str) -> BackendResult<f64> {
                (**self).answer_yes_probability(question, frame_ref)
            }
            fn success_yes_probability(&self, prompt: &str, frame_ref: &str) -> BackendResult<f64> {
                (**self).success_yes_probability(prompt, frame_ref)
            }
            fn rephrase(&self, question: &str, answer: YesNo) -> BackendResult<String> {
                (**self).rephrase(question, answer)
            }
            fn entail(&self, premise: &str, hypothesis: &str) -> BackendResult<f64> {
                (**self).entail(premise, hypothesis)
            }
            fn embed(&self, text: &str) -> BackendResult<Vec<f64>> {
                (**self).embed(text)
            }
        }
    };
}

forward_backend!(&B);
forward_backend!(Box<B>);
forward_backend!(Arc<B>);

/// Sorts candidates by descending log-likelihood (text breaks ties) and
/// keeps the best `max`.
pub(crate) fn top_candidates(mut candidates: Vec<CandidateQuestion>, max: usize) -> Vec<CandidateQuestion> {
    candidates.sort_by(|a, b| {
        b.log_likelihood
            .total_cmp(&a.log_likelihood)
            .then_with(|| a.text.cmp(&b.text))
    });
    candidates.truncate(max);
    candidates
}
