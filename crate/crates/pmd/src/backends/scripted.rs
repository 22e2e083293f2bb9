use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use pmd_core::probability::{normalize_top_logprobs, two_way_softmax, TokenProbPair};
use pmd_core::prompts::concat_question_answer;
use pmd_core::{CandidateQuestion, CandidateSource, YesNo};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    top_candidates, Backend, BackendError, BackendRequest, BackendResult, CandidateBatch, RequestKind,
};
use crate::error::{EngineError, EngineResult};

pub const FIXTURE_VERSION: u32 = 1;

/// SHA-256 over the canonical JSON of a request, hex encoded.
pub fn lookup_key(request: &BackendRequest) -> String {
    let canonical = serde_json::to_string(request).expect("requests always serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureHeader {
    pub version: u32,
    pub embed_dim: usize,
    /// Entailment probability returned for unscripted NLI queries.
    #[serde(default = "default_prior")]
    pub entail_prior: f64,
}

fn default_prior() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub request: BackendRequest,
    pub response: serde_json::Value,
}

/// Scripted responses keyed by [`lookup_key`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub header: FixtureHeader,
    pub entries: BTreeMap<String, FixtureEntry>,
}

impl Fixture {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            header: FixtureHeader {
                version: FIXTURE_VERSION,
                embed_dim,
                entail_prior: default_prior(),
            },
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, request: BackendRequest, response: serde_json::Value) {
        self.entries
            .insert(lookup_key(&request), FixtureEntry { request, response });
    }

    pub fn get(&self, request: &BackendRequest) -> Option<&serde_json::Value> {
        self.entries.get(&lookup_key(request)).map(|e| &e.response)
    }

    pub fn load(path: &Path) -> EngineResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
        let fixture: Fixture = serde_json::from_str(&text)
            .map_err(|e| EngineError::Validation(format!("{}: {e}", path.display())))?;
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn validate(&self) -> EngineResult<()> {
        if self.header.version != FIXTURE_VERSION {
            return Err(EngineError::Validation(format!(
                "unsupported fixture version {} (expected {FIXTURE_VERSION})",
                self.header.version
            )));
        }
        if self.header.embed_dim == 0 {
            return Err(EngineError::Validation("fixture embed_dim must be positive".into()));
        }
        for (key, entry) in &self.entries {
            let expected = lookup_key(&entry.request);
            if *key != expected {
                return Err(EngineError::Validation(format!(
                    "fixture key {key} does not match its request (expected {expected})"
                )));
            }
        }
        Ok(())
    }

    /// Compact JSON with one entry per line.
    pub fn to_json(&self) -> String {
        let mut s = String::from("{\"header\":");
        s.push_str(&serde_json::to_string(&self.header).expect("header serializes"));
        s.push_str(",\"entries\":{");
        for (i, (key, entry)) in self.entries.iter().enumerate() {
            s.push_str(if i == 0 { "\n" } else { ",\n" });
            s.push_str(&serde_json::to_string(key).expect("key serializes"));
            s.push(':');
            s.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        }
        s.push_str("\n}}\n");
        s
    }

    pub fn save(&self, path: &Path) -> EngineResult<()> {
        fs::write(path, self.to_json()).map_err(|e| EngineError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct FixtureCandidate {
    pub text: String,
    pub log_likelihood: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct VqgResponse {
    #[serde(default)]
    pub candidates: Vec<FixtureCandidate>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unconstrained: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_content: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct ProbabilityResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub content_filtered: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct RephraseResponse {
    #[serde(default)]
    pub statement: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct EntailResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entail_logit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contra_logit: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct EmbedResponse {
    pub vector: Vec<f64>,
}

/// Builds fixtures in code; used by tests and the synthetic generator.
#[derive(Debug, Clone)]
pub struct FixtureBuilder {
    fixture: Fixture,
}

impl FixtureBuilder {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            fixture: Fixture::new(embed_dim),
        }
    }

    pub fn entail_prior(mut self, prior: f64) -> Self {
        self.fixture.header.entail_prior = prior;
        self
    }

    fn put<T: Serialize>(&mut self, request: BackendRequest, response: T) -> &mut Self {
        self.fixture
            .insert(request, serde_json::to_value(response).expect("response serializes"));
        self
    }

    pub fn vqg(&mut self, prompt: &str, max_candidates: usize, candidates: &[(&str, f64)]) -> &mut Self {
        let response = VqgResponse {
            candidates: candidates
                .iter()
                .map(|(t, ll)| FixtureCandidate {
                    text: (*t).into(),
                    log_likelihood: *ll,
                    token_count: None,
                })
                .collect(),
            ..Default::default()
        };
        self.put(
            BackendRequest::Vqg {
                prompt: prompt.into(),
                max_candidates,
            },
            response,
        )
    }

    pub fn vqg_unconstrained(&mut self, prompt: &str, max_candidates: usize, candidates: &[(&str, f64)]) -> &mut Self {
        let response = VqgResponse {
            candidates: candidates
                .iter()
                .map(|(t, ll)| FixtureCandidate {
                    text: (*t).into(),
                    log_likelihood: *ll,
                    token_count: None,
                })
                .collect(),
            unconstrained: true,
            no_content: false,
        };
        self.put(
            BackendRequest::Vqg {
                prompt: prompt.into(),
                max_candidates,
            },
            response,
        )
    }

    pub fn vqg_no_content(&mut self, prompt: &str, max_candidates: usize) -> &mut Self {
        self.put(
            BackendRequest::Vqg {
                prompt: prompt.into(),
                max_candidates,
            },
            VqgResponse {
                no_content: true,
                ..Default::default()
            },
        )
    }

    pub fn vqa(&mut self, question: &str, frame_ref: &str, yes_probability: f64) -> &mut Self {
        self.put(
            BackendRequest::Vqa {
                question: question.into(),
                frame_ref: frame_ref.into(),
            },
            ProbabilityResponse {
                yes_probability: Some(yes_probability),
                ..Default::default()
            },
        )
    }

    pub fn success(&mut self, prompt: &str, frame_ref: &str, yes_probability: f64) -> &mut Self {
        self.put(
            BackendRequest::SuccessClassify {
                prompt: prompt.into(),
                frame_ref: frame_ref.into(),
            },
            ProbabilityResponse {
                yes_probability: Some(yes_probability),
                ..Default::default()
            },
        )
    }

    pub fn success_logprobs(&mut self, prompt: &str, frame_ref: &str, pair: TokenProbPair) -> &mut Self {
        self.put(
            BackendRequest::SuccessClassify {
                prompt: prompt.into(),
                frame_ref: frame_ref.into(),
            },
            ProbabilityResponse {
                yes_logprob: pair.yes_logprob,
                no_logprob: pair.no_logprob,
                ..Default::default()
            },
        )
    }

    pub fn success_filtered(&mut self, prompt: &str, frame_ref: &str) -> &mut Self {
        self.put(
            BackendRequest::SuccessClassify {
                prompt: prompt.into(),
                frame_ref: frame_ref.into(),
            },
            ProbabilityResponse {
                content_filtered: true,
                ..Default::default()
            },
        )
    }

    pub fn rephrase(&mut self, question: &str, answer: YesNo, statement: Option<&str>) -> &mut Self {
        self.put(
            BackendRequest::Rephrase {
                question: question.into(),
                answer,
            },
            RephraseResponse {
                statement: statement.map(Into::into),
            },
        )
    }

    pub fn entail(&mut self, premise: &str, hypothesis: &str, probability: f64) -> &mut Self {
        self.put(
            BackendRequest::Entail {
                premise: premise.into(),
                hypothesis: hypothesis.into(),
            },
            EntailResponse {
                probability: Some(probability),
                ..Default::default()
            },
        )
    }

    pub fn entail_logits(&mut self, premise: &str, hypothesis: &str, entail_logit: f64, contra_logit: f64) -> &mut Self {
        self.put(
            BackendRequest::Entail {
                premise: premise.into(),
                hypothesis: hypothesis.into(),
            },
            EntailResponse {
                probability: None,
                entail_logit: Some(entail_logit),
                contra_logit: Some(contra_logit),
            },
        )
    }

    pub fn embed(&mut self, text: &str, vector: Vec<f64>) -> &mut Self {
        self.put(BackendRequest::Embed { text: text.into() }, EmbedResponse { vector })
    }

    pub fn build(&self) -> Fixture {
        self.fixture.clone()
    }
}

/// Per-kind count of lookups that fell back to defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissCounts {
    pub vqg: usize,
    pub vqa: usize,
    pub success_classify: usize,
    pub rephrase: usize,
    pub embed: usize,
    pub entail: usize,
}

impl MissCounts {
    pub fn total(&self) -> usize {
        self.vqg + self.vqa + self.success_classify + self.rephrase + self.embed + self.entail
    }
}

/// Fixture-driven backend. Read-only after load and fully deterministic;
/// unscripted requests get kind-specific defaults and are counted as misses.
#[derive(Debug)]
pub struct ScriptedBackend {
    fixture: Fixture,
    calls: [AtomicUsize; 6],
    misses: [AtomicUsize; 6],
}

impl ScriptedBackend {
    pub fn new(fixture: Fixture) -> Self {
        Self {
            fixture,
            calls: Default::default(),
            misses: Default::default(),
        }
    }

    pub fn from_path(path: &Path) -> EngineResult<Self> {
        Ok(Self::new(Fixture::load(path)?))
    }

    pub fn fixture(&self) -> &Fixture {
        &self.fixture
    }

    pub fn calls(&self, kind: RequestKind) -> usize {
        self.calls[kind.index()].load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> MissCounts {
        let m = |k: RequestKind| self.misses[k.index()].load(Ordering::Relaxed);
        MissCounts {
            vqg: m(RequestKind::Vqg),
            vqa: m(RequestKind::Vqa),
            success_classify: m(RequestKind::SuccessClassify),
            rephrase: m(RequestKind::Rephrase),
            embed: m(RequestKind::Embed),
            entail: m(RequestKind::Entail),
        }
    }

    fn lookup<T: serde::de::DeserializeOwned>(&self, request: &BackendRequest) -> BackendResult<Option<T>> {
        let kind = request.kind();
        self.calls[kind.index()].fetch_add(1, Ordering::Relaxed);
        match self.fixture.get(request) {
            Some(value) => serde_json::from_value(value.clone())
                .map(Some)
                .map_err(|e| BackendError::InvalidResponse(format!("fixture entry for {kind:?}: {e}"))),
            None => {
                self.misses[kind.index()].fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    fn probability(&self, request: BackendRequest) -> BackendResult<f64> {
        let Some(r) = self.lookup::<ProbabilityResponse>(&request)? else {
            return Ok(0.5);
        };
        if r.content_filtered {
            return Err(BackendError::ContentFiltered(format!("{:?} request", request.kind())));
        }
        let p = r
            .yes_probability
            .unwrap_or_else(|| normalize_top_logprobs(TokenProbPair::new(r.yes_logprob, r.no_logprob)));
        check_unit(p)
    }
}

fn check_unit(p: f64) -> BackendResult<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(BackendError::InvalidResponse(format!("probability {p} outside [0, 1]")))
    }
}

/// Deterministic pseudo-embedding derived from the text hash, in [-1, 1].
pub(crate) fn hashed_vector(text: &str, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut counter = 0u32;
    while out.len() < dim {
        let mut h = Sha256::new();
        h.update(b"embed\0");
        h.update(counter.to_le_bytes());
        h.update(text.as_bytes());
        for chunk in h.finalize().chunks_exact(4) {
            if out.len() == dim {
                break;
            }
            let v = u32::from_le_bytes(chunk.try_into().unwrap());
            out.push(v as f64 / u32::MAX as f64 * 2.0 - 1.0);
        }
        counter += 1;
    }
    out
}

impl Backend for ScriptedBackend {
    fn generate_candidates(&self, prompt: &str, max_candidates: usize) -> BackendResult<CandidateBatch> {
        let request = BackendRequest::Vqg {
            prompt: prompt.into(),
            max_candidates,
        };
        let Some(r) = self.lookup::<VqgResponse>(&request)? else {
            return Ok(CandidateBatch::default());
        };
        if r.no_content {
            return Ok(CandidateBatch {
                candidates: Vec::new(),
                skip: true,
            });
        }
        let candidates = r
            .candidates
            .into_iter()
            .filter(|c| !c.text.trim().is_empty())
            .map(|c| {
                let mut q = CandidateQuestion::new(c.text, c.log_likelihood, CandidateSource::DialogContext);
                if let Some(n) = c.token_count {
                    q.token_count = n.max(1);
                }
                q.unconstrained = r.unconstrained;
                q
            })
            .collect();
        Ok(CandidateBatch {
            candidates: top_candidates(candidates, max_candidates),
            skip: false,
        })
    }

    fn answer_yes_probability(&self, question: &str, frame_ref: &str) -> BackendResult<f64> {
        self.probability(BackendRequest::Vqa {
            question: question.into(),
            frame_ref: frame_ref.into(),
        })
    }

    fn success_yes_probability(&self, prompt: &str, frame_ref: &str) -> BackendResult<f64> {
        self.probability(BackendRequest::SuccessClassify {
            prompt: prompt.into(),
            frame_ref: frame_ref.into(),
        })
    }

    fn rephrase(&self, question: &str, answer: YesNo) -> BackendResult<String> {
        let request = BackendRequest::Rephrase {
            question: question.into(),
            answer,
        };
        let statement = self
            .lookup::<RephraseResponse>(&request)?
            .and_then(|r| r.statement)
            .filter(|s| !s.trim().is_empty());
        Ok(statement.unwrap_or_else(|| concat_question_answer(question, answer)))
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> BackendResult<f64> {
        let request = BackendRequest::Entail {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        };
        let Some(r) = self.lookup::<EntailResponse>(&request)? else {
            return Ok(self.fixture.header.entail_prior);
        };
        match (r.probability, r.entail_logit, r.contra_logit) {
            (Some(p), _, _) => check_unit(p),
            (None, Some(e), Some(c)) => Ok(two_way_softmax(e, c)),
            _ => Err(BackendError::InvalidResponse(
                "entailment entry needs `probability` or both logits".into(),
            )),
        }
    }

    fn embed(&self, text: &str) -> BackendResult<Vec<f64>> {
        let request = BackendRequest::Embed { text: text.into() };
        let dim = self.fixture.header.embed_dim;
        match self.lookup::<EmbedResponse>(&request)? {
            Some(r) if r.vector.len() == dim => Ok(r.vector),
            Some(r) => Err(BackendError::InvalidResponse(format!(
                "embedding of dimension {} (fixture declares {dim})",
                r.vector.len()
            ))),
            None => Ok(hashed_vector(text, dim)),
        }
    }
}
