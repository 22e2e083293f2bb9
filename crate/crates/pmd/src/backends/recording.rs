use std::sync::Mutex;

use pmd_core::YesNo;
use serde::Serialize;

use super::scripted::{
    EmbedResponse, EntailResponse, FixtureCandidate, ProbabilityResponse, RephraseResponse, VqgResponse,
};
use super::{Backend, BackendError, BackendRequest, BackendResult, CandidateBatch};
use super::Fixture;

/// Forwards every call to an inner backend and stores the exchange as a
/// scripted fixture entry. Replaying the captured fixture reproduces the
/// inner backend's answers exactly.
pub struct RecordingBackend<B> {
    inner: B,
    fixture: Mutex<Fixture>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, embed_dim: usize) -> Self {
        Self::with_fixture(inner, Fixture::new(embed_dim))
    }

    /// Appends to an existing fixture.
    pub fn with_fixture(inner: B, fixture: Fixture) -> Self {
        Self {
            inner,
            fixture: Mutex::new(fixture),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn fixture(&self) -> Fixture {
        self.fixture.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn into_fixture(self) -> Fixture {
        self.fixture.into_inner().unwrap_or_else(|p| p.into_inner())
    }

    fn store<T: Serialize>(&self, request: BackendRequest, response: &T) {
        let value = serde_json::to_value(response).expect("response serializes");
        self.fixture
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(request, value);
    }

    fn probability(
        &self,
        request: BackendRequest,
        result: BackendResult<f64>,
    ) -> BackendResult<f64> {
        match &result {
            Ok(p) => self.store(
                request,
                &ProbabilityResponse {
                    yes_probability: Some(*p),
                    ..Default::default()
                },
            ),
            Err(BackendError::ContentFiltered(_)) => self.store(
                request,
                &ProbabilityResponse {
                    content_filtered: true,
                    ..Default::default()
                },
            ),
            Err(_) => {}
        }
        result
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn generate_candidates(&self, prompt: &str, max_candidates: usize) -> BackendResult<CandidateBatch> {
        let batch = self.inner.generate_candidates(prompt, max_candidates)?;
        let response = VqgResponse {
            candidates: batch
                .candidates
                .iter()
                .map(|c| FixtureCandidate {
                    text: c.text.clone(),
                    log_likelihood: c.log_likelihood,
                    token_count: Some(c.token_count),
                })
                .collect(),
            unconstrained: batch.candidates.iter().any(|c| c.unconstrained),
            no_content: batch.skip,
        };
        self.store(
            BackendRequest::Vqg {
                prompt: prompt.into(),
                max_candidates,
            },
            &response,
        );
        Ok(batch)
    }

    fn answer_yes_probability(&self, question: &str, frame_ref: &str) -> BackendResult<f64> {
        let result = self.inner.answer_yes_probability(question, frame_ref);
        self.probability(
            BackendRequest::Vqa {
                question: question.into(),
                frame_ref: frame_ref.into(),
            },
            result,
        )
    }

    fn success_yes_probability(&self, prompt: &str, frame_ref: &str) -> BackendResult<f64> {
        let result = self.inner.success_yes_probability(prompt, frame_ref);
        self.probability(
            BackendRequest::SuccessClassify {
                prompt: prompt.into(),
                frame_ref: frame_ref.into(),
            },
            result,
        )
    }

    fn rephrase(&self, question: &str, answer: YesNo) -> BackendResult<String> {
        let statement = self.inner.rephrase(question, answer)?;
        self.store(
            BackendRequest::Rephrase {
                question: question.into(),
                answer,
            },
            &RephraseResponse {
                statement: Some(statement.clone()),
            },
        );
        Ok(statement)
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> BackendResult<f64> {
        let p = self.inner.entail(premise, hypothesis)?;
        self.store(
            BackendRequest::Entail {
                premise: premise.into(),
                hypothesis: hypothesis.into(),
            },
            &EntailResponse {
                probability: Some(p),
                ..Default::default()
            },
        );
        Ok(p)
    }

    fn embed(&self, text: &str) -> BackendResult<Vec<f64>> {
        let vector = self.inner.embed(text)?;
        self.store(
            BackendRequest::Embed { text: text.into() },
            &EmbedResponse {
                vector: vector.clone(),
            },
        );
        Ok(vector)
    }
}
