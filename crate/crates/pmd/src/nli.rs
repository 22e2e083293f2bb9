//! NLI success probability `p_e` over a rationale, with memoized rephrasing
//! and entailment.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use pmd_core::metrics::NliJudge;
use pmd_core::{QaPair, YesNo};

use crate::backends::{Backend, BackendError};
use crate::error::{EngineError, EngineResult};

/// `The procedure "<T>" has been successfully executed.`
pub fn hypothesis_for(procedure_text: &str) -> EngineResult<String> {
    if procedure_text.trim().is_empty() {
        return Err(EngineError::Validation("procedure text is empty".into()));
    }
    Ok(format!("The procedure \"{procedure_text}\" has been successfully executed."))
}

/// Ordered concatenation of statements, each terminated by a period.
pub fn join_premise<S: AsRef<str>>(statements: &[S]) -> String {
    statements
        .iter()
        .map(|s| {
            let s = s.as_ref().trim();
            if s.ends_with('.') {
                s.to_string()
            } else {
                format!("{s}.")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// [`NliJudge`] backed by a [`Backend`]. Both rephrasings and entailment
/// probabilities are cached for the lifetime of the judge.
pub struct CachedNliJudge<B> {
    backend: B,
    statements: RwLock<HashMap<(String, YesNo), String>>,
    entailments: RwLock<HashMap<(String, String), f64>>,
    entail_calls: AtomicUsize,
}

impl<B: Backend> CachedNliJudge<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            statements: RwLock::default(),
            entailments: RwLock::default(),
            entail_calls: AtomicUsize::new(0),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    /// Entailment requests that reached the backend.
    pub fn entail_calls(&self) -> usize {
        self.entail_calls.load(Ordering::Relaxed)
    }

    pub fn cached_entailments(&self) -> usize {
        self.entailments.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn statement(&self, question: &str, answer: YesNo) -> Result<String, BackendError> {
        let key = (question.to_string(), answer);
        if let Some(s) = self.statements.read().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(s.clone());
        }
        let s = self.backend.rephrase(question, answer)?;
        self.statements
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, s.clone());
        Ok(s)
    }

    pub fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        let key = (premise.to_string(), hypothesis.to_string());
        if let Some(p) = self.entailments.read().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(*p);
        }
        self.entail_calls.fetch_add(1, Ordering::Relaxed);
        let p = self.backend.entail(premise, hypothesis)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(BackendError::InvalidResponse(format!("entailment probability {p} outside [0, 1]")));
        }
        self.entailments
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, p);
        Ok(p)
    }
}

impl<B: Backend> NliJudge for CachedNliJudge<B> {
    type Error = EngineError;

    fn success_probability(&self, procedure: &str, qa_pairs: &[QaPair]) -> Result<f64, EngineError> {
        let hypothesis = hypothesis_for(procedure)?;
        let statements = qa_pairs
            .iter()
            .map(|qa| self.statement(&qa.question, qa.answer))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.entail(&join_premise(&statements), &hypothesis)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{FixtureBuilder, RequestKind, ScriptedBackend};

    #[test]
    fn hypothesis_template() {
        assert_eq!(
            hypothesis_for("Fold the cut piece of cloth.").unwrap(),
            "The procedure \"Fold the cut piece of cloth.\" has been successfully executed."
        );
        assert_eq!(
            hypothesis_for("Say \"hi\"").unwrap(),
            "The procedure \"Say \"hi\"\" has been successfully executed."
        );
        assert!(hypothesis_for("").is_err());
    }

    #[test]
    fn premise_join() {
        assert_eq!(join_premise(&["A is on", "B is off."]), "A is on. B is off.");
        assert_eq!(join_premise::<&str>(&[]), "");
    }

    #[test]
    fn cached_probability() {
        let proc = "Put the bowl on the table";
        let h = hypothesis_for(proc).unwrap();
        let mut b = FixtureBuilder::new(2);
        b.rephrase("Is there a bowl on the table?", YesNo::Yes, Some("There is a bowl on the table."))
            .rephrase("Is it red?", YesNo::No, Some("It is not red."))
            .entail("There is a bowl on the table.", &h, 0.91)
            .entail("There is a bowl on the table. It is not red.", &h, 0.7);
        let judge = CachedNliJudge::new(ScriptedBackend::new(b.build()));
        let one = [QaPair::new("Is there a bowl on the table?", YesNo::Yes)];
        let two = [one[0].clone(), QaPair::new("Is it red?", YesNo::No)];
        assert_eq!(judge.success_probability(proc, &one).unwrap(), 0.91);
        assert_eq!(judge.success_probability(proc, &two).unwrap(), 0.7);
        assert_eq!(judge.entail_calls(), 2);
        assert_eq!(judge.cached_entailments(), 2);
        assert_eq!(judge.success_probability(proc, &two).unwrap(), 0.7);
        assert_eq!(judge.entail_calls(), 2);
        assert_eq!(judge.backend().calls(RequestKind::Rephrase), 2);
        assert_eq!(judge.success_probability(proc, &[]).unwrap(), 0.5);
    }
}
