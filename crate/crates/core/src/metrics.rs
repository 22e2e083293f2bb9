//! NLI-based rationale coherence metrics and the per-example evaluation
//! metrics built on them.
//!
//! Every probability that reaches a logarithm is first clamped to
//! `[PROB_FLOOR, 1 - PROB_FLOOR]`; the exact endpoints 0 and 1 follow the
//! `0 log 0 = 0` convention so that `H(0) = H(1) = 0` holds exactly.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{AnswerValue, Label, QaPair, YesNo};
use crate::error::{check_probability, Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

/// Entailment-based success judge: `p_e(T | Q, A)`.
///
/// Implementations must return values in `[0, 1]` and must be pure for a
/// fixed backend (the same query always yields the same probability).
pub trait NliJudge {
    type Error;

    /// Probability that the rephrased `qa_pairs` entail successful execution
    /// of `procedure`. `qa_pairs` must already be Unsure-filtered.
    fn success_probability(
        &self,
        procedure: &str,
        qa_pairs: &[QaPair],
    ) -> core::result::Result<f64, Self::Error>;
}

impl<J: NliJudge + ?Sized> NliJudge for &J {
    type Error = J::Error;

    fn success_probability(
        &self,
        procedure: &str,
        qa_pairs: &[QaPair],
    ) -> core::result::Result<f64, Self::Error> {
        (**self).success_probability(procedure, qa_pairs)
    }
}

/// Sentence embedding provider for diversity ranking.
pub trait Embedder {
    type Error;

    fn embed(&self, text: &str) -> core::result::Result<Vec<f64>, Self::Error>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    type Error = E::Error;

    fn embed(&self, text: &str) -> core::result::Result<Vec<f64>, Self::Error> {
        (**self).embed(text)
    }
}

fn entropy_bits(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let q = 1.0 - p;
    -p * libm::log2(p) - q * libm::log2(q)
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    check_probability(p, "binary entropy")?;
    Ok(entropy_bits(p))
}

/// Information content `1 - H(p)` of a success probability, in bits.
pub fn information_content(p: f64) -> f64 {
    1.0 - entropy_bits(p.clamp(0.0, 1.0))
}

/// NLI belief: mistake iff `p_e < 0.5`.
pub fn nli_belief(p_e: f64) -> Label {
    if p_e < 0.5 {
        Label::Mistake
    } else {
        Label::Success
    }
}

/// Signs an informativeness value by agreement between the NLI belief and
/// the ground truth.
pub fn reference_adjust(p_e: f64, label: Label) -> f64 {
    let inf = information_content(p_e);
    if nli_belief(p_e) == label {
        inf
    } else {
        -inf
    }
}

fn with_turn(history: &[QaPair], question: &str, answer: YesNo) -> Vec<QaPair> {
    let mut qa = Vec::with_capacity(history.len() + 1);
    qa.extend_from_slice(history);
    qa.push(QaPair::new(question, answer));
    qa
}

/// `p_e` for the history extended by `(question, Yes)` and `(question, No)`.
pub fn hypothetical_probabilities<J: NliJudge>(
    judge: &J,
    procedure: &str,
    history: &[QaPair],
    question: &str,
) -> core::result::Result<(f64, f64), J::Error> {
    let p_yes = judge.success_probability(procedure, &with_turn(history, question, YesNo::Yes))?;
    let p_no = judge.success_probability(procedure, &with_turn(history, question, YesNo::No))?;
    Ok((p_yes, p_no))
}

/// Absolute swing in `p_e` between a No and a Yes answer to `candidate`.
pub fn relevance<J: NliJudge>(
    judge: &J,
    procedure: &str,
    history: &[QaPair],
    candidate: &str,
) -> core::result::Result<f64, J::Error> {
    let (p_yes, p_no) = hypothetical_probabilities(judge, procedure, history, candidate)?;
    Ok((p_no - p_yes).abs())
}

pub fn informativeness<J: NliJudge>(
    judge: &J,
    procedure: &str,
    history: &[QaPair],
    turn: &QaPair,
) -> core::result::Result<f64, J::Error> {
    let p = judge.success_probability(procedure, &with_turn(history, &turn.question, turn.answer))?;
    Ok(information_content(p))
}

pub fn ref_adjusted_informativeness<J: NliJudge>(
    judge: &J,
    procedure: &str,
    history: &[QaPair],
    turn: &QaPair,
    label: Label,
) -> core::result::Result<f64, J::Error> {
    let p = judge.success_probability(procedure, &with_turn(history, &turn.question, turn.answer))?;
    Ok(reference_adjust(p, label))
}

/// Coherence metrics of one asked question. The answer-dependent fields are
/// `None` for Unsure turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub relevance: f64,
    pub informativeness: Option<f64>,
    pub ref_adjusted_informativeness: Option<f64>,
    pub nli_success_prob: Option<f64>,
}

/// All metrics of a turn, sharing the two hypothetical NLI queries between
/// relevance and informativeness.
pub fn turn_metrics<J: NliJudge>(
    judge: &J,
    procedure: &str,
    prior: &[QaPair],
    question: &str,
    answer: AnswerValue,
    label: Label,
) -> core::result::Result<TurnMetrics, J::Error> {
    let (p_yes, p_no) = hypothetical_probabilities(judge, procedure, prior, question)?;
    let p_e = answer.sure().map(|a| match a {
        YesNo::Yes => p_yes,
        YesNo::No => p_no,
    });
    Ok(TurnMetrics {
        relevance: (p_no - p_yes).abs(),
        informativeness: p_e.map(information_content),
        ref_adjusted_informativeness: p_e.map(|p| reference_adjust(p, label)),
        nli_success_prob: p_e,
    })
}

/// Mean relevance over all turns; `None` for an empty rationale.
pub fn example_relevance(per_turn: &[f64]) -> Option<f64> {
    if per_turn.is_empty() {
        None
    } else {
        Some(per_turn.iter().sum::<f64>() / per_turn.len() as f64)
    }
}

/// Maximum reference-adjusted informativeness over the sure turns; `None`
/// when no sure turn remains.
pub fn example_informativeness(per_turn: &[f64], answers: &[AnswerValue]) -> Option<f64> {
    per_turn
        .iter()
        .zip(answers)
        .filter(|(_, a)| a.sure().is_some())
        .map(|(v, _)| *v)
        .fold(None, |best: Option<f64>, v| {
            Some(match best {
                Some(b) if b >= v => b,
                _ => v,
            })
        })
}

/// Distance of the final success likelihood from full confidence in the
/// correct label.
pub fn decision_error(final_success_likelihood: f64, label: Label) -> Result<f64> {
    let p = check_probability(final_success_likelihood, "decision error")?;
    Ok(match label {
        Label::Success => 1.0 - p,
        Label::Mistake => p,
    })
}

/// Mean per-iteration information content `1 - H(p_i)`.
pub fn information_gain(success_likelihoods: &[f64]) -> Result<f64> {
    if success_likelihoods.is_empty() {
        return Err(Error::EmptyInput("information gain needs at least one likelihood"));
    }
    let mut total = 0.0;
    for &p in success_likelihoods {
        total += 1.0 - binary_entropy(p)?;
    }
    Ok(total / success_likelihoods.len() as f64)
}

/// Example-level aggregates reported per row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub example_relevance: Option<f64>,
    pub example_informativeness: Option<f64>,
    pub decision_error: f64,
    pub iterations: usize,
    pub information_gain: f64,
}

impl ExampleMetrics {
    pub fn from_turns(
        turns: &[TurnMetrics],
        answers: &[AnswerValue],
        success_likelihoods: &[f64],
        label: Label,
    ) -> Result<Self> {
        let final_p = *success_likelihoods
            .last()
            .ok_or(Error::EmptyInput("no success likelihood"))?;
        let relevances: Vec<f64> = turns.iter().map(|t| t.relevance).collect();
        let ref_adjusted: Vec<f64> = turns
            .iter()
            .map(|t| t.ref_adjusted_informativeness.unwrap_or(0.0))
            .collect();
        Ok(Self {
            example_relevance: example_relevance(&relevances),
            example_informativeness: example_informativeness(&ref_adjusted, answers),
            decision_error: decision_error(final_p, label)?,
            iterations: turns.len(),
            information_gain: information_gain(success_likelihoods)?,
        })
    }
}
