//! Candidate question filtering and selection.
//!
//! Every ranker produces a permutation of its input ordered by score
//! (descending) and then by candidate text, so the result never depends on
//! the order candidates arrived in.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::{CandidateQuestion, QaPair};
use crate::error::{Error, Result};
use crate::metrics::{hypothetical_probabilities, information_content, Embedder, NliJudge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMode {
    Likelihood,
    Coherence,
    Diversity,
}

impl RankingMode {
    pub const ALL: [RankingMode; 3] = [
        RankingMode::Likelihood,
        RankingMode::Coherence,
        RankingMode::Diversity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RankingMode::Likelihood => "likelihood",
            RankingMode::Coherence => "coherence",
            RankingMode::Diversity => "diversity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Likelihood,
    Coherence,
    Diversity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate: CandidateQuestion,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    pub score_kind: ScoreKind,
}

const YES_NO_OPENERS: [&str; 10] = [
    "is", "are", "was", "were", "does", "do", "did", "has", "have", "had",
];

const BANNED_WORDS: [&str; 4] = ["successful", "successfully", "completed", "procedure"];

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// Checks the yes-no surface form enforced by constrained decoding: an
/// is/does/has opener (or their plural and past forms), no standalone "or",
/// none of the banned words, and a trailing question mark.
pub fn validate_question_surface(text: &str) -> bool {
    let text = text.trim();
    if !text.ends_with('?') {
        return false;
    }
    let mut tokens = words(text);
    match tokens.next() {
        Some(first) if YES_NO_OPENERS.contains(&first.as_str()) => {}
        _ => return false,
    }
    words(text).all(|w| w != "or" && !BANNED_WORDS.contains(&w.as_str()))
}

pub fn normalize_question(text: &str) -> String {
    text.trim().to_lowercase()
}

/// Drops candidates that repeat an asked question, or an earlier candidate,
/// after trimming and case folding. Order is preserved.
pub fn dedup<S: AsRef<str>>(candidates: Vec<CandidateQuestion>, asked: &[S]) -> Vec<CandidateQuestion> {
    let mut seen: BTreeSet<String> = asked.iter().map(|q| normalize_question(q.as_ref())).collect();
    candidates
        .into_iter()
        .filter(|c| seen.insert(normalize_question(&c.text)))
        .collect()
}

fn candidate_order(a: &(CandidateQuestion, f64), b: &(CandidateQuestion, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.text.cmp(&b.0.text))
        .then_with(|| b.0.log_likelihood.total_cmp(&a.0.log_likelihood))
        .then_with(|| a.0.source.cmp(&b.0.source))
        .then_with(|| a.0.token_count.cmp(&b.0.token_count))
        .then_with(|| a.0.unconstrained.cmp(&b.0.unconstrained))
}

fn into_ranked(mut scored: Vec<(CandidateQuestion, f64)>, kind: ScoreKind) -> Vec<RankedCandidate> {
    scored.sort_by(candidate_order);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (candidate, score))| RankedCandidate {
            candidate,
            score,
            rank: i + 1,
            score_kind: kind,
        })
        .collect()
}

/// Orders by sequence log-likelihood.
pub fn rank_likelihood(candidates: Vec<CandidateQuestion>) -> Result<Vec<RankedCandidate>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no candidates to rank"));
    }
    let scored = candidates
        .into_iter()
        .map(|c| {
            let s = c.log_likelihood;
            (c, s)
        })
        .collect();
    Ok(into_ranked(scored, ScoreKind::Likelihood))
}

/// Rescores `log p` as `log p - l * log |Q|` (`p / |Q|^l` in probability
/// space). `l = 0` leaves scores unchanged.
pub fn apply_length_penalty(candidates: Vec<CandidateQuestion>, l: f64) -> Vec<CandidateQuestion> {
    if l == 0.0 {
        return candidates;
    }
    candidates
        .into_iter()
        .map(|mut c| {
            let len = c.token_count.max(1) as f64;
            c.log_likelihood -= l * libm::log(len);
            c
        })
        .collect()
}

/// Relevance times the best achievable informativeness, with both derived
/// from the NLI judge.
pub fn coherence_score<J: NliJudge>(
    judge: &J,
    procedure: &str,
    history: &[QaPair],
    question: &str,
) -> core::result::Result<f64, J::Error> {
    let (p_yes, p_no) = hypothetical_probabilities(judge, procedure, history, question)?;
    let relevance = (p_no - p_yes).abs();
    let potential = information_content(p_yes).max(information_content(p_no));
    Ok(relevance * potential)
}

pub fn rank_coherence<J: NliJudge>(
    judge: &J,
    procedure: &str,
    history: &[QaPair],
    candidates: Vec<CandidateQuestion>,
) -> core::result::Result<Vec<RankedCandidate>, J::Error> {
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let s = coherence_score(judge, procedure, history, &c.text)?;
        scored.push((c, s));
    }
    Ok(into_ranked(scored, ScoreKind::Coherence))
}

/// Cosine similarity; zero vectors are treated as orthogonal to everything.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine distance from the previously asked questions. Falls back to
/// likelihood order when nothing has been asked yet.
pub fn rank_diversity<E, S>(
    embedder: &E,
    candidates: Vec<CandidateQuestion>,
    previous_questions: &[S],
) -> core::result::Result<Vec<RankedCandidate>, E::Error>
where
    E: Embedder,
    S: AsRef<str>,
{
    if previous_questions.is_empty() {
        let scored = candidates
            .into_iter()
            .map(|c| {
                let s = c.log_likelihood;
                (c, s)
            })
            .collect();
        return Ok(into_ranked(scored, ScoreKind::Likelihood));
    }
    let previous = previous_questions
        .iter()
        .map(|q| embedder.embed(q.as_ref()))
        .collect::<core::result::Result<Vec<_>, _>>()?;
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let v = embedder.embed(&c.text)?;
        let total: f64 = previous.iter().map(|p| 1.0 - cosine_similarity(&v, p)).sum();
        scored.push((c, total / previous.len() as f64));
    }
    Ok(into_ranked(scored, ScoreKind::Diversity))
}
