//! Pure core of the coherent procedural mistake detection engine.
//!
//! Everything in this crate is `no_std` (it only needs `alloc`): the domain
//! types, NLI-based coherence metrics, candidate ranking, stopping rules,
//! prompt templates, threshold tuning, DPO pair sampling and run summaries.
//! Model access is abstracted behind the [`NliJudge`] and [`Embedder`]
//! traits; the `pmd` crate provides the backends, IO and CLI.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod domain;
pub mod dpo;
pub mod error;
pub mod metrics;
pub mod probability;
pub mod prompts;
pub mod ranking;
pub mod stopping;
pub mod summary;
pub mod tuning;

pub use domain::{
    classify_answer, filtered_history, Answer, AnswerValue, CandidateQuestion, CandidateSource,
    Decision, DialogState, DialogTurn, Example, Label, MistakeType, QaPair, Split, StopReason,
    YesNo,
};
pub use error::{Error, Result};
pub use metrics::{Embedder, ExampleMetrics, NliJudge, TurnMetrics};
pub use ranking::{RankedCandidate, RankingMode, ScoreKind};
