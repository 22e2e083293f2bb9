//! Domain types shared by every stage of the self-dialog.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// Minimum probability mass an answer needs before it is recorded as sure.
pub const SURENESS_THRESHOLD: f64 = 0.6;

/// Ground-truth outcome of a procedure: `success` (0) or `mistake` (1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Success,
    Mistake,
}

impl Label {
    pub fn is_mistake(self) -> bool {
        matches!(self, Label::Mistake)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Success => "success",
            Label::Mistake => "mistake",
        }
    }
}

/// Decisions and labels share the same binary outcome space.
pub type Decision = Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MistakeType {
    Incomplete,
    WrongVerb,
    WrongNoun,
    WrongVerbNoun,
    None,
}

impl MistakeType {
    pub const ALL: [MistakeType; 5] = [
        MistakeType::None,
        MistakeType::Incomplete,
        MistakeType::WrongVerb,
        MistakeType::WrongNoun,
        MistakeType::WrongVerbNoun,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MistakeType::Incomplete => "incomplete",
            MistakeType::WrongVerb => "wrong_verb",
            MistakeType::WrongNoun => "wrong_noun",
            MistakeType::WrongVerbNoun => "wrong_verb_noun",
            MistakeType::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One procedural mistake detection instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub procedure_text: String,
    /// Opaque frame reference handed to the vision backend untouched.
    pub frame_ref: String,
    pub label: Label,
    pub mistake_type: MistakeType,
    pub split: Split,
}

impl Example {
    /// Checks the per-record invariants. Id uniqueness is a dataset-level
    /// property and is checked by the loader.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidExample {
            id: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(fail("id is empty".into()));
        }
        if self.procedure_text.trim().is_empty() {
            return Err(fail("procedure_text is empty".into()));
        }
        match (self.label, self.mistake_type) {
            (Label::Success, MistakeType::None) => Ok(()),
            (Label::Success, other) => Err(fail(format!(
                "label `success` requires mistake_type `none`, found `{}`",
                other.as_str()
            ))),
            (Label::Mistake, MistakeType::None) => Err(fail(
                "label `mistake` requires a mistake_type other than `none`".into(),
            )),
            (Label::Mistake, _) => Ok(()),
        }
    }
}

/// A sure answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::Yes => "Yes",
            YesNo::No => "No",
        }
    }
}

impl fmt::Display for YesNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnswerValue {
    Yes,
    No,
    Unsure,
}

impl AnswerValue {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerValue::Yes => "Yes",
            AnswerValue::No => "No",
            AnswerValue::Unsure => "Unsure",
        }
    }

    pub fn sure(self) -> Option<YesNo> {
        match self {
            AnswerValue::Yes => Some(YesNo::Yes),
            AnswerValue::No => Some(YesNo::No),
            AnswerValue::Unsure => None,
        }
    }
}

impl From<YesNo> for AnswerValue {
    fn from(value: YesNo) -> Self {
        match value {
            YesNo::Yes => AnswerValue::Yes,
            YesNo::No => AnswerValue::No,
        }
    }
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub value: AnswerValue,
    pub yes_probability: f64,
}

/// Maps a VQA yes-probability onto Yes / No / Unsure.
///
/// Both sureness boundaries are inclusive: 0.6 is Yes and 0.4 is No.
pub fn classify_answer(yes_probability: f64) -> Result<Answer> {
    let p = check_probability(yes_probability, "answer yes-probability")?;
    let value = if p >= SURENESS_THRESHOLD {
        AnswerValue::Yes
    } else if 1.0 - p >= SURENESS_THRESHOLD {
        AnswerValue::No
    } else {
        AnswerValue::Unsure
    };
    Ok(Answer {
        value,
        yes_probability: p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogTurn {
    pub question: String,
    pub answer: Answer,
    /// 1-based.
    pub iteration_index: usize,
}

/// A question with a sure answer, as used by every metric computation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: YesNo,
}

impl QaPair {
    pub fn new(question: impl Into<String>, answer: YesNo) -> Self {
        Self {
            question: question.into(),
            answer,
        }
    }
}

/// The metric view of a dialog: Unsure turns dropped, order kept.
pub fn filtered_history(turns: &[DialogTurn]) -> Vec<QaPair> {
    turns
        .iter()
        .filter_map(|t| {
            t.answer
                .value
                .sure()
                .map(|a| QaPair::new(t.question.clone(), a))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stabilized,
    Confident,
    MaxIterations,
    RationaleFree,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Stabilized => "stabilized",
            StopReason::Confident => "confident",
            StopReason::MaxIterations => "max_iterations",
            StopReason::RationaleFree => "rationale_free",
        }
    }
}

/// The finished rationale for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogState {
    pub example_id: String,
    pub turns: Vec<DialogTurn>,
    /// Success likelihood after each completed iteration.
    pub success_likelihoods: Vec<f64>,
    pub stop_reason: StopReason,
    pub decision: Decision,
    pub mistake_likelihood_final: f64,
}

impl DialogState {
    /// Closes a dialog: the mistake likelihood is the complement of the last
    /// success likelihood, and the decision is `mistake` iff it reaches `tau`.
    pub fn finish(
        example_id: String,
        turns: Vec<DialogTurn>,
        success_likelihoods: Vec<f64>,
        stop_reason: StopReason,
        tau: f64,
    ) -> Result<Self> {
        let last = *success_likelihoods
            .last()
            .ok_or(Error::EmptyInput("dialog has no success likelihood"))?;
        let p = check_probability(last, "success likelihood")?;
        let mistake_likelihood_final = 1.0 - p;
        Ok(Self {
            example_id,
            turns,
            success_likelihoods,
            stop_reason,
            decision: decide(mistake_likelihood_final, tau),
            mistake_likelihood_final,
        })
    }

    pub fn final_success_likelihood(&self) -> f64 {
        1.0 - self.mistake_likelihood_final
    }
}

/// `mistake` iff the mistake likelihood is at least `tau`.
pub fn decide(mistake_likelihood: f64, tau: f64) -> Decision {
    if mistake_likelihood >= tau {
        Label::Mistake
    } else {
        Label::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    DialogContext,
    Icl,
}

/// A generated question and the backend's sequence score for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateQuestion {
    pub text: String,
    pub log_likelihood: f64,
    pub source: CandidateSource,
    pub token_count: usize,
    /// Produced by the unconstrained fallback decoder; surface violations
    /// are tolerated for these.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub unconstrained: bool,
}

impl CandidateQuestion {
    pub fn new(text: impl Into<String>, log_likelihood: f64, source: CandidateSource) -> Self {
        let text = text.into();
        let token_count = whitespace_token_count(&text);
        Self {
            text,
            log_likelihood,
            source,
            token_count,
            unconstrained: false,
        }
    }
}

/// Fallback token count when a backend does not report one.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count().max(1)
}
