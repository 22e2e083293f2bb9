//! Per-example result rows and the corpus-level run summary.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{Answer, Decision, Label, MistakeType, StopReason};
use crate::dpo::RankedTurn;
use crate::metrics::{ExampleMetrics, TurnMetrics};
use crate::ranking::{RankedCandidate, RankingMode};
use crate::tuning::{RecordedDialog, ScoredExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleStatus {
    Evaluated,
    /// Dropped by a backend refusal (content filter, no generated content).
    Skipped,
    /// A backend failed mid-dialog.
    Errored,
}

/// One completed self-dialog iteration with everything needed for audits,
/// preference-pair export and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub iteration_index: usize,
    pub question: String,
    pub answer: Answer,
    pub success_likelihood: f64,
    pub metrics: TurnMetrics,
    pub vqg_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icl_prompt: Option<String>,
    pub candidates: Vec<RankedCandidate>,
    /// Unconstrained-fallback candidates kept despite failing the yes/no
    /// surface check.
    #[serde(default)]
    pub surface_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub id: String,
    pub label: Label,
    pub mistake_type: MistakeType,
    pub status: ExampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_detail: Option<String>,
    #[serde(default)]
    pub ranking_mode: Option<RankingMode>,
    #[serde(default)]
    pub decision: Option<Decision>,
    #[serde(default)]
    pub final_success_likelihood: Option<f64>,
    #[serde(default)]
    pub mistake_likelihood: Option<f64>,
    #[serde(default)]
    pub stop_reason: Option<StopReason>,
    #[serde(default)]
    pub metrics: Option<ExampleMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<String>,
    #[serde(default)]
    pub success_likelihoods: Vec<f64>,
    #[serde(default)]
    pub turns: Vec<TurnRecord>,
}

impl ExampleResult {
    pub fn not_evaluated(
        id: String,
        label: Label,
        mistake_type: MistakeType,
        status: ExampleStatus,
        detail: String,
    ) -> Self {
        Self {
            id,
            label,
            mistake_type,
            status,
            status_detail: Some(detail),
            ranking_mode: None,
            decision: None,
            final_success_likelihood: None,
            mistake_likelihood: None,
            stop_reason: None,
            metrics: None,
            anomaly: None,
            success_likelihoods: Vec::new(),
            turns: Vec::new(),
        }
    }

    pub fn is_evaluated(&self) -> bool {
        self.status == ExampleStatus::Evaluated
    }

    pub fn correct(&self) -> Option<bool> {
        self.decision.map(|d| d == self.label)
    }

    pub fn scored(&self) -> Option<ScoredExample> {
        if !self.is_evaluated() {
            return None;
        }
        self.mistake_likelihood
            .map(|ml| ScoredExample::new(ml, self.label))
    }

    /// Replay view; `None` for unevaluated or rationale-free rows.
    pub fn recorded_dialog(&self) -> Option<RecordedDialog> {
        if !self.is_evaluated() || self.turns.is_empty() {
            return None;
        }
        Some(RecordedDialog {
            label: self.label,
            success_likelihoods: self.success_likelihoods.clone(),
            relevances: self.turns.iter().map(|t| t.metrics.relevance).collect(),
            ref_adjusted: self
                .turns
                .iter()
                .map(|t| t.metrics.ref_adjusted_informativeness)
                .collect(),
            answers: self.turns.iter().map(|t| t.answer.value).collect(),
        })
    }

    pub fn ranked_turns(&self) -> Vec<RankedTurn> {
        let Some(mode) = self.ranking_mode else {
            return Vec::new();
        };
        if !self.is_evaluated() {
            return Vec::new();
        }
        self.turns
            .iter()
            .map(|t| RankedTurn {
                example_id: self.id.clone(),
                iteration_index: t.iteration_index,
                ranking_mode: mode,
                prompt: t.vqg_prompt.clone(),
                ranked_candidates: t.candidates.iter().map(|c| c.candidate.text.clone()).collect(),
                chosen_answer: t.answer.value,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub evaluated: usize,
    pub skipped: usize,
    pub errored: usize,
    /// Evaluated examples with a null relevance or informativeness.
    pub null_metric: usize,
}

/// Corpus-level means over evaluated examples. Means are `None` when no
/// value contributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub accuracy: Option<f64>,
    pub mean_example_relevance: Option<f64>,
    pub mean_example_informativeness: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub mean_information_gain: Option<f64>,
    pub counts: RunCounts,
}

/// Mean that does not depend on input order: values are summed in sorted
/// order.
fn order_free_mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    Some(values.into_iter().sum::<f64>() / n)
}

pub fn summarize(results: &[ExampleResult]) -> RunSummary {
    let mut counts = RunCounts::default();
    let mut correct = Vec::new();
    let mut relevance = Vec::new();
    let mut informativeness = Vec::new();
    let mut iterations = Vec::new();
    let mut gain = Vec::new();
    for r in results {
        match r.status {
            ExampleStatus::Skipped => counts.skipped += 1,
            ExampleStatus::Errored => counts.errored += 1,
            ExampleStatus::Evaluated => {
                counts.evaluated += 1;
                correct.push(if r.correct() == Some(true) { 1.0 } else { 0.0 });
                if let Some(m) = &r.metrics {
                    if m.example_relevance.is_none() || m.example_informativeness.is_none() {
                        counts.null_metric += 1;
                    }
                    relevance.extend(m.example_relevance);
                    informativeness.extend(m.example_informativeness);
                    iterations.push(m.iterations as f64);
                    gain.push(m.information_gain);
                }
            }
        }
    }
    RunSummary {
        accuracy: order_free_mean(correct),
        mean_example_relevance: order_free_mean(relevance),
        mean_example_informativeness: order_free_mean(informativeness),
        mean_iterations: order_free_mean(iterations),
        mean_information_gain: order_free_mean(gain),
        counts,
    }
}
