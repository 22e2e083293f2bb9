//! Decision threshold search, stopping hyperparameter search and DET curves.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{decide, Label};
use crate::error::{Error, Result};
use crate::metrics::{example_informativeness, example_relevance, ExampleMetrics};
use crate::stopping::{truncation_point, StoppingParams};
use crate::domain::AnswerValue;

pub const DELTA_GRID: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
pub const EPSILON_GRID: [f64; 4] = [0.025, 0.05, 0.1, 0.2];
pub const TAU_GRID_LEN: usize = 100;

/// `0.01, 0.02, ..., 0.99, 1.0`.
pub fn tau_grid() -> impl Iterator<Item = f64> + Clone {
    (1..=TAU_GRID_LEN).map(|i| i as f64 / 100.0)
}

/// A scored example: final mistake likelihood and ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub mistake_likelihood: f64,
    pub label: Label,
}

impl ScoredExample {
    pub fn new(mistake_likelihood: f64, label: Label) -> Self {
        Self {
            mistake_likelihood,
            label,
        }
    }

    pub fn correct_at(&self, tau: f64) -> bool {
        decide(self.mistake_likelihood, tau) == self.label
    }
}

pub fn accuracy_at(results: &[ScoredExample], tau: f64) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let correct = results.iter().filter(|r| r.correct_at(tau)).count();
    correct as f64 / results.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauChoice {
    pub tau: f64,
    pub accuracy: f64,
}

/// Smallest grid threshold with maximal accuracy.
pub fn tune_tau(results: &[ScoredExample]) -> Result<TauChoice> {
    if results.is_empty() {
        return Err(Error::EmptyInput("tau tuning needs at least one result"));
    }
    let mut best = TauChoice {
        tau: f64::NAN,
        accuracy: f64::NEG_INFINITY,
    };
    for tau in tau_grid() {
        let acc = accuracy_at(results, tau);
        if acc > best.accuracy {
            best = TauChoice { tau, accuracy: acc };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub tau: f64,
    /// Fraction of true mistakes decided success; `None` without mistakes.
    pub miss_rate: Option<f64>,
    /// Fraction of true successes decided mistake; `None` without successes.
    pub false_alarm_rate: Option<f64>,
    pub decided_mistakes: usize,
}

pub fn det_curve(results: &[ScoredExample]) -> Vec<DetPoint> {
    let mistakes = results.iter().filter(|r| r.label.is_mistake()).count();
    let successes = results.len() - mistakes;
    let rate = |count: usize, total: usize| (total > 0).then(|| count as f64 / total as f64);
    tau_grid()
        .map(|tau| {
            let mut misses = 0;
            let mut false_alarms = 0;
            let mut decided_mistakes = 0;
            for r in results {
                let d = decide(r.mistake_likelihood, tau);
                if d.is_mistake() {
                    decided_mistakes += 1;
                }
                match (r.label, d) {
                    (Label::Mistake, Label::Success) => misses += 1,
                    (Label::Success, Label::Mistake) => false_alarms += 1,
                    _ => {}
                }
            }
            DetPoint {
                tau,
                miss_rate: rate(misses, mistakes),
                false_alarm_rate: rate(false_alarms, successes),
                decided_mistakes,
            }
        })
        .collect()
}

/// Informativeness times relevance for a correct decision with a positive
/// product; zero otherwise. Null aggregates count as zero.
pub fn cascading_metric(metrics: &ExampleMetrics, correct: bool) -> f64 {
    cascade(metrics.example_informativeness, metrics.example_relevance, correct)
}

fn cascade(informativeness: Option<f64>, relevance: Option<f64>, correct: bool) -> f64 {
    if !correct {
        return 0.0;
    }
    let product = informativeness.unwrap_or(0.0) * relevance.unwrap_or(0.0);
    if product > 0.0 {
        product
    } else {
        0.0
    }
}

/// A dialog recorded without early stopping, used to replay any
/// `(delta, epsilon)` cell by truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedDialog {
    pub label: Label,
    pub success_likelihoods: Vec<f64>,
    pub relevances: Vec<f64>,
    pub ref_adjusted: Vec<Option<f64>>,
    pub answers: Vec<AnswerValue>,
}

/// The dialog as it would have ended under `params`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncated {
    pub iterations: usize,
    pub final_success_likelihood: f64,
    pub example_relevance: Option<f64>,
    pub example_informativeness: Option<f64>,
}

pub fn replay(dialog: &RecordedDialog, params: &StoppingParams) -> Result<Truncated> {
    if dialog.success_likelihoods.is_empty() {
        return Err(Error::EmptyInput("recorded dialog has no iterations"));
    }
    let k = truncation_point(&dialog.success_likelihoods, params)
        .map(|(k, _)| k)
        .unwrap_or(dialog.success_likelihoods.len());
    let k_turns = k.min(dialog.relevances.len());
    let ref_adj: Vec<f64> = dialog.ref_adjusted[..k_turns]
        .iter()
        .map(|v| v.unwrap_or(0.0))
        .collect();
    Ok(Truncated {
        iterations: k,
        final_success_likelihood: dialog.success_likelihoods[k - 1],
        example_relevance: example_relevance(&dialog.relevances[..k_turns]),
        example_informativeness: example_informativeness(&ref_adj, &dialog.answers[..k_turns]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub delta: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub accuracy: f64,
    pub objective: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_tau: f64,
    pub best_delta: f64,
    pub best_epsilon: f64,
    pub objective_value: f64,
    pub best_accuracy: f64,
    pub grid_trace: Vec<GridCell>,
}

/// Evaluates one stopping cell: truncate every dialog, re-tune tau on the
/// truncated decisions and average the cascading metric.
pub fn evaluate_cell(dialogs: &[RecordedDialog], params: &StoppingParams) -> Result<GridCell> {
    let truncated = dialogs
        .iter()
        .map(|d| replay(d, params))
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<ScoredExample> = truncated
        .iter()
        .zip(dialogs)
        .map(|(t, d)| ScoredExample::new(1.0 - t.final_success_likelihood, d.label))
        .collect();
    let choice = tune_tau(&scored)?;
    let objective = truncated
        .iter()
        .zip(&scored)
        .map(|(t, s)| cascade(t.example_informativeness, t.example_relevance, s.correct_at(choice.tau)))
        .sum::<f64>()
        / dialogs.len() as f64;
    let mean_iterations =
        truncated.iter().map(|t| t.iterations as f64).sum::<f64>() / dialogs.len() as f64;
    Ok(GridCell {
        delta: params.delta,
        epsilon: params.epsilon,
        tau: choice.tau,
        accuracy: choice.accuracy,
        objective,
        mean_iterations,
    })
}

/// Grid search over the fixed `(delta, epsilon)` grid. Ties keep the smaller
/// delta, then the smaller epsilon.
pub fn tune_stopping(dialogs: &[RecordedDialog], max_iterations: usize) -> Result<TuneResult> {
    if dialogs.is_empty() {
        return Err(Error::EmptyInput("stopping search needs validation dialogs"));
    }
    let mut trace = Vec::with_capacity(DELTA_GRID.len() * EPSILON_GRID.len());
    for delta in DELTA_GRID {
        for epsilon in EPSILON_GRID {
            let params = StoppingParams::new(delta, epsilon, max_iterations)?;
            trace.push(evaluate_cell(dialogs, &params)?);
        }
    }
    let mut best = trace[0];
    for cell in &trace[1..] {
        if cell.objective > best.objective {
            best = *cell;
        }
    }
    Ok(TuneResult {
        best_tau: best.tau,
        best_delta: best.delta,
        best_epsilon: best.epsilon,
        objective_value: best.objective,
        best_accuracy: best.accuracy,
        grid_trace: trace,
    })
}
