//! The self-dialog loop and the rationale-free baseline.

use pmd_core::metrics::{turn_metrics, Embedder, ExampleMetrics, TurnMetrics};
use pmd_core::prompts::{
    build_icl_prompt, build_rationale_free_prompt, build_success_context, build_vqg_prompt, IclBank,
};
use pmd_core::ranking::{
    apply_length_penalty, dedup, rank_coherence, rank_diversity, rank_likelihood, validate_question_surface,
    RankedCandidate, RankingMode,
};
use pmd_core::stopping::{should_stop, StoppingParams, DEFAULT_MAX_ITERATIONS};
use pmd_core::summary::{ExampleResult, ExampleStatus, TurnRecord};
use pmd_core::{
    classify_answer, filtered_history, CandidateQuestion, CandidateSource, DialogState, DialogTurn, Example,
    StopReason,
};
use pmd_core::domain::SURENESS_THRESHOLD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{Backend, BackendError, VQG_CANDIDATES};
use crate::error::{EngineError, EngineResult};
use crate::nli::CachedNliJudge;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_iterations: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub ranking_mode: RankingMode,
    pub icl_enabled: bool,
    pub rationale_free: bool,
    pub length_penalty: Option<f64>,
    pub seed: u64,
    pub sureness_threshold: f64,
    /// Appends the yes/no nudge to question-generation prompts.
    pub gpt_compat: bool,
    /// Ignore early stopping and always run `max_iterations` turns. Used to
    /// record dialogs for stopping-parameter replay.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub full_length: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            delta: 0.1,
            epsilon: 0.05,
            tau: 0.5,
            ranking_mode: RankingMode::Likelihood,
            icl_enabled: false,
            rationale_free: false,
            length_penalty: None,
            seed: 0,
            sureness_threshold: SURENESS_THRESHOLD,
            gpt_compat: false,
            full_length: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> EngineResult<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(EngineError::Validation(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.sureness_threshold != SURENESS_THRESHOLD {
            return Err(EngineError::Validation(format!(
                "sureness_threshold is fixed at {SURENESS_THRESHOLD}"
            )));
        }
        if let Some(l) = self.length_penalty {
            if !l.is_finite() {
                return Err(EngineError::Validation("length_penalty must be finite".into()));
            }
        }
        if !self.rationale_free {
            self.stopping_params()?;
        }
        Ok(())
    }

    pub fn stopping_params(&self) -> EngineResult<StoppingParams> {
        Ok(StoppingParams::new(self.delta, self.epsilon, self.max_iterations)?)
    }
}

/// Seed of the example-scoped generator: SHA-256 over the global seed and
/// the example id.
pub fn example_rng(seed: u64, example_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(example_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// A finished dialog together with its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogOutcome {
    pub state: DialogState,
    pub metrics: ExampleMetrics,
    pub turns: Vec<TurnRecord>,
    /// Set when the dialog ended because no usable candidate was left.
    pub anomaly: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Completed(DialogOutcome),
    Skipped(String),
}

struct BackendEmbedder<'a, B>(&'a B);

impl<B: Backend> Embedder for BackendEmbedder<'_, B> {
    type Error = BackendError;

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.0.embed(text)
    }
}

fn skip_reason(err: &EngineError) -> Option<String> {
    match err {
        EngineError::Backend(e) if e.is_skip() => Some(e.to_string()),
        _ => None,
    }
}

/// Runs examples against one backend. The NLI cache lives as long as the
/// engine and is shared by all workers.
pub struct Engine<B> {
    judge: CachedNliJudge<B>,
    icl_bank: IclBank,
}

impl<B: Backend> Engine<B> {
    pub fn new(backend: B) -> Self {
        Self::with_icl_bank(backend, IclBank::bundled())
    }

    pub fn with_icl_bank(backend: B, icl_bank: IclBank) -> Self {
        Self {
            judge: CachedNliJudge::new(backend),
            icl_bank,
        }
    }

    pub fn backend(&self) -> &B {
        self.judge.backend()
    }

    pub fn judge(&self) -> &CachedNliJudge<B> {
        &self.judge
    }

    fn generate(
        &self,
        prompt: &str,
        source: CandidateSource,
        pool: &mut Vec<CandidateQuestion>,
        violations: &mut usize,
    ) -> EngineResult<bool> {
        let batch = self.backend().generate_candidates(prompt, VQG_CANDIDATES)?;
        if batch.skip {
            return Ok(false);
        }
        for mut c in batch.candidates {
            c.source = source;
            if !validate_question_surface(&c.text) {
                if !c.unconstrained {
                    log::debug!("dropping malformed candidate {:?}", c.text);
                    continue;
                }
                *violations += 1;
            }
            pool.push(c);
        }
        Ok(true)
    }

    fn rank(
        &self,
        example: &Example,
        config: &RunConfig,
        turns: &[DialogTurn],
        asked: &[String],
        pool: Vec<CandidateQuestion>,
    ) -> EngineResult<Vec<RankedCandidate>> {
        Ok(match config.ranking_mode {
            RankingMode::Likelihood => rank_likelihood(pool)?,
            RankingMode::Coherence => {
                rank_coherence(&self.judge, &example.procedure_text, &filtered_history(turns), pool)?
            }
            RankingMode::Diversity => rank_diversity(&BackendEmbedder(self.backend()), pool, asked)?,
        })
    }

    /// One self-dialog: generate, rank, answer, classify, decide whether to
    /// stop.
    pub fn run_dialog(&self, example: &Example, config: &RunConfig) -> EngineResult<Evaluation> {
        let params = config.stopping_params()?;
        let procedure = example.procedure_text.as_str();
        let mut rng = example_rng(config.seed, &example.id);
        let mut turns: Vec<DialogTurn> = Vec::new();
        let mut records: Vec<TurnRecord> = Vec::new();
        let mut metrics: Vec<TurnMetrics> = Vec::new();
        let mut likelihoods: Vec<f64> = Vec::new();
        let mut asked: Vec<String> = Vec::new();
        let mut anomaly = None;
        let mut stop = StopReason::MaxIterations;

        for iteration in 1..=params.max_iterations {
            let vqg_prompt = build_vqg_prompt(procedure, &turns, config.gpt_compat);
            let mut pool = Vec::new();
            let mut violations = 0;
            if !self.generate(&vqg_prompt, CandidateSource::DialogContext, &mut pool, &mut violations)? {
                return Ok(Evaluation::Skipped(format!(
                    "question generation returned no content at iteration {iteration}"
                )));
            }
            let icl_prompt = if config.icl_enabled {
                let prompt = build_icl_prompt(procedure, &self.icl_bank, &asked, &mut rng);
                if !self.generate(&prompt, CandidateSource::Icl, &mut pool, &mut violations)? {
                    return Ok(Evaluation::Skipped(format!(
                        "in-context question generation returned no content at iteration {iteration}"
                    )));
                }
                Some(prompt)
            } else {
                None
            };
            if let Some(l) = config.length_penalty {
                pool = apply_length_penalty(pool, l);
            }
            let pool = dedup(pool, &asked);
            if pool.is_empty() {
                if turns.is_empty() {
                    return Ok(Evaluation::Skipped("no usable candidate question".into()));
                }
                anomaly = Some(format!("candidates exhausted at iteration {iteration}"));
                log::warn!("{}: {}", example.id, anomaly.as_deref().unwrap_or_default());
                break;
            }
            let ranked = self.rank(example, config, &turns, &asked, pool)?;
            let question = ranked[0].candidate.text.clone();

            let answer = classify_answer(self.backend().answer_yes_probability(&question, &example.frame_ref)?)?;
            let prior = filtered_history(&turns);
            let tm = turn_metrics(&self.judge, procedure, &prior, &question, answer.value, example.label)?;
            turns.push(DialogTurn {
                question: question.clone(),
                answer,
                iteration_index: iteration,
            });
            asked.push(question.clone());

            let context = build_success_context(procedure, &turns);
            let p = pmd_core::error::check_probability(
                self.backend().success_yes_probability(&context, &example.frame_ref)?,
                "success likelihood",
            )?;
            likelihoods.push(p);
            metrics.push(tm);
            records.push(TurnRecord {
                iteration_index: iteration,
                question,
                answer,
                success_likelihood: p,
                metrics: tm,
                vqg_prompt,
                icl_prompt,
                candidates: ranked,
                surface_violations: violations,
            });

            let reason = if config.full_length {
                (likelihoods.len() >= params.max_iterations).then_some(StopReason::MaxIterations)
            } else {
                should_stop(&likelihoods, &params)
            };
            if let Some(reason) = reason {
                stop = reason;
                break;
            }
        }

        let answers: Vec<_> = turns.iter().map(|t| t.answer.value).collect();
        let example_metrics = ExampleMetrics::from_turns(&metrics, &answers, &likelihoods, example.label)?;
        let state = DialogState::finish(example.id.clone(), turns, likelihoods, stop, config.tau)?;
        Ok(Evaluation::Completed(DialogOutcome {
            state,
            metrics: example_metrics,
            turns: records,
            anomaly,
        }))
    }

    /// Single success classification without questions.
    pub fn run_rationale_free(&self, example: &Example, config: &RunConfig) -> EngineResult<Evaluation> {
        let prompt = build_rationale_free_prompt(&example.procedure_text);
        let p = pmd_core::error::check_probability(
            self.backend().success_yes_probability(&prompt, &example.frame_ref)?,
            "success likelihood",
        )?;
        let metrics = ExampleMetrics::from_turns(&[], &[], &[p], example.label)?;
        let state = DialogState::finish(example.id.clone(), Vec::new(), vec![p], StopReason::RationaleFree, config.tau)?;
        Ok(Evaluation::Completed(DialogOutcome {
            state,
            metrics,
            turns: Vec::new(),
            anomaly: None,
        }))
    }

    /// Evaluates one example in the configured mode and folds skips and
    /// failures into the result row.
    pub fn evaluate(&self, example: &Example, config: &RunConfig) -> ExampleResult {
        let outcome = if config.rationale_free {
            self.run_rationale_free(example, config)
        } else {
            self.run_dialog(example, config)
        };
        let not_evaluated =
            |status, detail| ExampleResult::not_evaluated(example.id.clone(), example.label, example.mistake_type, status, detail);
        match outcome {
            Ok(Evaluation::Completed(o)) => ExampleResult {
                id: example.id.clone(),
                label: example.label,
                mistake_type: example.mistake_type,
                status: ExampleStatus::Evaluated,
                status_detail: None,
                ranking_mode: (!config.rationale_free).then_some(config.ranking_mode),
                decision: Some(o.state.decision),
                final_success_likelihood: Some(o.state.final_success_likelihood()),
                mistake_likelihood: Some(o.state.mistake_likelihood_final),
                stop_reason: Some(o.state.stop_reason),
                metrics: Some(o.metrics),
                anomaly: o.anomaly,
                success_likelihoods: o.state.success_likelihoods,
                turns: o.turns,
            },
            Ok(Evaluation::Skipped(reason)) => {
                log::info!("{}: skipped: {reason}", example.id);
                not_evaluated(ExampleStatus::Skipped, reason)
            }
            Err(e) => match skip_reason(&e) {
                Some(reason) => {
                    log::info!("{}: skipped: {reason}", example.id);
                    not_evaluated(ExampleStatus::Skipped, reason)
                }
                None => {
                    log::error!("{}: {e}", example.id);
                    not_evaluated(ExampleStatus::Errored, e.to_string())
                }
            },
        }
    }

    /// Evaluates all examples on `workers` threads; rows come back sorted by
    /// id.
    pub fn run_dataset(&self, examples: &[Example], config: &RunConfig, workers: usize) -> EngineResult<Vec<ExampleResult>> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| EngineError::Validation(format!("worker pool: {e}")))?;
        let mut results: Vec<ExampleResult> =
            pool.install(|| examples.par_iter().map(|ex| self.evaluate(ex, config)).collect());
        results.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(results)
    }
}
