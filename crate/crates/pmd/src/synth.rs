//! Synthetic dataset and matching scripted fixture.
//!
//! The fixture is produced by running the real dialog loop against a
//! [`SyntheticBackend`] wrapped in a [`RecordingBackend`], in full-length
//! mode, for every requested ranking configuration. Any run with the same
//! seed and a configuration covered here (early stopping only truncates a
//! full-length dialog) is answered entirely from the fixture.

use pmd_core::ranking::RankingMode;
use pmd_core::{Example, Label, MistakeType, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{Fixture, RecordingBackend, SyntheticBackend, SyntheticParams};
use crate::dataset::to_jsonl;
use crate::error::{EngineError, EngineResult};
use crate::orchestrator::{Engine, RunConfig};

const PROCEDURES: [&str; 24] = [
    "Open the bottle.",
    "Fold the cloth.",
    "Cut the tomato.",
    "Put the bowl on the table.",
    "Close the drawer.",
    "Pour the water into the cup.",
    "Peel the banana.",
    "Wipe the counter.",
    "Remove the lid from the jar.",
    "Place the knife on the board.",
    "Crack the egg into the pan.",
    "Tighten the screw.",
    "Stir the soup in the pot.",
    "Wash the plate.",
    "Slice the bread.",
    "Turn on the stove.",
    "Hang the towel.",
    "Sand the plank.",
    "Water the plant.",
    "Plug in the kettle.",
    "Rinse the spoon.",
    "Fill the bucket.",
    "Unwrap the sandwich.",
    "Measure the wood.",
];

const MISTAKE_TYPES: [MistakeType; 4] = [
    MistakeType::Incomplete,
    MistakeType::WrongVerb,
    MistakeType::WrongNoun,
    MistakeType::WrongVerbNoun,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub examples: usize,
    pub successes: usize,
    /// Examples whose success classification hits the content filter.
    pub filtered: usize,
    pub id_prefix: String,
    pub max_iterations: usize,
    pub ranking_modes: Vec<RankingMode>,
    pub icl: Vec<bool>,
    pub rationale_free: bool,
    pub length_penalty: Option<f64>,
    pub backend: SyntheticParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            examples: 20,
            successes: 10,
            filtered: 0,
            id_prefix: "syn".into(),
            max_iterations: pmd_core::stopping::DEFAULT_MAX_ITERATIONS,
            ranking_modes: RankingMode::ALL.to_vec(),
            icl: vec![false, true],
            rationale_free: true,
            length_penalty: None,
            backend: SyntheticParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> EngineResult<()> {
        let fail = |m: String| Err(EngineError::Validation(m));
        if self.examples == 0 {
            return fail("synthetic example count must be positive".into());
        }
        if self.successes > self.examples {
            return fail(format!(
                "{} successes requested but only {} examples",
                self.successes, self.examples
            ));
        }
        if self.filtered > self.examples {
            return fail(format!(
                "{} filtered examples requested but only {} examples",
                self.filtered, self.examples
            ));
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be positive".into());
        }
        if self.backend.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.backend.entail_prior) {
            return fail("entail_prior must lie in [0, 1]".into());
        }
        if self.ranking_modes.is_empty() && !self.rationale_free {
            return fail("nothing to record: no ranking mode and no rationale-free run".into());
        }
        Ok(())
    }

    /// Run configurations whose backend traffic the fixture covers.
    pub fn covered_runs(&self, seed: u64) -> Vec<RunConfig> {
        let base = RunConfig {
            max_iterations: self.max_iterations,
            length_penalty: self.length_penalty,
            seed,
            full_length: true,
            ..RunConfig::default()
        };
        let mut runs = Vec::new();
        for &mode in &self.ranking_modes {
            for &icl in &self.icl {
                runs.push(RunConfig {
                    ranking_mode: mode,
                    icl_enabled: icl,
                    ..base.clone()
                });
            }
        }
        if self.rationale_free {
            runs.push(RunConfig {
                rationale_free: true,
                ..base
            });
        }
        runs
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub examples: Vec<Example>,
    pub dataset_jsonl: String,
    pub fixture: Fixture,
}

pub fn synthetic_examples(config: &SynthConfig, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..config.examples).collect();
    order.shuffle(&mut rng);
    let mut success = vec![false; config.examples];
    for &i in &order[..config.successes] {
        success[i] = true;
    }
    let mut procedures = PROCEDURES.to_vec();
    procedures.shuffle(&mut rng);
    let mut mistakes = 0;
    (0..config.examples)
        .map(|i| {
            let id = format!("{}-{:03}", config.id_prefix, i + 1);
            let (label, mistake_type) = if success[i] {
                (Label::Success, MistakeType::None)
            } else {
                mistakes += 1;
                (Label::Mistake, MISTAKE_TYPES[(mistakes - 1) % MISTAKE_TYPES.len()])
            };
            Example {
                frame_ref: format!("frames/{id}.jpg"),
                id,
                procedure_text: procedures[i % procedures.len()].to_string(),
                label,
                mistake_type,
                split: if i % 2 == 0 { Split::Val } else { Split::Test },
            }
        })
        .collect()
}

/// Dataset plus a fixture covering every backend call of the configured
/// runs under `seed`.
pub fn generate_synthetic_fixture(config: &SynthConfig, seed: u64) -> EngineResult<SynthOutput> {
    config.validate()?;
    let examples = synthetic_examples(config, seed);

    let params = SyntheticParams {
        seed,
        ..config.backend.clone()
    };
    let mut backend = SyntheticBackend::new(params);
    for e in &examples {
        backend.register_frame(&e.frame_ref, e.label);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut picks: Vec<&Example> = examples.iter().collect();
    picks.shuffle(&mut rng);
    for e in &picks[..config.filtered] {
        backend.filter_frame(&e.frame_ref);
    }

    let mut fixture = Fixture::new(config.backend.embed_dim);
    fixture.header.entail_prior = config.backend.entail_prior;
    let engine = Engine::new(RecordingBackend::with_fixture(backend, fixture));
    for run in config.covered_runs(seed) {
        engine.run_dataset(&examples, &run, 1)?;
    }
    Ok(SynthOutput {
        dataset_jsonl: to_jsonl(&examples),
        examples,
        fixture: engine.backend().fixture(),
    })
}
