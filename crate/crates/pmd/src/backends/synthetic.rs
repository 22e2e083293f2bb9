use std::collections::{BTreeMap, BTreeSet};

use pmd_core::{CandidateQuestion, CandidateSource, Label, YesNo};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scripted::hashed_vector;
use super::{top_candidates, Backend, BackendError, BackendResult, CandidateBatch};

/// Shape of the generated responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub seed: u64,
    pub embed_dim: usize,
    pub entail_prior: f64,
    /// Logit scale of a question's answer given the frame's ground truth.
    pub vqa_strength: f64,
    /// Logit added to the success likelihood per sure, informative answer.
    pub success_strength: f64,
    /// Logit added to the entailment score per statement.
    pub entail_strength: f64,
    /// Half-width of the uniform logit noise on every probability.
    pub noise: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 0,
            embed_dim: 8,
            entail_prior: 0.5,
            vqa_strength: 0.6,
            success_strength: 0.9,
            entail_strength: 1.1,
            noise: 1.8,
        }
    }
}

const TEMPLATES: [&str; 16] = [
    "Is there a {n} in the image?",
    "Is the {n} visible?",
    "Is the {n} on the table?",
    "Is the {n} in the person's hand?",
    "Is the {n} open?",
    "Is the {n} closed?",
    "Is the {n} empty?",
    "Is the {n} clean?",
    "Is the {n} upright?",
    "Is the {n} on the counter?",
    "Does the {n} look different than before?",
    "Does the {n} have anything on it?",
    "Has the {n} been moved?",
    "Has the {n} been cut?",
    "Are there pieces of {n} on the board?",
    "Is the person touching the {n}?",
];

/// Generated by constrained decoding only in name: fails the surface check.
const MALFORMED_TEMPLATE: &str = "What color is the {n}?";

/// Deterministic stand-in for all model capabilities. Answers are derived
/// from hashes of the inputs and biased towards each frame's ground-truth
/// label, so dialogs drift towards the correct decision.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    params: SyntheticParams,
    frames: BTreeMap<String, Label>,
    filtered_frames: BTreeSet<String>,
}

fn unit(seed: u64, parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let bytes = h.finalize();
    let v = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    (v >> 11) as f64 / (1u64 << 53) as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Procedure quoted after the last `procedure "` or `Procedure: "` marker.
fn procedure_in(prompt: &str) -> Option<&str> {
    let start = ["procedure \"", "Procedure: \""]
        .iter()
        .filter_map(|m| prompt.rfind(m).map(|i| i + m.len()))
        .max()?;
    let rest = &prompt[start..];
    rest.find('"').map(|end| &rest[..end])
}

fn object_noun(procedure: &str) -> String {
    procedure
        .split_whitespace()
        .last()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .unwrap_or_else(|| "object".into())
}

fn asked_in(prompt: &str) -> BTreeSet<String> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("Q: "))
        .map(|q| q.trim().to_lowercase())
        .collect()
}

/// Sure answers in a success-classification context, as (question, answer).
fn answered_in(prompt: &str) -> Vec<(String, YesNo)> {
    let lines: Vec<&str> = prompt.lines().collect();
    lines
        .windows(2)
        .filter_map(|w| {
            let q = w[0].strip_prefix("Q: ")?;
            let a = match w[1] {
                "A: Yes" => YesNo::Yes,
                "A: No" => YesNo::No,
                _ => return None,
            };
            Some((q.to_string(), a))
        })
        .collect()
}

fn sign(a: YesNo) -> f64 {
    match a {
        YesNo::Yes => 1.0,
        YesNo::No => -1.0,
    }
}

impl SyntheticBackend {
    pub fn new(params: SyntheticParams) -> Self {
        Self {
            params,
            frames: BTreeMap::new(),
            filtered_frames: BTreeSet::new(),
        }
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }

    /// Ground truth the answers are biased towards.
    pub fn register_frame(&mut self, frame_ref: &str, label: Label) {
        self.frames.insert(frame_ref.into(), label);
    }

    /// Success classification on this frame is refused by the content filter.
    pub fn filter_frame(&mut self, frame_ref: &str) {
        self.filtered_frames.insert(frame_ref.into());
    }

    fn u(&self, parts: &[&str]) -> f64 {
        unit(self.params.seed, parts)
    }

    fn noise(&self, parts: &[&str]) -> f64 {
        (self.u(parts) * 2.0 - 1.0) * self.params.noise
    }

    /// +1 when a Yes answer to the question supports success, -1 otherwise.
    fn polarity(&self, question: &str) -> f64 {
        if self.u(&["polarity", &question.trim().to_lowercase()]) < 0.5 {
            -1.0
        } else {
            1.0
        }
    }

    /// In [0, 1]: how much the question bears on success.
    fn weight(&self, question: &str) -> f64 {
        self.u(&["weight", &question.trim().to_lowercase()])
    }

    fn truth(&self, frame_ref: &str) -> f64 {
        match self.frames.get(frame_ref) {
            Some(Label::Success) => 1.0,
            Some(Label::Mistake) => -1.0,
            None => 0.0,
        }
    }

    /// Inverts the synthetic rephrasing back into its question and answer.
    fn parse_statements(premise: &str) -> Vec<(String, YesNo)> {
        premise
            .split("It is ")
            .filter_map(|s| {
                let s = s.trim().trim_end_matches('.');
                if let Some(q) = s.strip_prefix("true that ") {
                    Some((q.to_string(), YesNo::Yes))
                } else {
                    s.strip_prefix("false that ").map(|q| (q.to_string(), YesNo::No))
                }
            })
            .collect()
    }
}

impl Backend for SyntheticBackend {
    fn generate_candidates(&self, prompt: &str, max_candidates: usize) -> BackendResult<CandidateBatch> {
        let noun = object_noun(procedure_in(prompt).unwrap_or_default());
        let asked = asked_in(prompt);
        let mut pool: Vec<CandidateQuestion> = TEMPLATES
            .iter()
            .map(|t| t.replace("{n}", &noun))
            .filter(|q| !asked.contains(&q.to_lowercase()))
            .map(|q| {
                let ll = -1.0 - 7.0 * self.u(&["ll", prompt, &q]);
                CandidateQuestion::new(q, ll, CandidateSource::DialogContext)
            })
            .collect();
        if self.u(&["malformed", prompt]) < 0.15 {
            let q = MALFORMED_TEMPLATE.replace("{n}", &noun);
            pool.push(CandidateQuestion::new(q, -0.5, CandidateSource::DialogContext));
        }
        // keep a hash-selected subset so consecutive prompts see different pools
        pool.sort_by(|a, b| {
            self.u(&["pick", prompt, &a.text])
                .total_cmp(&self.u(&["pick", prompt, &b.text]))
                .then_with(|| a.text.cmp(&b.text))
        });
        pool.truncate(max_candidates);
        Ok(CandidateBatch {
            candidates: top_candidates(pool, max_candidates),
            skip: false,
        })
    }

    fn answer_yes_probability(&self, question: &str, frame_ref: &str) -> BackendResult<f64> {
        let logit = self.truth(frame_ref) * self.polarity(question) * self.params.vqa_strength
            + self.noise(&["vqa", question, frame_ref]);
        Ok(sigmoid(logit))
    }

    fn success_yes_probability(&self, prompt: &str, frame_ref: &str) -> BackendResult<f64> {
        if self.filtered_frames.contains(frame_ref) {
            return Err(BackendError::ContentFiltered(format!("frame {frame_ref}")));
        }
        let evidence: f64 = answered_in(prompt)
            .iter()
            .map(|(q, a)| sign(*a) * self.polarity(q) * self.weight(q))
            .sum();
        let logit = evidence * self.params.success_strength
            + 0.3 * self.truth(frame_ref)
            + self.noise(&["success", prompt, frame_ref]) * 0.5;
        Ok(sigmoid(logit))
    }

    fn rephrase(&self, question: &str, answer: YesNo) -> BackendResult<String> {
        let stem = question.trim().trim_end_matches('?');
        Ok(match answer {
            YesNo::Yes => format!("It is true that {stem}."),
            YesNo::No => format!("It is false that {stem}."),
        })
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> BackendResult<f64> {
        if premise.trim().is_empty() {
            return Ok(self.params.entail_prior);
        }
        let evidence: f64 = Self::parse_statements(premise)
            .iter()
            .map(|(q, a)| {
                let q = format!("{q}?");
                sign(*a) * self.polarity(&q) * self.weight(&q)
            })
            .sum();
        let logit = evidence * self.params.entail_strength + self.noise(&["entail", premise, hypothesis]) * 0.25;
        Ok(sigmoid(logit))
    }

    fn embed(&self, text: &str) -> BackendResult<Vec<f64>> {
        Ok(hashed_vector(text, self.params.embed_dim))
    }
}
