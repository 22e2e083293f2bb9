//! JSONL datasets: loading, validation and the summary manifest.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use pmd_core::{Example, Label, MistakeType, Split};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EngineError, EngineResult};

/// One rejected line. Line numbers start at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Counts per split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Example types: successes plus one bucket per mistake type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeHistogram {
    pub success: usize,
    pub incomplete: usize,
    pub wrong_verb: usize,
    pub wrong_noun: usize,
    pub wrong_verb_noun: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub examples: usize,
    pub splits: SplitCounts,
    pub types: TypeHistogram,
    /// Hex SHA-256 of the file bytes.
    pub checksum: String,
}

impl DatasetManifest {
    pub fn build(path: &Path, bytes: &[u8], examples: &[Example]) -> Self {
        let mut splits = SplitCounts::default();
        let mut types = TypeHistogram::default();
        for e in examples {
            *match e.split {
                Split::Train => &mut splits.train,
                Split::Val => &mut splits.val,
                Split::Test => &mut splits.test,
            } += 1;
            *match e.mistake_type {
                MistakeType::None => &mut types.success,
                MistakeType::Incomplete => &mut types.incomplete,
                MistakeType::WrongVerb => &mut types.wrong_verb,
                MistakeType::WrongNoun => &mut types.wrong_noun,
                MistakeType::WrongVerbNoun => &mut types.wrong_verb_noun,
            } += 1;
        }
        Self {
            path: path.to_path_buf(),
            examples: examples.len(),
            splits,
            types,
            checksum: hex::encode(Sha256::digest(bytes)),
        }
    }

    pub fn label_count(&self, label: Label) -> usize {
        match label {
            Label::Success => self.types.success,
            Label::Mistake => self.examples - self.types.success,
        }
    }
}

/// Parses JSONL text. Blank lines are ignored. Without `strict` every bad
/// line is reported; with it parsing stops at the first one.
pub fn parse_dataset(text: &str, strict: bool) -> Result<Vec<Example>, Vec<LineIssue>> {
    let mut examples = Vec::new();
    let mut issues = Vec::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let issue = match serde_json::from_str::<Example>(raw) {
            Err(e) => Some(format!("malformed record: {e}")),
            Ok(ex) => match ex.validate() {
                Err(e) => Some(e.to_string()),
                Ok(()) => match first_line.get(&ex.id) {
                    Some(&prev) => Some(format!("duplicate id `{}` (first seen on line {prev})", ex.id)),
                    None => {
                        first_line.insert(ex.id.clone(), line);
                        examples.push(ex);
                        None
                    }
                },
            },
        };
        if let Some(message) = issue {
            issues.push(LineIssue { line, message });
            if strict {
                break;
            }
        }
    }
    if issues.is_empty() {
        Ok(examples)
    } else {
        Err(issues)
    }
}

/// Loads and validates a dataset file.
pub fn load_dataset(path: &Path, strict: bool) -> EngineResult<(Vec<Example>, DatasetManifest)> {
    let bytes = fs::read(path).map_err(|e| EngineError::io(path, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| EngineError::Validation(format!("{}: not UTF-8: {e}", path.display())))?;
    match parse_dataset(&text, strict) {
        Ok(examples) => {
            let manifest = DatasetManifest::build(path, &bytes, &examples);
            Ok((examples, manifest))
        }
        Err(issues) => Err(EngineError::Validation(format!(
            "{}: {} invalid line(s)\n{}",
            path.display(),
            issues.len(),
            issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
        ))),
    }
}

/// One compact JSON object per line.
pub fn to_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("examples serialize"));
        out.push('\n');
    }
    out
}
