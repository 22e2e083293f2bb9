//! JSON run configuration file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pmd_core::prompts::IclBank;
use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendConfig, HttpBackend, ScriptedBackend};
use crate::error::{EngineError, EngineResult};
use crate::orchestrator::RunConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Answers from a fixture file; never touches the network.
    Scripted { fixture: PathBuf },
    Http(BackendConfig),
}

/// Run parameters at the top level plus backend, dataset and output
/// locations. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Replaces the bundled in-context question bank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icl_bank: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> EngineResult<Self> {
        let invalid = |e: serde_json::Error| EngineError::Validation(format!("config: {e}"));
        let value: serde_json::Value = serde_json::from_str(text).map_err(invalid)?;
        // flattening disables unknown-field rejection, so check keys here
        if let Some(map) = value.as_object() {
            let mut known = serde_json::to_value(RunConfig {
                full_length: true,
                ..RunConfig::default()
            })
            .expect("run config serializes");
            let known = known.as_object_mut().expect("run config is an object");
            for key in ["backend", "dataset", "out_dir", "icl_bank", "workers", "synth"] {
                known.insert(key.into(), serde_json::Value::Null);
            }
            if let Some(key) = map.keys().find(|k| !known.contains_key(*k)) {
                return Err(EngineError::Validation(format!("config: unknown field `{key}`")));
            }
        }
        serde_json::from_value(value).map_err(invalid)
    }

    pub fn load(path: &Path) -> EngineResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            EngineError::Validation(m) => EngineError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.dataset, &mut self.out_dir, &mut self.icl_bank].into_iter().flatten() {
            resolve(base, p);
        }
        match &mut self.backend {
            Some(BackendSpec::Scripted { fixture }) => resolve(base, fixture),
            Some(BackendSpec::Http(c)) => {
                if let Some(p) = &mut c.replay_log {
                    resolve(base, p);
                }
            }
            None => {}
        }
    }

    pub fn icl_bank(&self) -> EngineResult<IclBank> {
        let Some(path) = &self.icl_bank else {
            return Ok(IclBank::bundled());
        };
        let text = fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
        let bank: IclBank = serde_json::from_str(&text)
            .map_err(|e| EngineError::Validation(format!("{}: {e}", path.display())))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn build_backend(&self) -> EngineResult<Arc<dyn Backend>> {
        match &self.backend {
            Some(BackendSpec::Scripted { fixture }) => Ok(Arc::new(ScriptedBackend::from_path(fixture)?)),
            Some(BackendSpec::Http(c)) => Ok(Arc::new(HttpBackend::new(c.clone())?)),
            None => Err(EngineError::Validation("config has no `backend` section".into())),
        }
    }
}
