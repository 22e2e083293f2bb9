//! Early-stopping rule for the self-dialog.

use serde::{Deserialize, Serialize};

use crate::domain::StopReason;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERATIONS: usize = 10;

/// Stopping hyperparameters: stabilization delta, confidence margin and the
/// iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingParams {
    pub delta: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl StoppingParams {
    pub fn new(delta: f64, epsilon: f64, max_iterations: usize) -> Result<Self> {
        let p = Self {
            delta,
            epsilon,
            max_iterations,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidConfig(alloc::format!(
                "epsilon must lie in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Decides whether the dialog stops after the latest iteration.
///
/// Precedence is confident, then stabilized, then the iteration cap.
/// Stabilization needs two consecutive deltas, hence at least three values.
pub fn should_stop(likelihoods: &[f64], params: &StoppingParams) -> Option<StopReason> {
    let n = likelihoods.len();
    let &latest = likelihoods.last()?;
    if latest < params.epsilon || latest > 1.0 - params.epsilon {
        return Some(StopReason::Confident);
    }
    if n >= 3 {
        let d1 = (likelihoods[n - 1] - likelihoods[n - 2]).abs();
        let d2 = (likelihoods[n - 2] - likelihoods[n - 3]).abs();
        if d1 < params.delta && d2 < params.delta {
            return Some(StopReason::Stabilized);
        }
    }
    if n >= params.max_iterations {
        return Some(StopReason::MaxIterations);
    }
    None
}

/// Length of the prefix a full-length trace would have been cut to, and the
/// reason. `None` when the rule never fires inside the trace.
pub fn truncation_point(likelihoods: &[f64], params: &StoppingParams) -> Option<(usize, StopReason)> {
    (1..=likelihoods.len())
        .find_map(|k| should_stop(&likelihoods[..k], params).map(|r| (k, r)))
}
