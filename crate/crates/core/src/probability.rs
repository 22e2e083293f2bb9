//! Two-token probability normalization used by VQA, success classification
//! and NLI scoring.

use serde::{Deserialize, Serialize};

/// First-position log probabilities of the `Yes` and `No` tokens, when they
/// appear in the backend's top-k list. `None` means "not in the list", which
/// is not the same as probability zero until [`normalize_top_logprobs`]
/// decides so.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenProbPair {
    pub yes_logprob: Option<f64>,
    pub no_logprob: Option<f64>,
}

impl TokenProbPair {
    pub fn new(yes_logprob: Option<f64>, no_logprob: Option<f64>) -> Self {
        Self {
            yes_logprob,
            no_logprob,
        }
    }

    pub fn swapped(self) -> Self {
        Self {
            yes_logprob: self.no_logprob,
            no_logprob: self.yes_logprob,
        }
    }
}

/// Probability of `Yes` among {Yes, No}.
///
/// A token missing from the top-k list counts as probability 0; if both are
/// missing each gets 0.5.
pub fn normalize_top_logprobs(pair: TokenProbPair) -> f64 {
    match (pair.yes_logprob, pair.no_logprob) {
        (Some(yes), Some(no)) => two_way_softmax(yes, no),
        (Some(_), None) => 1.0,
        (None, Some(_)) => 0.0,
        (None, None) => 0.5,
    }
}

/// `exp(a) / (exp(a) + exp(b))`, computed without overflow.
pub fn two_way_softmax(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        return 0.5;
    }
    if a == b {
        return 0.5;
    }
    // logistic of the difference
    let d = a - b;
    if d >= 0.0 {
        1.0 / (1.0 + libm::exp(-d))
    } else {
        let e = libm::exp(d);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_cases() {
        let ln = libm::log;
        let both = normalize_top_logprobs(TokenProbPair::new(Some(ln(0.3)), Some(ln(0.1))));
        assert!((both - 0.75).abs() < 1e-12);
        let both = normalize_top_logprobs(TokenProbPair::new(Some(ln(0.6)), Some(ln(0.2))));
        assert!((both - 0.75).abs() < 1e-12);
        assert_eq!(normalize_top_logprobs(TokenProbPair::new(Some(-3.0), None)), 1.0);
        assert_eq!(normalize_top_logprobs(TokenProbPair::new(None, Some(-0.1))), 0.0);
        assert_eq!(normalize_top_logprobs(TokenProbPair::default()), 0.5);
    }

    #[test]
    fn entailment_softmax() {
        // 1 / (1 + e^-2)
        let p = two_way_softmax(2.0, 0.0);
        assert!((p - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert_eq!(two_way_softmax(1000.0, -1000.0), 1.0);
        assert_eq!(two_way_softmax(-1000.0, 1000.0), 0.0);
    }
}
