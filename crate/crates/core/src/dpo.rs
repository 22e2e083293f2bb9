//! Preference pairs for question-generation fine-tuning.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::AnswerValue;
use crate::ranking::RankingMode;

/// One dialog turn as needed for pair extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTurn {
    pub example_id: String,
    pub iteration_index: usize,
    pub ranking_mode: RankingMode,
    /// The question-generation prompt of the turn.
    pub prompt: String,
    /// Candidate texts in rank order (rank 1 first).
    pub ranked_candidates: Vec<String>,
    /// Answer to the rank-1 question.
    pub chosen_answer: AnswerValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub example_id: String,
    pub iteration_index: usize,
    pub ranking_mode: RankingMode,
}

/// 1-based inclusive rank range the rejected candidate is drawn from:
/// ranks strictly below the ceiling midpoint. `None` when `m < 2`.
pub fn rejected_rank_range(m: usize) -> Option<(usize, usize)> {
    if m < 2 {
        None
    } else {
        Some((m.div_ceil(2) + 1, m))
    }
}

/// Chosen is always rank 1; rejected is drawn uniformly from the bottom
/// half. Turns with a single candidate or an Unsure chosen answer are
/// omitted.
pub fn export_dpo_pairs<R: Rng + ?Sized>(turns: &[RankedTurn], rng: &mut R) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for turn in turns {
        if turn.chosen_answer == AnswerValue::Unsure {
            continue;
        }
        let Some((lo, hi)) = rejected_rank_range(turn.ranked_candidates.len()) else {
            continue;
        };
        let rank = rng.gen_range(lo..=hi);
        let chosen = &turn.ranked_candidates[0];
        let rejected = &turn.ranked_candidates[rank - 1];
        if chosen == rejected {
            continue;
        }
        pairs.push(PreferencePair {
            prompt: turn.prompt.clone(),
            chosen: chosen.clone(),
            rejected: rejected.clone(),
            example_id: turn.example_id.clone(),
            iteration_index: turn.iteration_index,
            ranking_mode: turn.ranking_mode,
        });
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn turn(m: usize, answer: AnswerValue) -> RankedTurn {
        RankedTurn {
            example_id: "e".into(),
            iteration_index: 1,
            ranking_mode: RankingMode::Coherence,
            prompt: "p".into(),
            ranked_candidates: (1..=m).map(|i| format!("q{i}?")).collect(),
            chosen_answer: answer,
        }
    }

    #[test]
    fn bottom_half_bounds() {
        assert_eq!(rejected_rank_range(1), None);
        assert_eq!(rejected_rank_range(2), Some((2, 2)));
        assert_eq!(rejected_rank_range(3), Some((3, 3)));
        assert_eq!(rejected_rank_range(4), Some((3, 4)));
        assert_eq!(rejected_rank_range(8), Some((5, 8)));
    }

    #[test]
    fn rejected_from_bottom_half() {
        let mut seen = [false; 2];
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = export_dpo_pairs(&[turn(4, AnswerValue::Yes)], &mut rng);
            assert_eq!(pairs.len(), 1);
            assert_eq!(pairs[0].chosen, "q1?");
            match pairs[0].rejected.as_str() {
                "q3?" => seen[0] = true,
                "q4?" => seen[1] = true,
                other => panic!("rejected {other} from top half"),
            }
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn omissions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let turns = vec![turn(1, AnswerValue::Yes), turn(4, AnswerValue::Unsure), turn(2, AnswerValue::No)];
        let pairs = export_dpo_pairs(&turns, &mut rng);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].rejected, "q2?");
    }
}
