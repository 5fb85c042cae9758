//! N-gram metrics and the reward combinator.

mod ngram;
mod reward;
mod scores;

pub use ngram::{clipped_matches, precision_n, NgramProfile};
pub use reward::{base_score, combined_reward, BaseMetric, DasScorer, RewardBreakdown, RewardInputs, RewardSpec};
pub use scores::{anss, bleu, corpus_bleu, gleu, lcs_len, qss, rouge_l, rouge_l_multi, ROUGE_BETA};
