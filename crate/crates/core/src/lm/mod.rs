//! Deterministic desk-scale language models.
//!
//! [`NGramModel`] is a count-based model with add-α smoothing and backoff to
//! the longest observed context. [`LinearHeadModel`] owns an explicit V×d
//! LM-head matrix, so trimming it is a literal row selection. Both score
//! contexts given in full-vocabulary ids; a [`TrimmedHeadModel`] keeps that
//! input space and only narrows the output.

mod io;
mod linear;
mod ngram;
mod trimmed;

pub use io::{load_model, save_model, AnyModel};
pub use linear::{FitOptions, LinearHeadModel, Matrix, Trunk};
pub use ngram::{train_ngram, NGramModel};
pub use trimmed::{trim_head, TrimmedHeadModel};

use crate::error::{Error, Result};
use crate::TokenId;

/// Next-token scorer over the full vocabulary.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Number of parameters read by one forward pass.
    fn param_count(&self) -> u64;

    /// Natural-log scores for every token id, length `vocab_size()`.
    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>>;

    /// Greedy next token: the argmax of [`LanguageModel::next_logits`],
    /// smallest id on ties.
    fn greedy_token(&self, context: &[TokenId]) -> Result<TokenId> {
        Ok(argmax(&self.next_logits(context)?) as TokenId)
    }

    /// Parameters in the output projection, zero when the model has none.
    fn head_params(&self) -> u64 {
        0
    }
}

/// Anything that can propose draft tokens. Output slots are indices into a
/// (possibly trimmed) draft vocabulary; a [`crate::vocab::VocabMapping`]
/// turns them back into target ids.
pub trait Drafter: Send + Sync {
    fn output_size(&self) -> usize;

    fn draft_logits(&self, context: &[TokenId]) -> Result<Vec<f64>>;

    /// Parameters read per draft forward pass.
    fn draft_params(&self) -> u64;

    fn draft_head_params(&self) -> u64;
}

impl<M: LanguageModel + ?Sized> Drafter for M {
    fn output_size(&self) -> usize {
        self.vocab_size()
    }

    fn draft_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.next_logits(context)
    }

    fn draft_params(&self) -> u64 {
        self.param_count()
    }

    fn draft_head_params(&self) -> u64 {
        self.head_params()
    }
}

pub(crate) fn check_context(context: &[TokenId], vocab_size: usize) -> Result<()> {
    match context.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&id) => Err(Error::IdOutOfRange { id, vocab_size }),
        None => Ok(()),
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Log-softmax with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&x| x - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.1, 0.9, 0.9, 0.2]), 1);
        assert_eq!(argmax(&[1.0]), 0);
        assert_eq!(argmax(&[-3.0, -3.0]), 0);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }
}
