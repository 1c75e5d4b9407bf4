use std::collections::{BTreeMap, HashMap};

use super::{check_context, LanguageModel};
use crate::error::{Error, Result};
use crate::TokenId;

/// Follower counts of one context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ContextCounts {
    pub(crate) total: u64,
    /// Sorted by token id.
    pub(crate) followers: Vec<(TokenId, u64)>,
}

/// Add-α smoothed n-gram model. Scoring uses the longest suffix of the
/// context (at most `order - 1` tokens) that was observed in training.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    /// Keyed by [`context_hash`].
    tables: HashMap<u64, ContextCounts>,
}

/// FNV-1a over the little-endian ids, length-prefixed, with a splitmix finalizer.
pub(crate) fn context_hash(context: &[TokenId]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let words = std::iter::once(context.len() as u32).chain(context.iter().copied());
    for b in words.flat_map(u32::to_le_bytes) {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Trains an n-gram model of the given order over independent streams.
/// N-grams never cross stream boundaries.
pub fn train_ngram<I, S>(streams: I, order: usize, alpha: f64, vocab_size: usize) -> Result<NGramModel>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[TokenId]>,
{
    if order == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("smoothing alpha must be positive, got {alpha}")));
    }
    let mut raw: HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>> = HashMap::new();
    let mut seen = 0usize;
    for stream in streams {
        let s = stream.as_ref();
        check_context(s, vocab_size)?;
        seen += s.len();
        for (pos, &tok) in s.iter().enumerate() {
            for len in 0..order.min(pos + 1) {
                let ctx = &s[pos - len..pos];
                *raw.entry(ctx.to_vec()).or_default().entry(tok).or_insert(0) += 1;
            }
        }
    }
    if seen == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut tables = HashMap::with_capacity(raw.len());
    let mut owners: HashMap<u64, Vec<TokenId>> = HashMap::with_capacity(raw.len());
    for (ctx, followers) in raw {
        let key = context_hash(&ctx);
        if let Some(prev) = owners.insert(key, ctx.clone()) {
            return Err(Error::Invariant(format!(
                "context hash collision between {prev:?} and {ctx:?}"
            )));
        }
        let followers: Vec<(TokenId, u64)> = followers.into_iter().collect();
        let total = followers.iter().map(|&(_, c)| c).sum();
        tables.insert(key, ContextCounts { total, followers });
    }
    Ok(NGramModel {
        order,
        alpha,
        vocab_size,
        tables,
    })
}

impl NGramModel {
    pub(crate) fn from_parts(
        order: usize,
        alpha: f64,
        vocab_size: usize,
        tables: HashMap<u64, ContextCounts>,
    ) -> Self {
        NGramModel {
            order,
            alpha,
            vocab_size,
            tables,
        }
    }

    pub(crate) fn tables(&self) -> &HashMap<u64, ContextCounts> {
        &self.tables
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Counts for the longest observed suffix of `context`.
    fn lookup(&self, context: &[TokenId]) -> &ContextCounts {
        let max_len = (self.order - 1).min(context.len());
        for len in (0..=max_len).rev() {
            if let Some(c) = self.tables.get(&context_hash(&context[context.len() - len..])) {
                return c;
            }
        }
        unreachable!("the unigram table exists for every trained model")
    }

    #[inline]
    fn smoothed(&self, count: u64, total: u64) -> f64 {
        (count as f64 + self.alpha) / (total as f64 + self.alpha * self.vocab_size as f64)
    }

    /// Smoothed probability of `token` after `context`.
    pub fn probability(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        check_context(context, self.vocab_size)?;
        check_context(&[token], self.vocab_size)?;
        let entry = self.lookup(context);
        let count = entry
            .followers
            .binary_search_by_key(&token, |&(t, _)| t)
            .map(|i| entry.followers[i].1)
            .unwrap_or(0);
        Ok(self.smoothed(count, entry.total))
    }
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn param_count(&self) -> u64 {
        self.tables.values().map(|c| c.followers.len() as u64).sum()
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.vocab_size)?;
        let entry = self.lookup(context);
        let mut logits = vec![self.smoothed(0, entry.total).ln(); self.vocab_size];
        for &(t, c) in &entry.followers {
            logits[t as usize] = self.smoothed(c, entry.total).ln();
        }
        Ok(logits)
    }

    fn greedy_token(&self, context: &[TokenId]) -> Result<TokenId> {
        check_context(context, self.vocab_size)?;
        let entry = self.lookup(context);
        // Every follower outscores every unseen token, so the argmax is the
        // most frequent follower; followers are id-sorted, so the first max wins.
        let mut best = entry.followers[0];
        for &f in &entry.followers[1..] {
            if f.1 > best.1 {
                best = f;
            }
        }
        Ok(best.0)
    }
}
