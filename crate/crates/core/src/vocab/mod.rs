//! Vocabulary handling: tokenization, calibration frequency counting,
//! trimmed-vocabulary selection and the draft-to-target index mapping.
//!
//! The tokenizer is deliberately simple (lowercase, whitespace split, UNK
//! fallback). Frequency counting and selection only ever see token ids, so
//! they work unchanged for any tokenizer.

mod counter;
mod mapping;
mod select;

use std::collections::{BTreeSet, HashMap};

pub use counter::{count_token_frequencies, merge_counters, FrequencyCounter};
pub use mapping::{build_mapping, VocabMapping, ABSENT};
pub use select::{select_trim, select_trim_with, TrimCriterion, TrimSelection};

use crate::error::{Error, Result};
use crate::TokenId;

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";

/// Dense token table. Ids run over `0..len()`; the last two ids are always
/// UNK and EOS, and both are members of the special set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    unk: TokenId,
    eos: TokenId,
    special: BTreeSet<TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from surface tokens in id order and appends UNK
    /// and EOS. Duplicates and reserved strings are dropped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut table: Vec<String> = Vec::new();
        let mut id_of = HashMap::new();
        for tok in tokens {
            let tok = tok.into();
            if tok == UNK_TOKEN || tok == EOS_TOKEN || id_of.contains_key(&tok) {
                continue;
            }
            id_of.insert(tok.clone(), table.len() as TokenId);
            table.push(tok);
        }
        let unk = table.len() as TokenId;
        table.push(UNK_TOKEN.to_string());
        id_of.insert(UNK_TOKEN.to_string(), unk);
        let eos = table.len() as TokenId;
        table.push(EOS_TOKEN.to_string());
        id_of.insert(EOS_TOKEN.to_string(), eos);
        Vocabulary {
            tokens: table,
            id_of,
            unk,
            eos,
            special: [unk, eos].into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn special(&self) -> &BTreeSet<TokenId> {
        &self.special
    }

    /// Renders ids back to text, skipping EOS.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != self.eos)
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Tokenizes without the trailing EOS; used for prompts.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| {
                let w = w.to_lowercase();
                self.id_of.get(&w).copied().unwrap_or(self.unk)
            })
            .collect()
    }
}

/// Lowercases, splits on whitespace, maps unknown words to UNK and appends EOS.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    let mut ids = vocab.encode(text);
    ids.push(vocab.eos);
    ids
}

/// Keeps the `max_size - 2` most frequent surface tokens (ties broken by
/// lexicographic order) and appends UNK and EOS.
pub fn build_vocab<I, S>(corpus: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size < 3 {
        return Err(Error::Config(format!(
            "vocabulary max_size must be at least 3, got {max_size}"
        )));
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        for w in text.as_ref().split_whitespace() {
            let w = w.to_lowercase();
            if w == UNK_TOKEN || w == EOS_TOKEN {
                continue;
            }
            *freq.entry(w).or_insert(0) += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 2);
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(w, _)| w)))
}
