use super::select::TrimSelection;
use crate::error::{Error, Result};
use crate::TokenId;

/// Marks a target id that has no slot in the trimmed vocabulary.
pub const ABSENT: u32 = u32::MAX;

/// Bidirectional index map between the trimmed draft vocabulary and the
/// full target vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMapping {
    to_target: Vec<TokenId>,
    to_trim: Vec<u32>,
}

impl VocabMapping {
    pub fn identity(vocab_size: usize) -> Self {
        VocabMapping {
            to_target: (0..vocab_size as TokenId).collect(),
            to_trim: (0..vocab_size as u32).collect(),
        }
    }

    /// Number of trimmed slots (K).
    pub fn len(&self) -> usize {
        self.to_target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_target.is_empty()
    }

    /// Size of the full vocabulary (V).
    pub fn vocab_size(&self) -> usize {
        self.to_trim.len()
    }

    pub fn is_identity(&self) -> bool {
        self.to_target.len() == self.to_trim.len()
    }

    #[inline]
    pub fn to_target(&self, trim_index: usize) -> TokenId {
        self.to_target[trim_index]
    }

    /// Trimmed index of a target id, or `None` when it was trimmed away.
    #[inline]
    pub fn to_trim(&self, target: TokenId) -> Option<usize> {
        match self.to_trim.get(target as usize) {
            Some(&ABSENT) | None => None,
            Some(&i) => Some(i as usize),
        }
    }

    pub fn target_ids(&self) -> &[TokenId] {
        &self.to_target
    }

    /// Raw inverse table, `ABSENT` for trimmed-away ids.
    pub fn trim_table(&self) -> &[u32] {
        &self.to_trim
    }
}

pub fn build_mapping(selection: &TrimSelection, vocab_size: usize) -> Result<VocabMapping> {
    let mut to_trim = vec![ABSENT; vocab_size];
    for (i, &t) in selection.kept().iter().enumerate() {
        let slot = to_trim.get_mut(t as usize).ok_or(Error::IdOutOfRange {
            id: t,
            vocab_size,
        })?;
        *slot = i as u32;
    }
    Ok(VocabMapping {
        to_target: selection.kept().to_vec(),
        to_trim,
    })
}
