use std::sync::Arc;

use super::linear::{LinearHeadModel, Matrix, Trunk};
use super::{check_context, Drafter, LanguageModel};
use crate::error::Result;
use crate::vocab::{build_mapping, TrimSelection, VocabMapping};
use crate::TokenId;

#[derive(Clone)]
enum Scorer {
    /// Trunk shared with the full model plus the selected head rows.
    Head {
        trunk: Arc<Trunk>,
        head: Matrix,
    },
    /// Any model; full logits are computed and gathered.
    Gather(Arc<dyn LanguageModel>),
}

/// A drafter whose output covers only the kept tokens. Inputs stay in the
/// full (target) id space.
#[derive(Clone)]
pub struct TrimmedHeadModel {
    scorer: Scorer,
    mapping: VocabMapping,
    base_params: u64,
    vocab_size: usize,
}

impl std::fmt::Debug for TrimmedHeadModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrimmedHeadModel")
            .field("kept", &self.mapping.len())
            .field("vocab_size", &self.vocab_size)
            .field("param_count", &self.param_count())
            .finish()
    }
}

/// Keeps only the head rows of the selected tokens.
pub fn trim_head(model: &LinearHeadModel, selection: &TrimSelection) -> Result<TrimmedHeadModel> {
    let mapping = build_mapping(selection, model.vocab_size())?;
    let head = model.head().select_rows(mapping.target_ids())?;
    Ok(TrimmedHeadModel {
        scorer: Scorer::Head {
            trunk: model.shared_trunk(),
            head,
        },
        mapping,
        base_params: model.param_count(),
        vocab_size: model.vocab_size(),
    })
}

impl TrimmedHeadModel {
    /// Restricts an arbitrary model's output by gathering from its full logits.
    /// No parameters are saved.
    pub fn gather(base: Arc<dyn LanguageModel>, selection: &TrimSelection) -> Result<Self> {
        let vocab_size = base.vocab_size();
        let mapping = build_mapping(selection, vocab_size)?;
        Ok(TrimmedHeadModel {
            base_params: base.param_count(),
            scorer: Scorer::Gather(base),
            mapping,
            vocab_size,
        })
    }

    pub fn mapping(&self) -> &VocabMapping {
        &self.mapping
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of kept tokens (K).
    pub fn kept(&self) -> usize {
        self.mapping.len()
    }

    pub fn head(&self) -> Option<&Matrix> {
        match &self.scorer {
            Scorer::Head { head, .. } => Some(head),
            Scorer::Gather(_) => None,
        }
    }

    /// Base parameters minus the removed head rows, `d·(V−K)`.
    pub fn param_count(&self) -> u64 {
        match &self.scorer {
            Scorer::Head { trunk, .. } => {
                self.base_params - (trunk.dim() * (self.vocab_size - self.kept())) as u64
            }
            Scorer::Gather(_) => self.base_params,
        }
    }

    pub fn head_params(&self) -> u64 {
        match &self.scorer {
            Scorer::Head { head, .. } => head.len() as u64,
            Scorer::Gather(base) => base.head_params(),
        }
    }

    /// Entry `i` is the full model's logit for target id `to_target(i)`.
    pub fn trimmed_next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.vocab_size)?;
        match &self.scorer {
            Scorer::Head { trunk, head } => Ok(head.mul_vec(&trunk.hidden(context))),
            Scorer::Gather(base) => {
                let full = base.next_logits(context)?;
                Ok(self
                    .mapping
                    .target_ids()
                    .iter()
                    .map(|&t| full[t as usize])
                    .collect())
            }
        }
    }
}

impl Drafter for TrimmedHeadModel {
    fn output_size(&self) -> usize {
        self.kept()
    }

    fn draft_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.trimmed_next_logits(context)
    }

    fn draft_params(&self) -> u64 {
        self.param_count()
    }

    fn draft_head_params(&self) -> u64 {
        self.head_params()
    }
}
