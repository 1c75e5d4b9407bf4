//! Speculative decoding with greedy tree verification.
//!
//! A drafter (possibly with a trimmed head) grows a [`DraftTree`]; the target
//! walks it, accepting draft tokens only where they equal its own greedy
//! choice, and always contributes one token of its own. The emitted sequence
//! is therefore exactly the target's greedy decode.

mod tree;

pub use tree::{build_draft_tree, DraftNode, DraftTree, TreeConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Drafter, LanguageModel};
use crate::vocab::VocabMapping;
use crate::TokenId;

/// Outcome of verifying one draft tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub accepted: Vec<TokenId>,
    /// Target's own token after the accepted prefix.
    pub bonus: TokenId,
}

/// Walks the tree from the root, following the child whose token equals the
/// target's greedy choice, and stops at the first mismatch or leaf.
pub fn verify_tree_greedy<M: LanguageModel + ?Sized>(
    target: &M,
    prefix: &[TokenId],
    tree: &DraftTree,
) -> Result<Verification> {
    let mut context = prefix.to_vec();
    let mut accepted = Vec::new();
    let mut node = None;
    loop {
        let greedy = target.greedy_token(&context)?;
        match tree.children(node).find(|&c| tree.nodes()[c].token == greedy) {
            Some(child) => {
                accepted.push(greedy);
                context.push(greedy);
                node = Some(child);
            }
            None => {
                return Ok(Verification {
                    accepted,
                    bonus: greedy,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateParams {
    pub max_new: usize,
    /// Generation stops right after this token is emitted.
    pub eos: Option<TokenId>,
}

/// Per-generation block accounting.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeStats {
    /// Target verification passes.
    pub blocks: usize,
    /// Tokens emitted.
    pub produced: usize,
    /// Draft tokens accepted in each block; every block also emits one
    /// target token, unless truncated at the generation limit.
    pub accepted_per_block: Vec<usize>,
    /// Sequential draft passes per block.
    pub draft_passes_per_block: usize,
}

impl DecodeStats {
    pub fn new(draft_passes_per_block: usize) -> Self {
        DecodeStats {
            draft_passes_per_block,
            ..Default::default()
        }
    }

    fn push_block(&mut self, accepted: usize) {
        self.blocks += 1;
        self.produced += accepted + 1;
        self.accepted_per_block.push(accepted);
    }

    pub fn total_accepted(&self) -> usize {
        self.accepted_per_block.iter().sum()
    }

    /// Appends another generation's blocks.
    pub fn absorb(&mut self, other: &DecodeStats) {
        self.blocks += other.blocks;
        self.produced += other.produced;
        self.accepted_per_block.extend_from_slice(&other.accepted_per_block);
    }

    /// `produced = Σ (accepted + 1)` and `accepted ≤ depth` for every block.
    pub fn check(&self) -> Result<()> {
        if self.accepted_per_block.len() != self.blocks {
            return Err(Error::Invariant("block count mismatch".into()));
        }
        if self.total_accepted() + self.blocks != self.produced {
            return Err(Error::Invariant(format!(
                "produced {} != accepted {} + blocks {}",
                self.produced,
                self.total_accepted(),
                self.blocks
            )));
        }
        if let Some(&a) = self
            .accepted_per_block
            .iter()
            .find(|&&a| a > self.draft_passes_per_block)
        {
            return Err(Error::Invariant(format!(
                "block accepted {a} tokens with only {} draft passes",
                self.draft_passes_per_block
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpdOutput {
    /// Generated tokens, prompt excluded.
    pub tokens: Vec<TokenId>,
    pub stats: DecodeStats,
}

/// Runs draft-then-verify blocks until EOS or `max_new` tokens.
///
/// The final block is cut at the limit (or just after EOS) and its accepted
/// count reduced to match.
pub fn spd_generate<M, D>(
    target: &M,
    draft: &D,
    mapping: &VocabMapping,
    prompt: &[TokenId],
    params: &GenerateParams,
    cfg: &TreeConfig,
) -> Result<SpdOutput>
where
    M: LanguageModel + ?Sized,
    D: Drafter + ?Sized,
{
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    if params.max_new == 0 {
        return Err(Error::Config("max_new must be at least 1".into()));
    }
    if mapping.vocab_size() != target.vocab_size() {
        return Err(Error::Config(format!(
            "mapping covers {} ids but the target vocabulary has {}",
            mapping.vocab_size(),
            target.vocab_size()
        )));
    }
    let mut context = prompt.to_vec();
    let mut stats = DecodeStats::new(cfg.depth);
    let mut done = false;
    while !done && stats.produced < params.max_new {
        let tree = build_draft_tree(draft, mapping, &context, cfg)?;
        let verdict = verify_tree_greedy(target, &context, &tree)?;
        let mut block = verdict.accepted;
        block.push(verdict.bonus);
        if let Some(pos) = params.eos.and_then(|e| block.iter().position(|&t| t == e)) {
            block.truncate(pos + 1);
            done = true;
        }
        block.truncate(params.max_new - stats.produced);
        stats.push_block(block.len() - 1);
        context.extend_from_slice(&block);
    }
    Ok(SpdOutput {
        tokens: context.split_off(prompt.len()),
        stats,
    })
}

/// Plain autoregressive greedy decoding with the target alone.
pub fn greedy_decode<M: LanguageModel + ?Sized>(
    target: &M,
    prompt: &[TokenId],
    params: &GenerateParams,
) -> Result<Vec<TokenId>> {
    let mut context = prompt.to_vec();
    for _ in 0..params.max_new {
        let t = target.greedy_token(&context)?;
        context.push(t);
        if Some(t) == params.eos {
            break;
        }
    }
    Ok(context.split_off(prompt.len()))
}
