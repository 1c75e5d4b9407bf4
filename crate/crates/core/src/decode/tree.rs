use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{log_softmax, Drafter};
use crate::vocab::VocabMapping;
use crate::TokenId;

/// Shape limits of a draft tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// Number of sequential draft passes (levels).
    pub depth: usize,
    /// Children proposed per expanded node.
    pub node_top_k: usize,
    /// Cap on the total number of nodes.
    pub max_tokens: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            depth: 3,
            node_top_k: 8,
            max_tokens: 32,
        }
    }
}

impl TreeConfig {
    /// A single chain of `depth` greedy draft tokens.
    pub fn chain(depth: usize) -> Self {
        TreeConfig {
            depth,
            node_top_k: 1,
            max_tokens: depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.node_top_k == 0 || self.max_tokens == 0 {
            return Err(Error::Config(
                "tree depth, node_top_k and max_tokens must all be at least 1".into(),
            ));
        }
        if self.max_tokens < self.depth {
            return Err(Error::Config(format!(
                "tree max_tokens ({}) must be at least depth ({})",
                self.max_tokens, self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DraftNode {
    /// Target-space token id.
    pub token: TokenId,
    /// `None` for children of the root.
    pub parent: Option<usize>,
    pub depth: usize,
    /// Cumulative draft log-probability along the path.
    pub score: f64,
}

/// Speculated continuations, stored level by level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DraftTree {
    nodes: Vec<DraftNode>,
}

impl DraftTree {
    pub fn from_nodes(nodes: Vec<DraftNode>) -> Self {
        DraftTree { nodes }
    }

    pub fn nodes(&self) -> &[DraftNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Indices of the children of `parent` (`None` = root), in storage order.
    pub fn children(&self, parent: Option<usize>) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.parent == parent)
            .map(|(i, _)| i)
    }

    /// Tokens from the root down to `node`, inclusive.
    pub fn path(&self, node: usize) -> Vec<TokenId> {
        path_of(&self.nodes, node)
    }

    /// Checks the structural invariants: parents precede children, depths
    /// step by one, and siblings carry distinct tokens.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            let expected = match n.parent {
                None => 1,
                Some(p) if p < i => self.nodes[p].depth + 1,
                Some(p) => {
                    return Err(Error::Invariant(format!("node {i} has later parent {p}")));
                }
            };
            if n.depth != expected {
                return Err(Error::Invariant(format!(
                    "node {i} at depth {} under a parent at depth {}",
                    n.depth,
                    expected - 1
                )));
            }
            if self.nodes[..i]
                .iter()
                .any(|m| m.parent == n.parent && m.token == n.token)
            {
                return Err(Error::Invariant(format!("node {i} duplicates a sibling token")));
            }
        }
        Ok(())
    }
}

struct Candidate {
    score: f64,
    token: TokenId,
    parent: Option<usize>,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.token.cmp(&b.token))
        .then(a.parent.cmp(&b.parent))
}

/// Indices of the `k` largest values, larger first, smaller index on ties.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = |&a: &usize, &b: &usize| values[b].total_cmp(&values[a]).then(a.cmp(&b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Grows a draft tree level by level.
///
/// Each frontier node is scored by the drafter on `prefix + path`; its
/// `node_top_k` best draft slots become candidates with cumulative
/// log-probability scores. Candidates of a whole level are ranked by score
/// (then smaller target token, then smaller parent index) and kept while the
/// node budget allows, less one node per level still to come. Draft slots are mapped to target ids before storage.
pub fn build_draft_tree<D: Drafter + ?Sized>(
    draft: &D,
    mapping: &VocabMapping,
    prefix: &[TokenId],
    cfg: &TreeConfig,
) -> Result<DraftTree> {
    cfg.validate()?;
    if prefix.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    if draft.output_size() != mapping.len() {
        return Err(Error::Invariant(format!(
            "drafter emits {} slots but the mapping has {}",
            draft.output_size(),
            mapping.len()
        )));
    }
    let mut nodes: Vec<DraftNode> = Vec::with_capacity(cfg.max_tokens);
    let mut frontier: Vec<Option<usize>> = vec![None];
    let mut context = prefix.to_vec();
    for level in 1..=cfg.depth {
        // One slot per deeper level stays reserved so full depth is reachable.
        let budget = (cfg.max_tokens - nodes.len()).saturating_sub(cfg.depth - level);
        if budget == 0 || frontier.is_empty() {
            break;
        }
        let mut candidates = Vec::with_capacity(frontier.len() * cfg.node_top_k);
        for &parent in &frontier {
            context.truncate(prefix.len());
            let base = match parent {
                Some(p) => {
                    context.extend(path_of(&nodes, p));
                    nodes[p].score
                }
                None => 0.0,
            };
            let logp = log_softmax(&draft.draft_logits(&context)?);
            for slot in top_k_indices(&logp, cfg.node_top_k) {
                candidates.push(Candidate {
                    score: base + logp[slot],
                    token: mapping.to_target(slot),
                    parent,
                });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(budget);
        frontier.clear();
        for c in candidates {
            frontier.push(Some(nodes.len()));
            nodes.push(DraftNode {
                token: c.token,
                parent: c.parent,
                depth: level,
                score: c.score,
            });
        }
    }
    Ok(DraftTree { nodes })
}

fn path_of(nodes: &[DraftNode], node: usize) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(nodes[node].depth);
    let mut cur = Some(node);
    while let Some(i) = cur {
        out.push(nodes[i].token);
        cur = nodes[i].parent;
    }
    out.reverse();
    out
}
