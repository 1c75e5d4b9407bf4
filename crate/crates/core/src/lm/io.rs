//! `VTLM1` model container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "VTLM1" | tag: u8
//! tag 1 (n-gram): order u32 | V u32 | alpha f64 | n u64 | n × (context_hash u64, token u32, count u64)
//! tag 2 (linear): V u32 | d u32 | m u32 | E: V·d f64 | mixing: m·d f64 | W: V·d f64
//! ```
//!
//! N-gram triples are sorted by (context_hash, token); matrices are row-major.

use std::collections::HashMap;
use std::path::Path;

use super::linear::{LinearHeadModel, Matrix, Trunk};
use super::ngram::{ContextCounts, NGramModel};
use super::LanguageModel;
use crate::error::{Error, Result};
use crate::TokenId;

const MAGIC: &[u8; 5] = b"VTLM1";
const TAG_NGRAM: u8 = 1;
const TAG_LINEAR: u8 = 2;

/// Either model family, as loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    NGram(NGramModel),
    Linear(LinearHeadModel),
}

impl LanguageModel for AnyModel {
    fn vocab_size(&self) -> usize {
        match self {
            AnyModel::NGram(m) => m.vocab_size(),
            AnyModel::Linear(m) => m.vocab_size(),
        }
    }

    fn param_count(&self) -> u64 {
        match self {
            AnyModel::NGram(m) => m.param_count(),
            AnyModel::Linear(m) => m.param_count(),
        }
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        match self {
            AnyModel::NGram(m) => m.next_logits(context),
            AnyModel::Linear(m) => m.next_logits(context),
        }
    }

    fn greedy_token(&self, context: &[TokenId]) -> Result<TokenId> {
        match self {
            AnyModel::NGram(m) => m.greedy_token(context),
            AnyModel::Linear(m) => m.greedy_token(context),
        }
    }

    fn head_params(&self) -> u64 {
        match self {
            AnyModel::NGram(m) => m.head_params(),
            AnyModel::Linear(m) => m.head_params(),
        }
    }
}

impl From<NGramModel> for AnyModel {
    fn from(m: NGramModel) -> Self {
        AnyModel::NGram(m)
    }
}

impl From<LinearHeadModel> for AnyModel {
    fn from(m: LinearHeadModel) -> Self {
        AnyModel::Linear(m)
    }
}

impl AnyModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        match self {
            AnyModel::NGram(m) => {
                out.push(TAG_NGRAM);
                out.extend((m.order() as u32).to_le_bytes());
                out.extend((m.vocab_size() as u32).to_le_bytes());
                out.extend(m.alpha().to_le_bytes());
                let mut triples: Vec<(u64, TokenId, u64)> = m
                    .tables()
                    .iter()
                    .flat_map(|(&h, c)| c.followers.iter().map(move |&(t, n)| (h, t, n)))
                    .collect();
                triples.sort_unstable();
                out.extend((triples.len() as u64).to_le_bytes());
                for (h, t, n) in triples {
                    out.extend(h.to_le_bytes());
                    out.extend(t.to_le_bytes());
                    out.extend(n.to_le_bytes());
                }
            }
            AnyModel::Linear(m) => {
                out.push(TAG_LINEAR);
                let trunk = m.trunk();
                out.extend((trunk.vocab_size() as u32).to_le_bytes());
                out.extend((trunk.dim() as u32).to_le_bytes());
                out.extend((trunk.window() as u32).to_le_bytes());
                for x in trunk
                    .embedding()
                    .data()
                    .iter()
                    .chain(trunk.mixing().data())
                    .chain(m.head().data())
                {
                    out.extend(x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(5)? != MAGIC {
            return Err(r.err("bad magic, expected VTLM1"));
        }
        let model = match r.u8()? {
            TAG_NGRAM => {
                let order = r.u32()? as usize;
                let vocab_size = r.u32()? as usize;
                let alpha = r.f64()?;
                let n = r.u64()?;
                if order == 0 || alpha.is_nan() || alpha <= 0.0 {
                    return Err(r.err("invalid n-gram header"));
                }
                let mut tables: HashMap<u64, ContextCounts> = HashMap::new();
                let mut last: Option<(u64, TokenId)> = None;
                for _ in 0..n {
                    let (h, t, c) = (r.u64()?, r.u32()?, r.u64()?);
                    if t as usize >= vocab_size || c == 0 || last.is_some_and(|l| l >= (h, t)) {
                        return Err(r.err("malformed n-gram triple"));
                    }
                    last = Some((h, t));
                    let entry = tables.entry(h).or_insert(ContextCounts {
                        total: 0,
                        followers: Vec::new(),
                    });
                    entry.total += c;
                    entry.followers.push((t, c));
                }
                if !tables.contains_key(&super::ngram::context_hash(&[])) {
                    return Err(r.err("n-gram model has no unigram table"));
                }
                AnyModel::NGram(NGramModel::from_parts(order, alpha, vocab_size, tables))
            }
            TAG_LINEAR => {
                let v = r.u32()? as usize;
                let d = r.u32()? as usize;
                let m = r.u32()? as usize;
                let embedding = Matrix::from_vec(v, d, r.f64s(v * d)?)?;
                let mixing = Matrix::from_vec(m, d, r.f64s(m * d)?)?;
                let head = Matrix::from_vec(v, d, r.f64s(v * d)?)?;
                AnyModel::Linear(LinearHeadModel::new(Trunk::new(embedding, mixing)?, head)?)
            }
            other => return Err(r.err(format!("unknown model tag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.origin, self.pos, msg)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.err("unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn save_model(model: &AnyModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    AnyModel::from_bytes(&bytes, &path.display().to_string())
}
