use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::counter::{header_field, FrequencyCounter};
use crate::error::{Error, Result};
use crate::TokenId;

const SELECT_MAGIC: &str = "vocabtrim-select";
const SELECT_VERSION: &str = "v1";

/// How the trimmed vocabulary is chosen from a frequency counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrimCriterion {
    /// Exactly `k` ids, highest counts first.
    TopK { k: usize },
    /// Smallest high-count prefix covering a fraction `p` of all occurrences.
    TopP { p: f64 },
    /// Every id seen at least `f` times.
    MinFreq { f: u64 },
}

impl TrimCriterion {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match *self {
            TrimCriterion::TopK { k: 0 } => {
                Err(Error::InvalidCriterion("top-k size must be at least 1".into()))
            }
            TrimCriterion::TopK { k } if k > vocab_size => Err(Error::KTooLarge { k, vocab_size }),
            TrimCriterion::TopP { p } if !(p > 0.0 && p <= 1.0) => Err(Error::InvalidCriterion(
                format!("top-p fraction must lie in (0, 1], got {p}"),
            )),
            TrimCriterion::MinFreq { f: 0 } => {
                Err(Error::InvalidCriterion("min frequency must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// The kept token ids (ascending) and the digest of the counter they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrimSelection {
    kept: Vec<TokenId>,
    vocab_size: usize,
    source_counter_digest: String,
}

impl TrimSelection {
    /// Builds a selection from arbitrary ids; they are sorted and deduplicated.
    pub fn new(kept: impl IntoIterator<Item = TokenId>, vocab_size: usize, digest: impl Into<String>) -> Result<Self> {
        let kept: BTreeSet<TokenId> = kept.into_iter().collect();
        if let Some(&bad) = kept.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::IdOutOfRange {
                id: bad,
                vocab_size,
            });
        }
        Ok(TrimSelection {
            kept: kept.into_iter().collect(),
            vocab_size,
            source_counter_digest: digest.into(),
        })
    }

    /// Keeps every id; the untrimmed baseline.
    pub fn full(vocab_size: usize) -> Self {
        TrimSelection {
            kept: (0..vocab_size as TokenId).collect(),
            vocab_size,
            source_counter_digest: String::new(),
        }
    }

    pub fn kept(&self) -> &[TokenId] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn digest(&self) -> &str {
        &self.source_counter_digest
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.kept.binary_search(&id).is_ok()
    }

    /// Fails with `StaleSelection` if `counter` is not the one this selection was built from.
    pub fn check_source(&self, counter: &FrequencyCounter) -> Result<()> {
        let expected = counter.digest();
        if expected != self.source_counter_digest {
            return Err(Error::StaleSelection {
                expected,
                found: self.source_counter_digest.clone(),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let digest = if self.source_counter_digest.is_empty() {
            "-"
        } else {
            &self.source_counter_digest
        };
        let mut out = format!(
            "{SELECT_MAGIC} {SELECT_VERSION} V={} K={} digest={digest}\n",
            self.vocab_size,
            self.kept.len()
        );
        for id in &self.kept {
            let _ = writeln!(out, "{id}");
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or_default();
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 5 || fields[0] != SELECT_MAGIC || fields[1] != SELECT_VERSION {
            return Err(Error::format(origin, 1, "bad selection header"));
        }
        let vocab_size: usize = header_field(fields[2], "V=", origin)?;
        let k: usize = header_field(fields[3], "K=", origin)?;
        let digest: String = header_field(fields[4], "digest=", origin)?;
        let digest = if digest == "-" { String::new() } else { digest };
        let mut kept = Vec::with_capacity(k);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            if line.is_empty() {
                continue;
            }
            let id: TokenId = line
                .parse()
                .map_err(|_| Error::format(origin, lineno, "bad token id"))?;
            if id as usize >= vocab_size {
                return Err(Error::format(origin, lineno, format!("id {id} >= V={vocab_size}")));
            }
            if kept.last().is_some_and(|&l| l >= id) {
                return Err(Error::format(origin, lineno, "ids not strictly ascending"));
            }
            kept.push(id);
        }
        if kept.len() != k {
            return Err(Error::format(origin, 1, format!("header K={k} but {} ids listed", kept.len())));
        }
        Ok(TrimSelection {
            kept,
            vocab_size,
            source_counter_digest: digest,
        })
    }

    /// Writes the selection file: a `vocabtrim-select v1 V=<int> K=<int> digest=<hex>`
    /// header, then one kept id per line.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Count-descending order, ties by smaller id.
fn by_rank(counts: &[u64]) -> impl Fn(&TokenId, &TokenId) -> Ordering + '_ {
    move |&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b))
}

/// Selects the trimmed vocabulary, rejecting selections that keep nothing
/// beyond the special tokens.
pub fn select_trim(
    counter: &FrequencyCounter,
    criterion: &TrimCriterion,
    special: &BTreeSet<TokenId>,
) -> Result<TrimSelection> {
    select_trim_with(counter, criterion, special, false)
}

/// Like [`select_trim`]; `allow_special_only` accepts top-p / min-frequency
/// selections that keep only the special ids.
pub fn select_trim_with(
    counter: &FrequencyCounter,
    criterion: &TrimCriterion,
    special: &BTreeSet<TokenId>,
    allow_special_only: bool,
) -> Result<TrimSelection> {
    let v = counter.vocab_size();
    criterion.validate(v)?;
    if let Some(&bad) = special.iter().find(|&&s| s as usize >= v) {
        return Err(Error::IdOutOfRange { id: bad, vocab_size: v });
    }
    let counts = counter.counts();
    let mut ranked: Vec<TokenId> = (0..v as TokenId).filter(|t| !special.contains(t)).collect();
    ranked.sort_unstable_by(by_rank(counts));

    let picks: Vec<TokenId> = match *criterion {
        TrimCriterion::TopK { k } => {
            if k < special.len() {
                return Err(Error::KTooSmall {
                    k,
                    special: special.len(),
                });
            }
            ranked.truncate(k - special.len());
            ranked
        }
        TrimCriterion::TopP { p } => {
            if counter.total() == 0 {
                return Err(Error::ZeroTotal);
            }
            // The prefix is taken over all ids, specials included, so
            // specials consume coverage in rank order like any other token.
            let mut all: Vec<TokenId> = (0..v as TokenId).collect();
            all.sort_unstable_by(by_rank(counts));
            let total = counter.total() as f64;
            let mut cum = 0u64;
            let mut prefix = Vec::new();
            for t in all {
                cum += counts[t as usize];
                prefix.push(t);
                if cum as f64 / total >= p {
                    break;
                }
            }
            prefix.retain(|t| !special.contains(t));
            prefix
        }
        TrimCriterion::MinFreq { f } => {
            if counter.total() == 0 {
                return Err(Error::ZeroTotal);
            }
            ranked.retain(|&t| counts[t as usize] >= f);
            ranked
        }
    };

    let topk = matches!(criterion, TrimCriterion::TopK { .. });
    if picks.is_empty() && !topk && !allow_special_only {
        return Err(Error::EmptyResult);
    }
    TrimSelection::new(
        picks.into_iter().chain(special.iter().copied()),
        v,
        counter.digest(),
    )
}
