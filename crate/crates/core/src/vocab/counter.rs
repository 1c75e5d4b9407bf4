use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::TokenId;

const COUNTER_MAGIC: &str = "vocabtrim-counter";
const COUNTER_VERSION: &str = "v1";

/// Per-token occurrence counts over a calibration corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyCounter {
    counts: Vec<u64>,
    total: u64,
}

impl FrequencyCounter {
    pub fn zeros(vocab_size: usize) -> Self {
        FrequencyCounter {
            counts: vec![0; vocab_size],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        FrequencyCounter { counts, total }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    /// Adds one stream of ids to the counts.
    pub fn observe(&mut self, stream: &[TokenId]) -> Result<()> {
        let v = self.counts.len();
        if let Some(&bad) = stream.iter().find(|&&t| t as usize >= v) {
            return Err(Error::IdOutOfRange {
                id: bad,
                vocab_size: v,
            });
        }
        for &t in stream {
            self.counts[t as usize] += 1;
        }
        self.total += stream.len() as u64;
        Ok(())
    }

    /// Canonical text form; see [`FrequencyCounter::write`].
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{COUNTER_MAGIC} {COUNTER_VERSION} V={} total={}\n",
            self.counts.len(),
            self.total
        );
        for (id, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                let _ = writeln!(out, "{id}\t{c}");
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_text().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let header = lines
            .next()
            .ok_or_else(|| Error::format(origin, 1, "missing header"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 4 || fields[0] != COUNTER_MAGIC || fields[1] != COUNTER_VERSION {
            return Err(Error::format(origin, 1, "bad counter header"));
        }
        let v: usize = header_field(fields[2], "V=", origin)?;
        let total: u64 = header_field(fields[3], "total=", origin)?;
        let mut counts = vec![0u64; v];
        let mut last: Option<usize> = None;
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            if line.is_empty() {
                continue;
            }
            let (id, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(origin, lineno, "expected <id>\\t<count>"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::format(origin, lineno, "bad token id"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::format(origin, lineno, "bad count"))?;
            if id >= v {
                return Err(Error::format(origin, lineno, format!("id {id} >= V={v}")));
            }
            if last.is_some_and(|l| l >= id) {
                return Err(Error::format(origin, lineno, "ids not strictly ascending"));
            }
            if count == 0 {
                return Err(Error::format(origin, lineno, "zero counts are not stored"));
            }
            last = Some(id);
            counts[id] = count;
        }
        let counter = FrequencyCounter::from_counts(counts);
        if counter.total != total {
            return Err(Error::format(
                origin,
                1,
                format!("header total {total} != sum of counts {}", counter.total),
            ));
        }
        Ok(counter)
    }

    /// Writes the counter file: a `vocabtrim-counter v1 V=<int> total=<int>`
    /// header followed by `<id>\t<count>` for each nonzero entry.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

pub(crate) fn header_field<T: std::str::FromStr>(field: &str, key: &str, origin: &str) -> Result<T> {
    field
        .strip_prefix(key)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(origin, 1, format!("expected {key}<value>, got {field:?}")))
}

/// Counts every id across all streams.
pub fn count_token_frequencies<I, S>(streams: I, vocab_size: usize) -> Result<FrequencyCounter>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[TokenId]>,
{
    let mut counter = FrequencyCounter::zeros(vocab_size);
    for s in streams {
        counter.observe(s.as_ref())?;
    }
    Ok(counter)
}

pub fn merge_counters(a: &FrequencyCounter, b: &FrequencyCounter) -> Result<FrequencyCounter> {
    if a.counts.len() != b.counts.len() {
        return Err(Error::LengthMismatch {
            left: a.counts.len(),
            right: b.counts.len(),
        });
    }
    Ok(FrequencyCounter {
        counts: a.counts.iter().zip(&b.counts).map(|(x, y)| x + y).collect(),
        total: a.total + b.total,
    })
}
