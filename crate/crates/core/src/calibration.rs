//! Calibration corpora: raw text, or greedy completions from the target or
//! the draft model.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{greedy_decode, GenerateParams};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::vocab::{tokenize, Vocabulary};
use crate::TokenId;

/// Which model (if any) produces the calibration text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Raw,
    Target,
    Draft,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [SourceKind::Raw, SourceKind::Target, SourceKind::Draft];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceKind::Raw => "raw",
            SourceKind::Target => "target",
            SourceKind::Draft => "draft",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(SourceKind::Raw),
            "target" => Ok(SourceKind::Target),
            "draft" => Ok(SourceKind::Draft),
            other => Err(Error::Config(format!(
                "unknown calibration source {other:?} (expected raw, target or draft)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CalibrationSource {
    Raw { paths: Vec<PathBuf> },
    TargetGenerated { prompt_paths: Vec<PathBuf>, max_new: usize },
    DraftGenerated { prompt_paths: Vec<PathBuf>, max_new: usize },
}

impl CalibrationSource {
    pub fn kind(&self) -> SourceKind {
        match self {
            CalibrationSource::Raw { .. } => SourceKind::Raw,
            CalibrationSource::TargetGenerated { .. } => SourceKind::Target,
            CalibrationSource::DraftGenerated { .. } => SourceKind::Draft,
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Non-blank lines of every file, in order.
pub fn read_prompts(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut prompts = Vec::new();
    for p in paths {
        prompts.extend(
            read_text(p)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string),
        );
    }
    Ok(prompts)
}

/// Produces the token streams to count.
///
/// Raw files are tokenized whole (one stream per file). Generated sources
/// decode each prompt greedily for up to `max_new` tokens, stopping at EOS;
/// only the completion is emitted unless `count_prompts` is set.
pub fn produce_calibration_streams(
    source: &CalibrationSource,
    target: &dyn LanguageModel,
    draft: &dyn LanguageModel,
    vocab: &Vocabulary,
    count_prompts: bool,
) -> Result<Vec<Vec<TokenId>>> {
    for m in [target, draft] {
        if m.vocab_size() != vocab.len() {
            return Err(Error::Config(format!(
                "model vocabulary {} differs from tokenizer vocabulary {}",
                m.vocab_size(),
                vocab.len()
            )));
        }
    }
    let (prompt_paths, max_new, model) = match source {
        CalibrationSource::Raw { paths } => {
            return paths.iter().map(|p| Ok(tokenize(&read_text(p)?, vocab))).collect();
        }
        CalibrationSource::TargetGenerated { prompt_paths, max_new } => (prompt_paths, *max_new, target),
        CalibrationSource::DraftGenerated { prompt_paths, max_new } => (prompt_paths, *max_new, draft),
    };
    if max_new == 0 {
        return Err(Error::Config("calibration max_new must be at least 1".into()));
    }
    let prompts: Vec<Vec<TokenId>> = read_prompts(prompt_paths)?
        .iter()
        .map(|p| vocab.encode(p))
        .filter(|p| !p.is_empty())
        .collect();
    if prompts.is_empty() {
        return Err(Error::EmptyPromptSet);
    }
    let params = GenerateParams {
        max_new,
        eos: Some(vocab.eos()),
    };
    prompts
        .par_iter()
        .map(|prompt| {
            let completion = greedy_decode(model, prompt, &params)?;
            Ok(if count_prompts {
                prompt.iter().copied().chain(completion).collect()
            } else {
                completion
            })
        })
        .collect()
}

/// Token-id lines (`id id id ...`), one stream per line.
pub fn streams_to_text(streams: &[Vec<TokenId>]) -> String {
    let mut out = String::new();
    for s in streams {
        let line: Vec<String> = s.iter().map(|t| t.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{argmax, train_ngram, LinearHeadModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    struct AlwaysEos {
        v: usize,
        eos: TokenId,
    }

    impl LanguageModel for AlwaysEos {
        fn vocab_size(&self) -> usize {
            self.v
        }
        fn param_count(&self) -> u64 {
            0
        }
        fn next_logits(&self, _: &[TokenId]) -> Result<Vec<f64>> {
            let mut l = vec![0.0; self.v];
            l[self.eos as usize] = 1.0;
            Ok(l)
        }
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn raw_file_is_tokenized_whole() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let m = AlwaysEos { v: 4, eos: 3 };
        let src = CalibrationSource::Raw {
            paths: vec![write(dir.path(), "c.txt", "a b a")],
        };
        let streams = produce_calibration_streams(&src, &m, &m, &vocab, false).unwrap();
        assert_eq!(streams, vec![vec![0, 1, 0, 3]]);
    }

    #[test]
    fn eos_model_emits_only_eos() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let m = AlwaysEos { v: 4, eos: vocab.eos() };
        let src = CalibrationSource::TargetGenerated {
            prompt_paths: vec![write(dir.path(), "p.txt", "a b\n\nb\nz z\n")],
            max_new: 10,
        };
        let streams = produce_calibration_streams(&src, &m, &m, &vocab, false).unwrap();
        assert_eq!(streams, vec![vec![3]; 3]);
        let with_prompts = produce_calibration_streams(&src, &m, &m, &vocab, true).unwrap();
        assert_eq!(with_prompts, vec![vec![0, 1, 3], vec![1, 3], vec![2, 2, 3]]);
    }

    #[test]
    fn generated_streams_match_step_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_tokens(words.iter().cloned());
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus: Vec<Vec<TokenId>> = (0..6)
            .map(|_| (0..40).map(|_| rng.random_range(0..v as u32)).collect())
            .collect();
        let target = train_ngram(&corpus, 3, 0.5, v).unwrap();
        let draft = LinearHeadModel::random(v, 4, 2, 9).unwrap();
        let prompts: Vec<String> = (0..20)
            .map(|_| {
                (0..rng.random_range(1..5))
                    .map(|_| words[rng.random_range(0..words.len())].clone())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let path = write(dir.path(), "p.txt", &prompts.join("\n"));
        for (kind, model) in [(SourceKind::Target, &target as &dyn LanguageModel), (SourceKind::Draft, &draft)] {
            let src = match kind {
                SourceKind::Target => CalibrationSource::TargetGenerated {
                    prompt_paths: vec![path.clone()],
                    max_new: 15,
                },
                _ => CalibrationSource::DraftGenerated {
                    prompt_paths: vec![path.clone()],
                    max_new: 15,
                },
            };
            let streams = produce_calibration_streams(&src, &target, &draft, &vocab, false).unwrap();
            assert_eq!(streams.len(), 20);
            for (prompt, stream) in prompts.iter().zip(&streams) {
                let mut ctx = vocab.encode(prompt);
                let mut want = Vec::new();
                while want.len() < 15 {
                    let t = argmax(&model.next_logits(&ctx).unwrap()) as TokenId;
                    want.push(t);
                    ctx.push(t);
                    if t == vocab.eos() {
                        break;
                    }
                }
                assert_eq!(stream, &want);
            }
        }
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::from_tokens(["a"]);
        let m = AlwaysEos { v: 3, eos: 2 };
        let missing = CalibrationSource::Raw {
            paths: vec![dir.path().join("nope.txt")],
        };
        assert!(matches!(
            produce_calibration_streams(&missing, &m, &m, &vocab, false),
            Err(Error::FileNotFound(_))
        ));
        let empty = CalibrationSource::DraftGenerated {
            prompt_paths: vec![write(dir.path(), "e.txt", "\n  \n")],
            max_new: 4,
        };
        assert!(matches!(
            produce_calibration_streams(&empty, &m, &m, &vocab, false),
            Err(Error::EmptyPromptSet)
        ));
        let wrong = AlwaysEos { v: 5, eos: 2 };
        assert!(produce_calibration_streams(&empty, &wrong, &m, &vocab, false).is_err());
    }

    #[test]
    fn source_kind_parses() {
        for k in SourceKind::ALL {
            assert_eq!(k.as_str().parse::<SourceKind>().unwrap(), k);
        }
        assert!("bogus".parse::<SourceKind>().is_err());
    }

    #[test]
    fn stream_text_format() {
        assert_eq!(streams_to_text(&[vec![1, 2, 3], vec![], vec![7]]), "1 2 3\n\n7\n");
    }
}
