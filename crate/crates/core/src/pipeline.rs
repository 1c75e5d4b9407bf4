//! End-to-end experiments: vocabulary and models from the training corpus,
//! calibration counts, trimming, and speculative decoding over the
//! evaluation prompts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{produce_calibration_streams, read_prompts, read_text, SourceKind};
use crate::config::{ExperimentConfig, ModelSpec};
use crate::decode::{greedy_decode, spd_generate, DecodeStats, GenerateParams, SpdOutput};
use crate::error::{Error, Result};
use crate::lm::{train_ngram, trim_head, AnyModel, FitOptions, LanguageModel, LinearHeadModel, TrimmedHeadModel};
use crate::metrics::{relative_latency, BenchReport, BenchRow, LatencyModel};
use crate::vocab::{
    build_vocab, count_token_frequencies, select_trim, tokenize, FrequencyCounter, TrimCriterion, TrimSelection,
    Vocabulary,
};
use crate::TokenId;

/// Source label of rows decoded with the untrimmed draft.
pub const BASELINE_SOURCE: &str = "full";

/// Vocabulary, models and prompts built once from a config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub vocab: Vocabulary,
    pub target: Arc<AnyModel>,
    pub draft: Arc<AnyModel>,
    pub eval_prompts: Vec<Vec<TokenId>>,
}

/// Per-prompt decode record, persisted for auditing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptAudit {
    pub task: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub source: String,
    pub prompt_index: usize,
    pub accepted_per_block: Vec<usize>,
    pub output: Vec<TokenId>,
    pub text: String,
    /// Output equals the target's own greedy decode.
    pub lossless: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub row: BenchRow,
    pub audits: Vec<PromptAudit>,
}

/// Counter and selection for one calibration source.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub source: SourceKind,
    pub counter: FrequencyCounter,
    pub selection: TrimSelection,
}

/// Everything one `bench` or `sweep` run writes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub report: BenchReport,
    pub calibrated: Vec<Calibrated>,
    pub audits: Vec<PromptAudit>,
}

fn build_model(spec: &ModelSpec, streams: &[Vec<TokenId>], vocab_size: usize, seed: u64) -> Result<AnyModel> {
    Ok(match *spec {
        ModelSpec::Ngram { order, alpha } => train_ngram(streams, order, alpha, vocab_size)?.into(),
        ModelSpec::Linear {
            dim,
            window,
            fit: false,
            ..
        } => LinearHeadModel::random(vocab_size, dim, window, seed)?.into(),
        ModelSpec::Linear {
            dim,
            window,
            fit: true,
            ridge,
            logit_scale,
        } => LinearHeadModel::fit(streams, vocab_size, dim, window, seed, FitOptions { ridge, logit_scale })?.into(),
    })
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut lines = Vec::new();
        for p in &config.corpus.train {
            lines.extend(
                read_text(p)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(str::to_string),
            );
        }
        let vocab = build_vocab(&lines, config.corpus.vocab_size)?;
        let streams: Vec<Vec<TokenId>> = lines.iter().map(|l| tokenize(l, &vocab)).collect();
        let v = vocab.len();
        let target = build_model(&config.target, &streams, v, config.seed)?;
        let draft = build_model(&config.draft, &streams, v, config.seed)?;
        let eval_prompts: Vec<Vec<TokenId>> = read_prompts(&config.eval.prompts)?
            .iter()
            .map(|p| vocab.encode(p))
            .filter(|p| !p.is_empty())
            .collect();
        if eval_prompts.is_empty() {
            return Err(Error::EmptyPromptSet);
        }
        Ok(Experiment {
            config,
            vocab,
            target: Arc::new(target),
            draft: Arc::new(draft),
            eval_prompts,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn calibration_streams(&self, source: SourceKind) -> Result<Vec<Vec<TokenId>>> {
        produce_calibration_streams(
            &self.config.calibration_source(source)?,
            self.target.as_ref(),
            self.draft.as_ref(),
            &self.vocab,
            self.config.calibration.count_prompts,
        )
    }

    pub fn count(&self, source: SourceKind) -> Result<FrequencyCounter> {
        count_token_frequencies(&self.calibration_streams(source)?, self.vocab_size())
    }

    pub fn select(&self, counter: &FrequencyCounter, criterion: &TrimCriterion) -> Result<TrimSelection> {
        if counter.vocab_size() != self.vocab_size() {
            return Err(Error::LengthMismatch {
                left: counter.vocab_size(),
                right: self.vocab_size(),
            });
        }
        select_trim(counter, criterion, self.vocab.special())
    }

    pub fn calibrate(&self, source: SourceKind, criterion: &TrimCriterion) -> Result<Calibrated> {
        let counter = self.count(source)?;
        let selection = self.select(&counter, criterion)?;
        Ok(Calibrated {
            source,
            counter,
            selection,
        })
    }

    /// Draft restricted to `selection`; linear drafts lose head rows, other
    /// drafts gather from their full output.
    pub fn trimmed_draft(&self, selection: &TrimSelection) -> Result<TrimmedHeadModel> {
        if selection.vocab_size() != self.vocab_size() {
            return Err(Error::LengthMismatch {
                left: selection.vocab_size(),
                right: self.vocab_size(),
            });
        }
        match self.draft.as_ref() {
            AnyModel::Linear(m) => trim_head(m, selection),
            AnyModel::NGram(_) => {
                let base: Arc<dyn LanguageModel> = self.draft.clone();
                TrimmedHeadModel::gather(base, selection)
            }
        }
    }

    /// Relative latency of a drafter with `draft_params` parameters.
    pub fn latency(&self, draft_params: u64) -> Result<LatencyModel> {
        let c = match self.config.latency.relative_latency {
            Some(c_full) => c_full * draft_params as f64 / self.draft.param_count() as f64,
            None => relative_latency(draft_params, self.target.param_count())?,
        };
        LatencyModel::new(c, self.config.gamma())
    }

    pub fn generate_params(&self) -> GenerateParams {
        GenerateParams {
            max_new: self.config.eval.max_new,
            eos: Some(self.vocab.eos()),
        }
    }

    pub fn decode(&self, drafter: &TrimmedHeadModel, prompt: &[TokenId]) -> Result<SpdOutput> {
        spd_generate(
            self.target.as_ref(),
            drafter,
            drafter.mapping(),
            prompt,
            &self.generate_params(),
            &self.config.tree,
        )
    }

    /// Decodes every evaluation prompt and checks each output against the
    /// target's greedy decode.
    pub fn evaluate(&self, drafter: &TrimmedHeadModel, source: &str) -> Result<Evaluation> {
        let params = self.generate_params();
        let outputs: Vec<(SpdOutput, bool)> = self
            .eval_prompts
            .par_iter()
            .map(|prompt| {
                let out = self.decode(drafter, prompt)?;
                out.stats.check()?;
                let greedy = greedy_decode(self.target.as_ref(), prompt, &params)?;
                let lossless = greedy == out.tokens;
                Ok((out, lossless))
            })
            .collect::<Result<_>>()?;
        let task = &self.config.task;
        let mut stats = DecodeStats::new(self.config.tree.depth);
        let mut audits = Vec::with_capacity(outputs.len());
        for (i, (out, lossless)) in outputs.into_iter().enumerate() {
            if !lossless {
                return Err(Error::Invariant(format!(
                    "prompt {i}: speculative output differs from greedy decode (K={}, source {source})",
                    drafter.kept()
                )));
            }
            stats.absorb(&out.stats);
            audits.push(PromptAudit {
                task: task.clone(),
                k: drafter.kept(),
                source: source.to_string(),
                prompt_index: i,
                accepted_per_block: out.stats.accepted_per_block,
                text: self.vocab.detokenize(&out.tokens),
                output: out.tokens,
                lossless,
            });
        }
        stats.check()?;
        let row = BenchRow::from_stats(
            task,
            drafter.kept(),
            drafter.head_params(),
            self.config.seed,
            source,
            self.latency(drafter.param_count())?,
            &stats,
        )?;
        Ok(Evaluation { row, audits })
    }

    pub fn evaluate_baseline(&self) -> Result<Evaluation> {
        self.evaluate(&self.trimmed_draft(&TrimSelection::full(self.vocab_size()))?, BASELINE_SOURCE)
    }
}

impl RunOutput {
    fn push(&mut self, eval: Evaluation) {
        self.report.rows.push(eval.row);
        self.audits.extend(eval.audits);
    }
}

/// Baseline row plus one trimmed row per calibration source, in the given
/// order.
pub fn bench(exp: &Experiment, sources: &[SourceKind]) -> Result<RunOutput> {
    let mut run = RunOutput::default();
    run.push(exp.evaluate_baseline()?);
    for &source in sources {
        let cal = exp.calibrate(source, &exp.config.trim)?;
        run.push(exp.evaluate(&exp.trimmed_draft(&cal.selection)?, source.as_str())?);
        run.calibrated.push(cal);
    }
    Ok(run)
}

/// One top-k row per entry of `ks`, all from the same calibration counts.
pub fn sweep(exp: &Experiment, source: SourceKind, ks: &[usize]) -> Result<RunOutput> {
    let counter = exp.count(source)?;
    let mut run = RunOutput::default();
    for &k in ks {
        let selection = exp.select(&counter, &TrimCriterion::TopK { k })?;
        run.push(exp.evaluate(&exp.trimmed_draft(&selection)?, source.as_str())?);
        run.calibrated.push(Calibrated {
            source,
            counter: counter.clone(),
            selection,
        });
    }
    Ok(run)
}

/// `round(f·V)` for each fraction, clamped to `[1, V]`.
pub fn ks_from_fractions(fractions: &[f64], vocab_size: usize) -> Result<Vec<usize>> {
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("K fraction must lie in (0, 1], got {f}")));
            }
            Ok(((f * vocab_size as f64).round() as usize).clamp(1, vocab_size))
        })
        .collect()
}

/// Baseline and trimmed rows for the configured source and criterion.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<BenchReport> {
    let exp = Experiment::prepare(config.clone())?;
    Ok(bench(&exp, &[config.calibration.source])?.report)
}

/// Calibration sources ranked by block efficiency, best first.
pub fn source_ordering(report: &BenchReport) -> String {
    let mut rows: Vec<&BenchRow> = report.rows.iter().filter(|r| r.source != BASELINE_SOURCE).collect();
    rows.sort_by(|a, b| b.block_efficiency.total_cmp(&a.block_efficiency).then(a.source.cmp(&b.source)));
    rows.iter()
        .map(|r| format!("{} (BE {:.4})", r.source, r.block_efficiency))
        .collect::<Vec<_>>()
        .join(" > ")
}

pub fn audits_to_jsonl(audits: &[PromptAudit]) -> Result<String> {
    let mut out = String::new();
    for a in audits {
        out.push_str(&serde_json::to_string(a).map_err(|e| Error::Invariant(format!("audit encoding: {e}")))?);
        out.push('\n');
    }
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes `<stem>.csv`, `<stem>.audit.jsonl`, `<stem>.plot.tsv` and the
/// counter and selection files into `dir`; returns the paths written.
pub fn write_run(run: &RunOutput, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut written = Vec::new();
    let mut emit = |name: String, text: &str| -> Result<()> {
        let p = dir.join(name);
        write_file(&p, text)?;
        written.push(p);
        Ok(())
    };
    emit(format!("{stem}.csv"), &run.report.to_csv()?)?;
    emit(format!("{stem}.audit.jsonl"), &audits_to_jsonl(&run.audits)?)?;
    emit(format!("{stem}.plot.tsv"), &run.report.plot_data())?;
    let mut counters_done: Vec<SourceKind> = Vec::new();
    for cal in &run.calibrated {
        if !counters_done.contains(&cal.source) {
            emit(format!("{stem}.counter_{}.txt", cal.source), &cal.counter.to_text())?;
            counters_done.push(cal.source);
        }
        emit(
            format!("{stem}.selection_{}_k{}.txt", cal.source, cal.selection.len()),
            &cal.selection.to_text(),
        )?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CalibrationConfig, CorpusConfig, EvalConfig};
    use crate::decode::TreeConfig;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn toy_config(dir: &Path, k: usize, tree: TreeConfig) -> ExperimentConfig {
        let train = "the cat sat on the mat .\nthe dog sat on the log .\na cat and a dog sat .\n".repeat(5);
        ExperimentConfig {
            seed: 42,
            task: "toy".into(),
            corpus: CorpusConfig {
                train: vec![write(dir, "train.txt", &train)],
                vocab_size: 100,
            },
            target: ModelSpec::Ngram { order: 3, alpha: 1.0 },
            draft: ModelSpec::Linear {
                dim: 4,
                window: 2,
                fit: true,
                ridge: 1e-3,
                logit_scale: 10.0,
            },
            calibration: CalibrationConfig {
                source: SourceKind::Target,
                raw: vec![],
                prompts: vec![write(dir, "cal.txt", "the cat\na dog\nthe\n")],
                max_new: 16,
                count_prompts: false,
            },
            trim: TrimCriterion::TopK { k },
            tree,
            eval: crate::config::EvalConfig {
                prompts: vec![write(dir, "eval.txt", "the dog\na cat sat\n")],
                max_new: 12,
            },
            latency: Default::default(),
            output: Default::default(),
        }
    }

    #[test]
    fn full_k_matches_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path(), 12, TreeConfig::default());
        let exp = Experiment::prepare(cfg.clone()).unwrap();
        assert_eq!(exp.vocab_size(), 12);
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].block_efficiency, report.rows[1].block_efficiency);
        assert_eq!(report.rows[0].source, BASELINE_SOURCE);
        assert_eq!(report.rows[1].source, "target");
    }

    #[test]
    fn chain_config_bounds_efficiency() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_pipeline(&toy_config(dir.path(), 5, TreeConfig::chain(1))).unwrap();
        for r in &report.rows {
            assert!((1.0..=2.0).contains(&r.block_efficiency));
        }
    }

    #[test]
    fn trimmed_row_reports_smaller_head() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path(), 6, TreeConfig::default());
        let report = run_pipeline(&cfg).unwrap();
        let (full, trimmed) = (&report.rows[0], &report.rows[1]);
        assert_eq!(full.head_params, 12 * 4);
        assert_eq!(trimmed.head_params, 6 * 4);
        assert_eq!(trimmed.k, 6);
        assert!(trimmed.latency.c < full.latency.c);
    }

    #[test]
    fn latency_override_scales_with_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(dir.path(), 6, TreeConfig::default());
        cfg.latency.relative_latency = Some(0.5);
        let exp = Experiment::prepare(cfg).unwrap();
        let full = exp.draft.param_count();
        assert_eq!(exp.latency(full).unwrap().c, 0.5);
        assert_eq!(exp.latency(full / 2).unwrap().c, 0.5 * (full / 2) as f64 / full as f64);
    }

    #[test]
    fn bench_and_sweep_rows_are_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::prepare(toy_config(dir.path(), 6, TreeConfig::default())).unwrap();
        let run = bench(&exp, &SourceKind::ALL).unwrap();
        let sources: Vec<&str> = run.report.rows.iter().map(|r| r.source.as_str()).collect();
        assert_eq!(sources, ["full", "raw", "target", "draft"]);
        assert_eq!(source_ordering(&run.report).matches(" > ").count(), 2);
        let ks = ks_from_fractions(&[0.25, 0.5, 1.0], exp.vocab_size()).unwrap();
        assert_eq!(ks, vec![3, 6, 12]);
        let run = sweep(&exp, SourceKind::Raw, &ks).unwrap();
        let got: Vec<usize> = run.report.rows.iter().map(|r| r.k).collect();
        assert_eq!(got, ks);
        assert!(run.audits.iter().all(|a| a.lossless));
        assert!(ks_from_fractions(&[0.0], 10).is_err());
    }

    #[test]
    fn written_artifacts_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path(), 6, TreeConfig::default());
        let read_all = |out: &Path| {
            let exp = Experiment::prepare(cfg.clone()).unwrap();
            let run = bench(&exp, &SourceKind::ALL).unwrap();
            write_run(&run, out, "bench")
                .unwrap()
                .iter()
                .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap()))
                .collect::<Vec<_>>()
        };
        let a = read_all(&dir.path().join("a"));
        let b = read_all(&dir.path().join("b"));
        assert_eq!(a.len(), 2 + 1 + 3 + 3);
        assert_eq!(a, b);
    }

    #[test]
    fn missing_eval_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(dir.path(), 6, TreeConfig::default());
        cfg.eval = EvalConfig {
            prompts: vec![dir.path().join("missing.txt")],
            max_new: 4,
        };
        assert!(matches!(Experiment::prepare(cfg), Err(Error::FileNotFound(_))));
    }
}
