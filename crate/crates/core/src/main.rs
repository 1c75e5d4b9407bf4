use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vocabtrim::calibration::{streams_to_text, SourceKind};
use vocabtrim::config::{ExperimentConfig, GammaMode};
use vocabtrim::metrics::{block_efficiency, BenchReport};
use vocabtrim::pipeline::{self, Experiment};
use vocabtrim::vocab::{count_token_frequencies, FrequencyCounter, TrimCriterion, TrimSelection};
use vocabtrim::Error;

#[derive(Parser)]
#[command(name = "vocabtrim", version, about = "Speculative decoding with a trimmed draft vocabulary")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count token frequencies of a calibration corpus and write a counter file.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Counter file (default: <out-dir>/counter_<source>.txt).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the calibration token streams, one per line.
        #[arg(long)]
        emit_streams: Option<PathBuf>,
    },
    /// Select the kept vocabulary from a counter file.
    Trim {
        #[command(flatten)]
        common: Common,
        /// Counter file (default: <out-dir>/counter_<source>.txt).
        #[arg(long)]
        counter: Option<PathBuf>,
        /// Selection file (default: <out-dir>/selection_<source>.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode one prompt speculatively and print the text with block statistics.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prompt: String,
        /// Selection file; the untrimmed draft is used when absent.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Counter the selection must have been derived from.
        #[arg(long)]
        counter: Option<PathBuf>,
    },
    /// Evaluate the baseline and one trimmed draft per calibration source.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values = ["raw", "target", "draft"])]
        sources: Vec<SourceKind>,
        /// Prefix of the files written to the output directory.
        #[arg(long, default_value = "bench")]
        stem: String,
        /// Also write (K, BE, MBSU) triples here.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Evaluate top-k trims over a grid of K.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// K as fractions of the vocabulary size.
        #[arg(long, value_delimiter = ',', default_values = ["0.02", "0.05", "0.1", "0.25", "0.5", "1"], conflicts_with = "ks")]
        fractions: Vec<f64>,
        /// Explicit K values.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long, default_value = "sweep")]
        stem: String,
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaArg {
    Depth,
    MaxTokens,
}

/// Config file plus overrides; flags win over the file.
#[derive(Args)]
struct Common {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Calibration source.
    #[arg(long)]
    source: Option<SourceKind>,
    /// Count prompt tokens of generated calibration streams too.
    #[arg(long)]
    count_prompts: bool,
    #[arg(long, group = "criterion")]
    k: Option<usize>,
    #[arg(long, group = "criterion")]
    top_p: Option<f64>,
    #[arg(long, group = "criterion")]
    min_freq: Option<u64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    node_top_k: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Evaluation tokens per prompt.
    #[arg(long)]
    max_new: Option<usize>,
    /// Relative latency of the untrimmed draft.
    #[arg(long)]
    relative_latency: Option<f64>,
    #[arg(long, value_enum)]
    gamma: Option<GammaArg>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        if let Some(s) = self.source {
            cfg.calibration.source = s;
        }
        cfg.calibration.count_prompts |= self.count_prompts;
        if let Some(k) = self.k {
            cfg.trim = TrimCriterion::TopK { k };
        }
        if let Some(p) = self.top_p {
            cfg.trim = TrimCriterion::TopP { p };
        }
        if let Some(f) = self.min_freq {
            cfg.trim = TrimCriterion::MinFreq { f };
        }
        if let Some(d) = self.depth {
            cfg.tree.depth = d;
        }
        if let Some(n) = self.node_top_k {
            cfg.tree.node_top_k = n;
        }
        if let Some(m) = self.max_tokens {
            cfg.tree.max_tokens = m;
        }
        if let Some(m) = self.max_new {
            cfg.eval.max_new = m;
        }
        if let Some(c) = self.relative_latency {
            cfg.latency.relative_latency = Some(c);
        }
        if let Some(g) = self.gamma {
            cfg.latency.gamma = match g {
                GammaArg::Depth => GammaMode::Depth,
                GammaArg::MaxTokens => GammaMode::MaxTokens,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn experiment(&self) -> Result<Experiment> {
        let cfg = self.load()?;
        eprintln!("building vocabulary and models for task {:?} (seed {})", cfg.task, cfg.seed);
        let exp = Experiment::prepare(cfg)?;
        eprintln!(
            "V={} target params={} draft params={}",
            exp.vocab_size(),
            vocabtrim::lm::LanguageModel::param_count(exp.target.as_ref()),
            vocabtrim::lm::LanguageModel::param_count(exp.draft.as_ref())
        );
        Ok(exp)
    }
}

fn default_path(cfg: &ExperimentConfig, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| cfg.output.dir.join(name))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn finish_report(report: &BenchReport, plot_data: &Option<PathBuf>) -> Result<()> {
    print!("{}", report.to_table());
    if let Some(p) = plot_data {
        ensure_parent(p)?;
        std::fs::write(p, report.plot_data()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate {
            common,
            out,
            emit_streams,
        } => {
            let exp = common.experiment()?;
            let source = exp.config.calibration.source;
            let streams = exp.calibration_streams(source)?;
            let counter = count_token_frequencies(&streams, exp.vocab_size())?;
            let path = default_path(&exp.config, &out, &format!("counter_{source}.txt"));
            ensure_parent(&path)?;
            counter.write(&path)?;
            if let Some(p) = emit_streams {
                ensure_parent(&p)?;
                std::fs::write(&p, streams_to_text(&streams)).with_context(|| format!("writing {}", p.display()))?;
            }
            println!(
                "{source}: {} streams, {} tokens, {} distinct -> {}",
                streams.len(),
                counter.total(),
                counter.counts().iter().filter(|&&c| c > 0).count(),
                path.display()
            );
        }
        Command::Trim { common, counter, out } => {
            let cfg = common.load()?;
            let source = cfg.calibration.source;
            let counter_path = default_path(&cfg, &counter, &format!("counter_{source}.txt"));
            let counter = FrequencyCounter::read(&counter_path)?;
            let exp = common.experiment()?;
            let selection = exp.select(&counter, &cfg.trim)?;
            let path = default_path(&cfg, &out, &format!("selection_{source}.txt"));
            ensure_parent(&path)?;
            selection.write(&path)?;
            println!("kept {} of {} tokens -> {}", selection.len(), selection.vocab_size(), path.display());
        }
        Command::Generate {
            common,
            prompt,
            selection,
            counter,
        } => {
            let exp = common.experiment()?;
            let selection = match selection {
                Some(p) => TrimSelection::read(&p)?,
                None => TrimSelection::full(exp.vocab_size()),
            };
            if let Some(c) = counter {
                selection.check_source(&FrequencyCounter::read(&c)?)?;
            }
            let drafter = exp.trimmed_draft(&selection)?;
            let ids = exp.vocab.encode(&prompt);
            let out = exp.decode(&drafter, &ids)?;
            let tau = block_efficiency(&out.stats)?;
            let latency = exp.latency(drafter.param_count())?;
            println!("{}", exp.vocab.detokenize(&out.tokens));
            println!(
                "K={} blocks={} produced={} BE={:.4} c={:.4} gamma={} MBSU={:.4} accepted={:?}",
                drafter.kept(),
                out.stats.blocks,
                out.stats.produced,
                tau,
                latency.c,
                latency.gamma,
                latency.speedup(tau),
                out.stats.accepted_per_block
            );
        }
        Command::Bench {
            common,
            sources,
            stem,
            plot_data,
        } => {
            let exp = common.experiment()?;
            let run = pipeline::bench(&exp, &sources)?;
            pipeline::write_run(&run, &exp.config.output.dir, &stem)?;
            finish_report(&run.report, &plot_data)?;
            println!("calibration sources by block efficiency: {}", pipeline::source_ordering(&run.report));
        }
        Command::Sweep {
            common,
            fractions,
            ks,
            stem,
            plot_data,
        } => {
            let exp = common.experiment()?;
            let ks = if ks.is_empty() {
                pipeline::ks_from_fractions(&fractions, exp.vocab_size())?
            } else {
                ks
            };
            let run = pipeline::sweep(&exp, exp.config.calibration.source, &ks)?;
            pipeline::write_run(&run, &exp.config.output.dir, &stem)?;
            finish_report(&run.report, &plot_data)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(3, Error::exit_code)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
