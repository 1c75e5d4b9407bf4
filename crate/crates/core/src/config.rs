//! Experiment configuration, read from TOML.
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationSource, SourceKind};
use crate::decode::TreeConfig;
use crate::error::{Error, Result};
use crate::lm::FitOptions;
use crate::vocab::TrimCriterion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream; required.
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: String,
    pub corpus: CorpusConfig,
    pub target: ModelSpec,
    pub draft: ModelSpec,
    pub calibration: CalibrationConfig,
    pub trim: TrimCriterion,
    #[serde(default)]
    pub tree: TreeConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub latency: LatencyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_task() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Training text, one passage per line.
    pub train: Vec<PathBuf>,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ngram {
        order: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Linear {
        dim: usize,
        #[serde(default = "default_window")]
        window: usize,
        /// Least-squares head fitted on the training corpus instead of
        /// frozen random weights.
        #[serde(default)]
        fit: bool,
        #[serde(default = "default_ridge")]
        ridge: f64,
        #[serde(default = "default_logit_scale")]
        logit_scale: f64,
    },
}

fn default_alpha() -> f64 {
    1.0
}
fn default_window() -> usize {
    1
}
fn default_ridge() -> f64 {
    FitOptions::default().ridge
}
fn default_logit_scale() -> f64 {
    FitOptions::default().logit_scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub source: SourceKind,
    /// Raw calibration text; defaults to the training corpus.
    #[serde(default)]
    pub raw: Vec<PathBuf>,
    /// Prompts for model-generated calibration text.
    #[serde(default)]
    pub prompts: Vec<PathBuf>,
    #[serde(default = "default_calibration_max_new")]
    pub max_new: usize,
    #[serde(default)]
    pub count_prompts: bool,
}

fn default_calibration_max_new() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub prompts: Vec<PathBuf>,
    #[serde(default = "default_eval_max_new")]
    pub max_new: usize,
}

fn default_eval_max_new() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Sequential draft passes per block.
    #[default]
    Depth,
    /// Total draft tokens per block.
    MaxTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    /// Replaces the parameter ratio of the untrimmed draft; trimmed drafts
    /// scale it by their parameter fraction.
    pub relative_latency: Option<f64>,
    pub gamma: GammaMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    /// Parses, resolves paths against the file's directory, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.train.iter_mut().for_each(fix);
        self.calibration.raw.iter_mut().for_each(fix);
        self.calibration.prompts.iter_mut().for_each(fix);
        self.eval.prompts.iter_mut().for_each(fix);
        fix(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.corpus.train.is_empty() {
            return cfg("corpus.train lists no files".into());
        }
        if self.corpus.vocab_size < 3 {
            return cfg(format!("corpus.vocab_size must be at least 3, got {}", self.corpus.vocab_size));
        }
        for (name, spec) in [("target", &self.target), ("draft", &self.draft)] {
            match *spec {
                ModelSpec::Ngram { order, alpha } => {
                    if order == 0 || !(alpha > 0.0 && alpha.is_finite()) {
                        return cfg(format!("{name}: n-gram needs order >= 1 and alpha > 0"));
                    }
                }
                ModelSpec::Linear {
                    dim,
                    window,
                    ridge,
                    logit_scale,
                    ..
                } => {
                    if dim == 0 || window == 0 {
                        return cfg(format!("{name}: linear model needs dim and window >= 1"));
                    }
                    if !(ridge >= 0.0 && logit_scale > 0.0 && logit_scale.is_finite()) {
                        return cfg(format!("{name}: ridge must be >= 0 and logit_scale > 0"));
                    }
                }
            }
        }
        if self.calibration.max_new == 0 || self.eval.max_new == 0 {
            return cfg("max_new must be at least 1".into());
        }
        if self.eval.prompts.is_empty() {
            return cfg("eval.prompts lists no files".into());
        }
        self.tree.validate()?;
        self.trim.validate(self.corpus.vocab_size)?;
        if let Some(c) = self.latency.relative_latency {
            if !(c >= 0.0 && c.is_finite()) {
                return cfg(format!("latency.relative_latency must be finite and >= 0, got {c}"));
            }
        }
        Ok(())
    }

    /// Calibration inputs for `kind`, from the `[calibration]` table.
    pub fn calibration_source(&self, kind: SourceKind) -> Result<CalibrationSource> {
        let prompts = || {
            if self.calibration.prompts.is_empty() {
                Err(Error::Config(format!(
                    "calibration source {kind} needs calibration.prompts"
                )))
            } else {
                Ok(self.calibration.prompts.clone())
            }
        };
        Ok(match kind {
            SourceKind::Raw => CalibrationSource::Raw {
                paths: if self.calibration.raw.is_empty() {
                    self.corpus.train.clone()
                } else {
                    self.calibration.raw.clone()
                },
            },
            SourceKind::Target => CalibrationSource::TargetGenerated {
                prompt_paths: prompts()?,
                max_new: self.calibration.max_new,
            },
            SourceKind::Draft => CalibrationSource::DraftGenerated {
                prompt_paths: prompts()?,
                max_new: self.calibration.max_new,
            },
        })
    }

    pub fn gamma(&self) -> usize {
        match self.latency.gamma {
            GammaMode::Depth => self.tree.depth,
            GammaMode::MaxTokens => self.tree.max_tokens,
        }
    }
}
