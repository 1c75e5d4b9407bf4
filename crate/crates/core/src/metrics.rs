//! Block efficiency, relative latency and memory-bound speed-up (MBSU),
//! plus the benchmark report they feed.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::DecodeStats;
use crate::error::{Error, Result};

/// Tokens emitted per target verification pass (τ).
pub fn block_efficiency(stats: &DecodeStats) -> Result<f64> {
    if stats.blocks == 0 {
        return Err(Error::ZeroBlocks);
    }
    Ok(stats.produced as f64 / stats.blocks as f64)
}

/// Draft-to-target cost ratio `c`, measured in parameters.
pub fn relative_latency(draft_params: u64, target_params: u64) -> Result<f64> {
    if target_params == 0 {
        return Err(Error::ZeroTarget);
    }
    Ok(draft_params as f64 / target_params as f64)
}

/// `τ / (c·γ + 1)`: speed-up when every forward pass is bound by reading
/// weights, with `γ` sequential draft passes per block.
pub fn mbsu(tau: f64, c: f64, gamma: usize) -> f64 {
    tau / (c * gamma as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub c: f64,
    pub gamma: usize,
}

impl LatencyModel {
    pub fn new(c: f64, gamma: usize) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("relative latency must be finite and >= 0, got {c}")));
        }
        if gamma == 0 {
            return Err(Error::Config("gamma must be at least 1".into()));
        }
        Ok(LatencyModel { c, gamma })
    }

    pub fn speedup(&self, tau: f64) -> f64 {
        mbsu(tau, self.c, self.gamma)
    }
}

/// One benchmark configuration evaluated over a prompt set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub task: String,
    /// Kept draft vocabulary size.
    pub k: usize,
    pub head_params: u64,
    pub block_efficiency: f64,
    pub mbsu: f64,
    pub produced: usize,
    pub blocks: usize,
    pub seed: u64,
    pub source: String,
    pub latency: LatencyModel,
    /// Accepted draft tokens of every block, prompts concatenated in order.
    pub accepted_per_block: Vec<usize>,
}

impl BenchRow {
    pub fn from_stats(
        task: &str,
        k: usize,
        head_params: u64,
        seed: u64,
        source: &str,
        latency: LatencyModel,
        stats: &DecodeStats,
    ) -> Result<Self> {
        let tau = block_efficiency(stats)?;
        let row = BenchRow {
            task: task.to_string(),
            k,
            head_params,
            block_efficiency: tau,
            mbsu: latency.speedup(tau),
            produced: stats.produced,
            blocks: stats.blocks,
            seed,
            source: source.to_string(),
            latency,
            accepted_per_block: stats.accepted_per_block.clone(),
        };
        row.check_bounds(stats.draft_passes_per_block)?;
        Ok(row)
    }

    /// τ must lie in `[1, depth + 1]`.
    pub fn check_bounds(&self, depth: usize) -> Result<()> {
        let tau = self.block_efficiency;
        if !(1.0..=(depth + 1) as f64).contains(&tau) {
            return Err(Error::Invariant(format!(
                "block efficiency {tau} outside [1, {}]",
                depth + 1
            )));
        }
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "task",
    "K",
    "head_params",
    "BE",
    "MBSU",
    "produced",
    "blocks",
    "seed",
    "source",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invariant(format!("csv encoding failed: {e}"));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.task.clone(),
                r.k.to_string(),
                r.head_params.to_string(),
                r.block_efficiency.to_string(),
                r.mbsu.to_string(),
                r.produced.to_string(),
                r.blocks.to_string(),
                r.seed.to_string(),
                r.source.clone(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Invariant(format!("csv flush failed: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Aligned plain-text table for the terminal.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>7} {:>11} {:>8} {:>8} {:>8} {:>8} {:>6}  {}\n",
            "task", "K", "head_params", "BE", "MBSU", "c", "produced", "blocks", "source"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:>7} {:>11} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>6}  {}",
                r.task,
                r.k,
                r.head_params,
                r.block_efficiency,
                r.mbsu,
                r.latency.c,
                r.produced,
                r.blocks,
                r.source
            );
        }
        out
    }

    /// `K\tBE\tMBSU` lines for plotting BE and MBSU against head size.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("K\tBE\tMBSU\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}", r.k, r.block_efficiency, r.mbsu);
        }
        out
    }
}
