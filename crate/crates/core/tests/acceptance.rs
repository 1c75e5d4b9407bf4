//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and fails if any criterion fails.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture`.

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vocabtrim::calibration::SourceKind;
use vocabtrim::config::{ExperimentConfig, ModelSpec};
use vocabtrim::decode::{spd_generate, GenerateParams, TreeConfig};
use vocabtrim::lm::{train_ngram, trim_head, AnyModel, LanguageModel, LinearHeadModel, TrimmedHeadModel};
use vocabtrim::metrics::BenchRow;
use vocabtrim::pipeline::{self, Experiment, RunOutput};
use vocabtrim::vocab::{select_trim, tokenize, FrequencyCounter, TrimCriterion, TrimSelection};
use vocabtrim::{Error, TokenId};

type Outcome = Result<(bool, String), String>;

const SWEEP_FRACTIONS: [f64; 6] = [0.02, 0.05, 0.1, 0.25, 0.5, 1.0];

fn moby_config(out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/moby.toml");
    let mut cfg = ExperimentConfig::load(&path).expect("configs/moby.toml");
    cfg.output.dir = out.to_path_buf();
    cfg
}

/// First-max argmax over the full logits: the reference greedy decode.
fn oracle_greedy(target: &dyn LanguageModel, prompt: &[TokenId], max_new: usize, eos: TokenId) -> Vec<TokenId> {
    let mut ctx = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new {
        let logits = target.next_logits(&ctx).unwrap();
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        let t = best as TokenId;
        out.push(t);
        ctx.push(t);
        if t == eos {
            break;
        }
    }
    out
}

fn random_streams(rng: &mut ChaCha8Rng, v: usize, n: usize, len: usize) -> Vec<Vec<TokenId>> {
    // Skewed draws so the n-gram tables have structure.
    (0..n)
        .map(|_| {
            (0..len)
                .map(|_| {
                    let u: f64 = rng.random();
                    ((u * u * v as f64) as usize).min(v - 1) as TokenId
                })
                .collect()
        })
        .collect()
}

fn random_model(rng: &mut ChaCha8Rng, v: usize, ngram: bool) -> AnyModel {
    if ngram {
        let streams = random_streams(rng, v, 8, 40 * v.min(100));
        let order = rng.random_range(1..=4);
        train_ngram(&streams, order, rng.random_range(0.1..2.0), v).unwrap().into()
    } else {
        let d = rng.random_range(2..=16);
        let m = rng.random_range(1..=3);
        LinearHeadModel::random(v, d, m, rng.random()).unwrap().into()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let sizes = [6usize, 50, 500];
    let cases = 120;
    let mut mismatches = 0;
    for case in 0..cases {
        let v = sizes[case % 3];
        let target = random_model(&mut rng, v, case % 2 == 0);
        let draft = Arc::new(random_model(&mut rng, v, (case / 2) % 2 == 0));
        let special = BTreeSet::from([(v - 1) as TokenId]);
        let k = rng.random_range(1..=v);
        let counter = FrequencyCounter::from_counts((0..v).map(|_| rng.random_range(0..20)).collect());
        let sel = select_trim(&counter, &TrimCriterion::TopK { k }, &special).unwrap();
        let trimmed = match draft.as_ref() {
            AnyModel::Linear(m) => trim_head(m, &sel).unwrap(),
            AnyModel::NGram(_) => TrimmedHeadModel::gather(draft.clone(), &sel).unwrap(),
        };
        let prompt: Vec<TokenId> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..v as TokenId)).collect();
        let depth = rng.random_range(1..=4);
        let cfg = TreeConfig {
            depth,
            node_top_k: rng.random_range(1..=8),
            max_tokens: rng.random_range(depth..=32),
        };
        let eos = (v - 1) as TokenId;
        let params = GenerateParams { max_new: 24, eos: Some(eos) };
        let out = spd_generate(&target, &trimmed, trimmed.mapping(), &prompt, &params, &cfg).unwrap();
        if out.tokens != oracle_greedy(&target, &prompt, 24, eos) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        mismatches == 0 && secs < 30.0,
        format!("{cases} cases, V in {sizes:?}, {mismatches} mismatches, {secs:.1}s (limit 30s)"),
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut bad_logits = 0;
    let mut bad_params = 0;
    for i in 0..100 {
        let v = rng.random_range(1..=64);
        let d = rng.random_range(1..=16);
        let m = rng.random_range(1..=3);
        let model = LinearHeadModel::random(v, d, m, i).unwrap();
        let mut ids: Vec<TokenId> = (0..v as TokenId).collect();
        ids.shuffle(&mut rng);
        let k = rng.random_range(1..=v);
        let sel = TrimSelection::new(ids[..k].iter().copied(), v, "").unwrap();
        let trimmed = trim_head(&model, &sel).unwrap();
        for _ in 0..5 {
            let ctx: Vec<TokenId> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..v as TokenId)).collect();
            let full = model.next_logits(&ctx).unwrap();
            let part = trimmed.trimmed_next_logits(&ctx).unwrap();
            let kept = sel.kept();
            if part.len() != k || part.iter().zip(kept).any(|(p, &t)| p.to_bits() != full[t as usize].to_bits()) {
                bad_logits += 1;
            }
        }
        if model.param_count() - trimmed.param_count() != (d * (v - k)) as u64 {
            bad_params += 1;
        }
    }
    Ok((
        bad_logits == 0 && bad_params == 0,
        format!("100 models (V<=64, d<=16): {bad_logits} logit mismatches, {bad_params} parameter-saving mismatches"),
    ))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut mismatches = 0;
    let mut errors_checked = 0;
    for _ in 0..200 {
        let v = rng.random_range(2..=1000);
        let ceiling = rng.random_range(1..50);
        let counts: Vec<u64> = (0..v).map(|_| rng.random_range(0..ceiling)).collect();
        let counter = FrequencyCounter::from_counts(counts.clone());
        let n_special = rng.random_range(0..=3.min(v - 1));
        let special: BTreeSet<TokenId> = (0..n_special).map(|_| rng.random_range(0..v as TokenId)).collect();
        if !special.is_empty() {
            let too_small = select_trim(&counter, &TrimCriterion::TopK { k: special.len() - 1 }, &special);
            if special.len() > 1 && !matches!(too_small, Err(Error::KTooSmall { .. })) {
                mismatches += 1;
            }
            errors_checked += 1;
        }
        let k = rng.random_range(special.len().max(1)..=v);
        let got = select_trim(&counter, &TrimCriterion::TopK { k }, &special).unwrap();
        // Brute force: every non-special id sorted by (count desc, id asc).
        let mut rest: Vec<(u64, TokenId)> = (0..v as TokenId)
            .filter(|t| !special.contains(t))
            .map(|t| (counts[t as usize], t))
            .collect();
        rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut want: Vec<TokenId> = special.iter().copied().collect();
        want.extend(rest.iter().take(k - special.len()).map(|&(_, t)| t));
        want.sort_unstable();
        if got.kept() != want.as_slice() || got.digest() != counter.digest() {
            mismatches += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("200 counters (V<=1000, with ties and forced specials): {mismatches} mismatches, {errors_checked} too-small checks"),
    ))
}

/// Distinct (context, next) pairs for every context length below `order`,
/// recounted from the training text.
fn ngram_entries(exp: &Experiment, order: usize) -> u64 {
    let mut entries: HashSet<(Vec<TokenId>, TokenId)> = HashSet::new();
    for path in &exp.config.corpus.train {
        for line in std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()) {
            let s = tokenize(line, &exp.vocab);
            for i in 0..s.len() {
                for n in 0..order.min(i + 1) {
                    entries.insert((s[i - n..i].to_vec(), s[i]));
                }
            }
        }
    }
    entries.len() as u64
}

/// BE and MBSU recomputed from accepted counts and parameter counts.
fn recompute(row: &BenchRow, c: f64, gamma: usize) -> (f64, f64) {
    let blocks = row.accepted_per_block.len() as f64;
    let be = (row.accepted_per_block.iter().sum::<usize>() as f64 + blocks) / blocks;
    (be, be / (c * gamma as f64 + 1.0))
}

fn criterion_4(exp: &Experiment, rows: &[BenchRow]) -> Outcome {
    let AnyModel::Linear(draft) = exp.draft.as_ref() else {
        return Err("benchmark draft is not a linear model".into());
    };
    let (v, d, m) = (exp.vocab_size() as u64, draft.dim() as u64, draft.trunk().window() as u64);
    let ModelSpec::Ngram { order, .. } = exp.config.target else {
        return Err("benchmark target is not an n-gram".into());
    };
    let target_params = ngram_entries(exp, order);
    let gamma = exp.config.tree.depth;
    let mut worst = 0.0f64;
    let mut out_of_bounds = 0;
    for row in rows {
        let draft_params = v * d + row.k as u64 * d + m * d;
        let c = draft_params as f64 / target_params as f64;
        let (be, mbsu) = recompute(row, c, gamma);
        worst = worst
            .max((be - row.block_efficiency).abs())
            .max((mbsu - row.mbsu).abs())
            .max((c - row.latency.c).abs());
        if !(1.0..=(gamma + 1) as f64).contains(&row.block_efficiency) || row.produced != row.accepted_per_block.iter().sum::<usize>() + row.blocks {
            out_of_bounds += 1;
        }
    }
    Ok((
        worst <= 1e-12 && out_of_bounds == 0,
        format!(
            "{} rows: max |recomputed - reported| = {worst:e} (limit 1e-12), {out_of_bounds} rows outside BE in [1, {}]",
            rows.len(),
            gamma + 1
        ),
    ))
}

fn criterion_5(exp: &Experiment, run: &RunOutput, elapsed: Duration) -> Outcome {
    let rows = &run.report.rows;
    let mut detail: Vec<String> = rows
        .iter()
        .map(|r| format!("K={} BE={:.4} MBSU={:.4}", r.k, r.block_efficiency, r.mbsu))
        .collect();
    if rows.len() != SWEEP_FRACTIONS.len() || rows.last().map(|r| r.k) != Some(exp.vocab_size()) {
        return Err(format!("unexpected sweep rows: {}", detail.join("; ")));
    }
    let full = rows.last().unwrap();
    let non_increasing = rows.windows(2).all(|w| w[0].block_efficiency <= w[1].block_efficiency);
    let quarter = &rows[3];
    let drop = (full.block_efficiency - quarter.block_efficiency) / full.block_efficiency;
    let a = non_increasing && drop <= 0.10;
    let (best, best_row) = rows
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.mbsu.total_cmp(&y.1.mbsu).then(y.0.cmp(&x.0)))
        .unwrap();
    let beats_full = best_row.mbsu > full.mbsu;
    let interior = best > 0 && best < rows.len() - 1;
    let fast = elapsed < Duration::from_secs(300);
    detail.push(format!(
        "(a) non-increasing={non_increasing}, drop at 0.25V={:.2}% (limit 10%); (b) max MBSU at K={} beats K=V: {beats_full}, interior: {interior}; {:.0}s (limit 300s)",
        100.0 * drop,
        best_row.k,
        elapsed.as_secs_f64()
    ));
    Ok((a && beats_full && interior && fast, detail.join("; ")))
}

fn criterion_6(run: &RunOutput) -> Outcome {
    let report = &run.report;
    let have: Vec<&str> = report.rows.iter().map(|r| r.source.as_str()).collect();
    let all = SourceKind::ALL.iter().all(|s| have.contains(&s.as_str()));
    let ordering = pipeline::source_ordering(report);
    println!("calibration sources by block efficiency: {ordering}");
    Ok((all, format!("rows for {have:?}; ordering logged: {ordering}")))
}

fn run_files(run: &RunOutput, dir: &Path) -> Vec<(String, Vec<u8>)> {
    pipeline::write_run(run, dir, "bench")
        .unwrap()
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_7(first: &RunOutput, scratch: &Path) -> Outcome {
    let cfg = moby_config(&scratch.join("replay"));
    let exp = Experiment::prepare(cfg).map_err(|e| e.to_string())?;
    let second = pipeline::bench(&exp, &SourceKind::ALL).map_err(|e| e.to_string())?;
    let a = run_files(first, &scratch.join("run_a"));
    let b = run_files(&second, &scratch.join("run_b"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let kinds_present = ["counter", "selection", ".csv"].iter().all(|k| names.iter().any(|n| n.contains(k)));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Ok((
        kinds_present && differing.is_empty() && a.len() == b.len(),
        format!("{} files compared across two full runs, differing: {differing:?}", a.len()),
    ))
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())),
    }
}

#[test]
fn acceptance_suite() {
    let scratch = tempfile::tempdir().unwrap();
    let scratch_path: PathBuf = scratch.path().to_path_buf();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "losslessness", guarded(criterion_1)),
        (2, "trim-head exactness", guarded(criterion_2)),
        (3, "top-k oracle equivalence", guarded(criterion_3)),
    ];

    let start = Instant::now();
    let (c4, c5, c6, c7) = match Experiment::prepare(moby_config(&scratch_path.join("moby"))) {
        Err(e) => {
            let msg = format!("benchmark setup failed: {e}");
            (Err(msg.clone()), Err(msg.clone()), Err(msg.clone()), Err(msg))
        }
        Ok(exp) => {
            let sweep = guarded(|| {
                let ks = pipeline::ks_from_fractions(&SWEEP_FRACTIONS, exp.vocab_size()).map_err(|e| e.to_string())?;
                let run = pipeline::sweep(&exp, exp.config.calibration.source, &ks).map_err(|e| e.to_string())?;
                Ok((run, start.elapsed()))
            });
            let c5 = match &sweep {
                Ok((run, elapsed)) => guarded(|| criterion_5(&exp, run, *elapsed)),
                Err(e) => Err(e.clone()),
            };
            let bench = guarded(|| pipeline::bench(&exp, &SourceKind::ALL).map_err(|e| e.to_string()));
            let (c6, c7) = match &bench {
                Ok(run) => (guarded(|| criterion_6(run)), guarded(|| criterion_7(run, &scratch_path))),
                Err(e) => (Err(e.clone()), Err(e.clone())),
            };
            let rows: Vec<BenchRow> = [&sweep.map(|s| s.0), &bench]
                .into_iter()
                .flatten()
                .flat_map(|run| run.report.rows.iter().cloned())
                .collect();
            let c4 = if rows.is_empty() {
                Err("no benchmark rows to check".into())
            } else {
                guarded(|| criterion_4(&exp, &rows))
            };
            (c4, c5, c6, c7)
        }
    };
    results.push((4, "metric recomputation", c4));
    results.push((5, "desk-scale trimming effect", c5));
    results.push((6, "calibration-source comparison", c6));
    results.push((7, "determinism", c7));

    let mut failed = Vec::new();
    for (n, name, outcome) in &results {
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (*pass, detail.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        println!("criterion {n} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(*n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
