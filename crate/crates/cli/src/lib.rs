//! Experiment plumbing behind the `mmcl` binary: trace files, batch
//! ensembles and their summaries, and random symmetry transforms.
//!
//! Output formats:
//!
//! * trace (`*.jsonl`): one JSON object per evaluation sample,
//!   `{"items_seen":…,"epsilon":…,"max_weight":…,"skipped_count":…}`;
//! * batch summary (`summary.csv`): one `run` row per run and a final
//!   `aggregate` row, see [`SummaryRow`];
//! * histogram (`histogram.csv`): `bin_low,bin_high,count` over decade bins
//!   spanning `[1e-16, 1e1]`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use mmcl_core::{condition_number, run_training, Classification, Outcome, RunConfig, RunTrace, Sample};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Condition-number cap for randomly sampled transforms.
pub const SAMPLED_TRANSFORM_MAX_COND: f64 = 1e3;

pub const HISTOGRAM_LOW_EXP: i32 = -16;
pub const HISTOGRAM_HIGH_EXP: i32 = 1;

pub fn write_trace(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating trace file {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("trace line {}", i + 1)))
        .collect()
}

/// Seed of run `index` in a batch.
pub fn batch_seed(master_seed: u64, index: usize) -> u64 {
    master_seed.wrapping_add(index as u64)
}

/// Runs `runs` independent trainings from `template`, run `i` with seed
/// `master_seed + i`. Results come back in run order regardless of `jobs`.
pub fn run_batch(template: &RunConfig, runs: usize, master_seed: u64, jobs: usize) -> Result<Vec<RunTrace>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    pool.install(|| {
        (0..runs)
            .into_par_iter()
            .map(|i| {
                let cfg = RunConfig {
                    seed: batch_seed(master_seed, i),
                    ..template.clone()
                };
                run_training(&cfg)
                    .map(|(_, trace)| trace)
                    .with_context(|| format!("run {i}"))
            })
            .collect()
    })
}

/// A row of `summary.csv`. Run rows leave the aggregate columns empty and the
/// aggregate row leaves the per-run columns empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub row_type: &'static str,
    pub run_id: Option<usize>,
    pub seed: Option<u64>,
    pub final_epsilon: Option<f64>,
    pub items_used: Option<u64>,
    pub classification: Option<String>,
    pub final_max_weight: Option<f64>,
    pub weight_growth_factor: Option<f64>,
    pub runs: Option<usize>,
    pub converged_count: Option<usize>,
    pub converged_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub run_id: usize,
    pub seed: u64,
    pub final_epsilon: f64,
    pub items_used: u64,
    pub classification: Classification,
    pub final_max_weight: f64,
    pub weight_growth_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub rows: Vec<RunRow>,
    pub runs: usize,
    pub converged_count: usize,
    pub converged_fraction: f64,
    pub histogram: Vec<HistogramBin>,
}

impl BatchSummary {
    pub fn from_traces(traces: &[RunTrace]) -> Self {
        let rows: Vec<RunRow> = traces
            .iter()
            .enumerate()
            .map(|(run_id, t)| RunRow {
                run_id,
                seed: t.config.seed,
                final_epsilon: t.final_epsilon,
                items_used: t.items_used,
                classification: t.classification,
                final_max_weight: t.final_max_weight,
                weight_growth_factor: t.weight_growth_factor,
            })
            .collect();
        let runs = rows.len();
        let converged_count = traces.iter().filter(|t| t.outcome == Outcome::Converged).count();
        let converged_fraction = if runs == 0 {
            0.0
        } else {
            converged_count as f64 / runs as f64
        };
        let eps: Vec<f64> = rows.iter().map(|r| r.final_epsilon).collect();
        Self {
            rows,
            runs,
            converged_count,
            converged_fraction,
            histogram: log_histogram(&eps),
        }
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let mut out: Vec<SummaryRow> = self
            .rows
            .iter()
            .map(|r| SummaryRow {
                row_type: "run",
                run_id: Some(r.run_id),
                seed: Some(r.seed),
                final_epsilon: Some(r.final_epsilon),
                items_used: Some(r.items_used),
                classification: Some(r.classification.to_string()),
                final_max_weight: Some(r.final_max_weight),
                weight_growth_factor: Some(r.weight_growth_factor),
                runs: None,
                converged_count: None,
                converged_fraction: None,
            })
            .collect();
        out.push(SummaryRow {
            row_type: "aggregate",
            run_id: None,
            seed: None,
            final_epsilon: None,
            items_used: None,
            classification: None,
            final_max_weight: None,
            weight_growth_factor: None,
            runs: Some(self.runs),
            converged_count: Some(self.converged_count),
            converged_fraction: Some(self.converged_fraction),
        });
        out
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        for row in self.summary_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_histogram(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        for bin in &self.histogram {
            w.serialize(bin)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decade bins over `[1e-16, 1e1]`. Values below the range (including exact
/// zeros) land in the first bin, values above it or non-finite in the last.
pub fn log_histogram(values: &[f64]) -> Vec<HistogramBin> {
    let bins = (HISTOGRAM_HIGH_EXP - HISTOGRAM_LOW_EXP) as usize;
    let mut hist: Vec<HistogramBin> = (0..bins)
        .map(|b| {
            let e = HISTOGRAM_LOW_EXP + b as i32;
            HistogramBin {
                bin_low: 10f64.powi(e),
                bin_high: 10f64.powi(e + 1),
                count: 0,
            }
        })
        .collect();
    for &v in values {
        let idx = if !v.is_finite() {
            bins - 1
        } else if v <= 0.0 {
            0
        } else {
            let e = v.log10().floor() as i64 - HISTOGRAM_LOW_EXP as i64;
            e.clamp(0, bins as i64 - 1) as usize
        };
        hist[idx].count += 1;
    }
    hist
}

/// An `n × n` matrix with entries uniform on `[-1, 1]`, redrawn until its
/// condition number is at most `max_cond`.
pub fn sample_well_conditioned<R: Rng + ?Sized>(n: usize, max_cond: f64, rng: &mut R) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
        if condition_number(&m) <= max_cond {
            return m;
        }
    }
}

/// `(U, V, X)` drawn in that order from a generator seeded with `seed`.
pub fn sample_transform(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = sample_well_conditioned(n, SAMPLED_TRANSFORM_MAX_COND, &mut rng);
    let v = sample_well_conditioned(n, SAMPLED_TRANSFORM_MAX_COND, &mut rng);
    let x = sample_well_conditioned(n, SAMPLED_TRANSFORM_MAX_COND, &mut rng);
    (u, v, x)
}
