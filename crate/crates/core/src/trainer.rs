//! Online training runs: item sampling, the update loop, periodic evaluation
//! of ε and the largest weight, and the run outcome.
//!
//! A run is driven by one `ChaCha8Rng` seeded from `RunConfig::seed`. Initial
//! weights are drawn first (`W_a`, `W_b`, `W_c`, row-major), then each item
//! draws the entries of `A` followed by those of `B`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{init_weights, TrainingItem};
use crate::tensor::{build_matmul_tensor, decomposition_error, MAX_N};
use crate::update::{Learner, UpdateMode};
use crate::weights::WeightSet;

pub const DEFAULT_EPS_TARGET: f64 = 1e-14;
pub const DEFAULT_EVAL_EVERY: u64 = 1000;
pub const DEFAULT_GROWTH_THRESHOLD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    /// Item budget; zero evaluates the initial weights only.
    pub max_items: u64,
    pub eps_target: f64,
    pub eval_every: u64,
    pub init_scale: f64,
    #[serde(with = "mode_serde")]
    pub mode: UpdateMode,
}

impl RunConfig {
    pub fn new(n: usize, r: usize, seed: u64, max_items: u64) -> Self {
        Self {
            n,
            r,
            seed,
            max_items,
            eps_target: DEFAULT_EPS_TARGET,
            eval_every: DEFAULT_EVAL_EVERY,
            init_scale: 1.0,
            mode: UpdateMode::Cg1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_N {
            return Err(Error::SizeOutOfRange(self.n));
        }
        if self.r == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if self.eps_target.is_nan() || self.eps_target <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eps_target must be positive, got {}",
                self.eps_target
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

mod mode_serde {
    use super::UpdateMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mode: &UpdateMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&mode.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UpdateMode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub items_seen: u64,
    pub epsilon: f64,
    pub max_weight: f64,
    pub skipped_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Converged,
    NonConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Converged,
    BorderSuspect,
    Indeterminate,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::BorderSuspect => "border_suspect",
            Self::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: RunConfig,
    pub samples: Vec<Sample>,
    pub final_epsilon: f64,
    pub items_used: u64,
    pub outcome: Outcome,
    pub classification: Classification,
    pub initial_max_weight: f64,
    pub final_max_weight: f64,
    /// `final_max_weight / initial_max_weight`.
    pub weight_growth_factor: f64,
    pub skipped_count: u64,
}

pub fn sample_item<R: Rng + ?Sized>(n: usize, rng: &mut R) -> TrainingItem {
    let d = n * n;
    loop {
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if let Some(item) = TrainingItem::from_matrices(n, a, b) {
            return item;
        }
    }
}

pub fn max_weight_magnitude(w: &WeightSet) -> f64 {
    w.max_abs()
}

pub fn run_training(cfg: &RunConfig) -> Result<(WeightSet, RunTrace)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = init_weights(cfg.n, cfg.r, cfg.init_scale, &mut rng);
    train_loop(cfg, w, rng)
}

/// Like [`run_training`] but starting from the given weights; the generator
/// then only draws training items.
pub fn run_training_from(cfg: &RunConfig, initial: WeightSet) -> Result<(WeightSet, RunTrace)> {
    cfg.validate()?;
    if (initial.n(), initial.r()) != (cfg.n, cfg.r) {
        return Err(Error::DimensionMismatch(format!(
            "initial weights have (n, r) = ({}, {}), config asks for ({}, {})",
            initial.n(),
            initial.r(),
            cfg.n,
            cfg.r
        )));
    }
    train_loop(cfg, initial, ChaCha8Rng::seed_from_u64(cfg.seed))
}

fn train_loop(cfg: &RunConfig, mut w: WeightSet, mut rng: ChaCha8Rng) -> Result<(WeightSet, RunTrace)> {
    let target = build_matmul_tensor(cfg.n)?;
    let initial_max_weight = w.max_abs();
    let mut learner = Learner::new(cfg.n, cfg.r);
    let mut skipped: u64 = 0;
    let mut items: u64 = 0;

    let evaluate = |w: &WeightSet, items: u64, skipped: u64| -> Result<Sample> {
        Ok(Sample {
            items_seen: items,
            epsilon: decomposition_error(w, &target)?,
            max_weight: w.max_abs(),
            skipped_count: skipped,
        })
    };

    let mut samples = vec![evaluate(&w, 0, 0)?];
    let done = |s: &Sample| s.epsilon < cfg.eps_target || !s.epsilon.is_finite();

    if !done(&samples[0]) {
        while items < cfg.max_items {
            let item = sample_item(cfg.n, &mut rng);
            if learner.step(&mut w, &item, cfg.mode) {
                skipped += 1;
            }
            items += 1;
            if items.is_multiple_of(cfg.eval_every) || items == cfg.max_items {
                let s = evaluate(&w, items, skipped)?;
                samples.push(s);
                if done(&s) {
                    break;
                }
            }
        }
    }

    let last = *samples.last().expect("item-0 sample");
    let outcome = if last.epsilon < cfg.eps_target {
        Outcome::Converged
    } else {
        Outcome::NonConverged
    };
    let weight_growth_factor = growth_factor(initial_max_weight, last.max_weight);
    let mut trace = RunTrace {
        config: cfg.clone(),
        samples,
        final_epsilon: last.epsilon,
        items_used: items,
        outcome,
        classification: Classification::Indeterminate,
        initial_max_weight,
        final_max_weight: last.max_weight,
        weight_growth_factor,
        skipped_count: skipped,
    };
    trace.classification = classify_run(&trace, DEFAULT_GROWTH_THRESHOLD);
    Ok((w, trace))
}

fn growth_factor(initial: f64, last: f64) -> f64 {
    if initial > 0.0 {
        last / initial
    } else if last == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Heuristic label: a non-converged run whose largest weight grew by at least
/// `growth_threshold` while ε still fell tenfold looks like a border
/// approximation.
pub fn classify_run(trace: &RunTrace, growth_threshold: f64) -> Classification {
    if trace.outcome == Outcome::Converged {
        return Classification::Converged;
    }
    let first = trace.samples.first().map_or(f64::NAN, |s| s.epsilon);
    let improved = trace.final_epsilon.is_finite() && first >= 10.0 * trace.final_epsilon;
    if trace.weight_growth_factor >= growth_threshold && improved {
        Classification::BorderSuspect
    } else {
        Classification::Indeterminate
    }
}
