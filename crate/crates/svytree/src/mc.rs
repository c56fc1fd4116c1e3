//! Monte Carlo harness: repeated seeded sampling, per-replicate refits of
//! the tree and stepwise-linear working models, empirical MSE/bias
//! aggregation, and the design-consistency trend check.
//!
//! Determinism contract: every replicate derives its RNG seed from
//! `base_seed` by a counter mix (see [`replicate_seed`]), replicates are
//! computed in parallel but aggregated in replicate order, so the report
//! is bitwise identical regardless of thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{Allocation, DesignError, DesignSpec, SampleDraw};
use crate::estimate::{
    ht_total, linear_stepwise_estimator, tree_estimator, EstimateError, EstimatorKind,
    StepwiseControls,
};
use crate::frame::{Frame, VarRole};
use crate::sums::ksum;
use crate::tree::{grow, GrowControls};

#[derive(Debug, Error)]
pub enum McError {
    #[error("EmptyVector: no estimates to aggregate")]
    EmptyVector,
    #[error("InsufficientSampleSizes: consistency check needs at least 3 sample sizes, got {0}")]
    InsufficientSampleSizes(usize),
    #[error("BadConfig: {0}")]
    BadConfig(String),
    #[error("UnknownCell: no report cell for variable `{variable}`, estimator {estimator}")]
    UnknownCell {
        variable: String,
        estimator: EstimatorKind,
    },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
}

/// A sampling design family parameterized by its target sample size, so
/// one simulation can sweep n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignTemplate {
    Srswor,
    StratifiedSrswor {
        strata: String,
        rates: BTreeMap<String, f64>,
    },
    PoissonPps {
        size: String,
    },
}

impl DesignTemplate {
    pub fn instantiate(&self, n: usize) -> DesignSpec {
        match self {
            DesignTemplate::Srswor => DesignSpec::Srswor { n },
            DesignTemplate::StratifiedSrswor { strata, rates } => DesignSpec::StratifiedSrswor {
                strata: strata.clone(),
                allocation: Allocation::Rates {
                    rates: rates.clone(),
                    target_n: n,
                },
            },
            DesignTemplate::PoissonPps { size } => DesignSpec::PoissonPps {
                size: size.clone(),
                target_n: n as f64,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub design: DesignTemplate,
    /// Sample sizes to sweep; desk-scale default {500, 1000, 2000}.
    #[serde(default = "default_sample_sizes")]
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Study variables to estimate; empty means every study variable.
    #[serde(default)]
    pub study_variables: Vec<String>,
    /// Predictors offered to both working models; empty means every
    /// predictor in the frame.
    #[serde(default)]
    pub predictors: Vec<String>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub grow: GrowControls,
    #[serde(default)]
    pub stepwise: StepwiseControls,
}

fn default_sample_sizes() -> Vec<usize> {
    vec![500, 1000, 2000]
}
fn default_replicates() -> usize {
    200
}
fn default_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::Ht,
        EstimatorKind::GregLinear,
        EstimatorKind::GregTree,
    ]
}

/// One aggregated report cell: a (study variable, estimator, sample size)
/// combination over all replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub variable: String,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub replicates: usize,
    pub mean: f64,
    pub bias: f64,
    /// Population variance of the estimates (divisor R, so that
    /// mse = variance + bias^2 exactly).
    pub variance: f64,
    pub mse: f64,
    /// Delta-method standard error of the MSE estimate, from fourth
    /// moments of the errors.
    pub mse_se: f64,
    /// MSE relative to the HT estimator in the same (variable, n) cell.
    pub rel_mse_ht: f64,
    /// Mean absolute error and its Monte Carlo standard error, both
    /// scaled by 1/N (the Theorem-1 quantity).
    pub mae_over_n: f64,
    pub mae_over_n_se: f64,
    /// Replicates where the estimator failed and the HT value was used.
    pub fallbacks: usize,
    pub truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_population: usize,
    pub base_seed: u64,
    pub cells: Vec<SimCell>,
    /// Wall-clock seconds; excluded from the CSV so reports stay
    /// byte-identical across runs.
    pub elapsed_seconds: f64,
}

/// splitmix64: the standard 64-bit mixing finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate `replicate` of sample-size index `size_index`:
/// splitmix64 applied to base_seed plus a disjoint counter, so the seed
/// stream depends only on (base_seed, size_index, replicate) and never on
/// scheduling.
pub fn replicate_seed(base_seed: u64, size_index: usize, replicate: usize) -> u64 {
    let counter = ((size_index as u64) << 40) ^ (replicate as u64);
    splitmix64(splitmix64(base_seed) ^ counter)
}

/// Per-replicate estimates for one study variable: the value actually
/// used per estimator and whether it was an HT fallback.
struct ReplicateCell {
    value: f64,
    fallback: bool,
}

fn replicate_estimates(
    frame: &Frame,
    sample: &SampleDraw,
    variables: &[String],
    predictors: &[&str],
    estimators: &[EstimatorKind],
    grow_controls: &GrowControls,
    stepwise: &StepwiseControls,
) -> Result<Vec<Vec<ReplicateCell>>, McError> {
    let mut out = Vec::with_capacity(variables.len());
    for var in variables {
        let y = sample.values(frame, var)?;
        let ht = ht_total(&y, &sample.weights)?;
        let mut per_est = Vec::with_capacity(estimators.len());
        for &kind in estimators {
            let cell = match kind {
                EstimatorKind::Ht => ReplicateCell {
                    value: ht,
                    fallback: false,
                },
                EstimatorKind::GregLinear => {
                    match linear_stepwise_estimator(frame, sample, var, predictors, stepwise) {
                        Ok(r) => ReplicateCell {
                            value: r.total,
                            fallback: false,
                        },
                        Err(
                            EstimateError::SingularSystem | EstimateError::EmptySampleBox(_),
                        ) => ReplicateCell {
                            value: ht,
                            fallback: true,
                        },
                        Err(e) => return Err(e.into()),
                    }
                }
                EstimatorKind::GregTree => {
                    let fit = grow(sample, frame, predictors, var, grow_controls)
                        .map_err(EstimateError::from)
                        .and_then(|part| tree_estimator(sample, frame, var, &part));
                    match fit {
                        Ok(r) => ReplicateCell {
                            value: r.total,
                            fallback: false,
                        },
                        Err(
                            EstimateError::SingularSystem
                            | EstimateError::EmptySampleBox(_)
                            | EstimateError::Tree(_),
                        ) => ReplicateCell {
                            value: ht,
                            fallback: true,
                        },
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            per_est.push(cell);
        }
        out.push(per_est);
    }
    Ok(out)
}

/// Empirical MSE: R^-1 sum of squared errors against the truth.
pub fn empirical_mse(estimates: &[f64], truth: f64) -> Result<f64, McError> {
    if estimates.is_empty() {
        return Err(McError::EmptyVector);
    }
    Ok(ksum(estimates.iter().map(|&e| (e - truth) * (e - truth))) / estimates.len() as f64)
}

fn validate(config: &SimConfig, frame: &Frame) -> Result<(), McError> {
    if config.replicates == 0 {
        return Err(McError::BadConfig("replicates must be at least 1".into()));
    }
    if config.sample_sizes.is_empty() {
        return Err(McError::BadConfig("no sample sizes given".into()));
    }
    if config.estimators.is_empty() {
        return Err(McError::BadConfig("no estimators requested".into()));
    }
    for &n in &config.sample_sizes {
        if n == 0 || n > frame.n() {
            return Err(McError::BadConfig(format!(
                "sample size {n} infeasible for a frame of {}",
                frame.n()
            )));
        }
        // Surface infeasible allocations before spawning replicates.
        config.design.instantiate(n).inclusion_probs(frame)?;
    }
    Ok(())
}

/// Run the full simulation sweep over `config.sample_sizes`.
pub fn run_simulation(frame: &Frame, config: &SimConfig) -> Result<SimReport, McError> {
    let start = Instant::now();
    validate(config, frame)?;
    let variables: Vec<String> = if config.study_variables.is_empty() {
        frame
            .specs()
            .iter()
            .filter(|s| s.role == VarRole::Study)
            .map(|s| s.name.clone())
            .collect()
    } else {
        config.study_variables.clone()
    };
    let predictor_names: Vec<String> = if config.predictors.is_empty() {
        frame
            .predictor_specs()
            .iter()
            .map(|s| s.name.clone())
            .collect()
    } else {
        config.predictors.clone()
    };
    let predictors: Vec<&str> = predictor_names.iter().map(|s| s.as_str()).collect();
    for var in &variables {
        frame.study_values(var)?;
    }
    let truths: Vec<f64> = variables
        .iter()
        .map(|v| frame.total(v))
        .collect::<Result<_, _>>()?;

    let mut cells = Vec::new();
    for (size_ix, &n) in config.sample_sizes.iter().enumerate() {
        let design = config.design.instantiate(n);
        // Parallel over replicates; collect preserves replicate order.
        let replicate_rows: Vec<Vec<Vec<ReplicateCell>>> = (0..config.replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = replicate_seed(config.base_seed, size_ix, rep);
                let sample = design.draw(frame, seed)?;
                replicate_estimates(
                    frame,
                    &sample,
                    &variables,
                    &predictors,
                    &config.estimators,
                    &config.grow,
                    &config.stepwise,
                )
            })
            .collect::<Result<_, McError>>()?;

        for (vix, var) in variables.iter().enumerate() {
            let truth = truths[vix];
            // HT MSE for the relative-efficiency column, recomputed from
            // the stored HT cell if requested, otherwise from scratch.
            let mse_of = |eix: usize| -> f64 {
                let est: Vec<f64> = replicate_rows.iter().map(|r| r[vix][eix].value).collect();
                empirical_mse(&est, truth).expect("replicates >= 1")
            };
            let ht_ix = config
                .estimators
                .iter()
                .position(|&k| k == EstimatorKind::Ht);
            let ht_mse = match ht_ix {
                Some(ix) => mse_of(ix),
                None => {
                    // HT not among the requested estimators: rerun the
                    // draws for HT only so rel_mse_ht is still defined.
                    let est: Vec<f64> = (0..config.replicates)
                        .into_par_iter()
                        .map(|rep| {
                            let seed = replicate_seed(config.base_seed, size_ix, rep);
                            let sample = design.draw(frame, seed)?;
                            let y = sample.values(frame, var)?;
                            Ok(ht_total(&y, &sample.weights)?)
                        })
                        .collect::<Result<_, McError>>()?;
                    empirical_mse(&est, truth)?
                }
            };
            for (eix, &kind) in config.estimators.iter().enumerate() {
                let est: Vec<f64> = replicate_rows.iter().map(|r| r[vix][eix].value).collect();
                let fallbacks = replicate_rows
                    .iter()
                    .filter(|r| r[vix][eix].fallback)
                    .count();
                let r = est.len() as f64;
                let mean = ksum(est.iter().copied()) / r;
                let bias = mean - truth;
                let variance = ksum(est.iter().map(|&e| (e - mean) * (e - mean))) / r;
                let mse = empirical_mse(&est, truth)?;
                // Delta method: Var(mse^) = (m4 - m2^2)/R over errors d_r.
                let m4 = ksum(est.iter().map(|&e| {
                    let d = e - truth;
                    d * d * d * d
                })) / r;
                let mse_se = ((m4 - mse * mse).max(0.0) / r).sqrt();
                let abs_err: Vec<f64> = est.iter().map(|&e| (e - truth).abs()).collect();
                let mae = ksum(abs_err.iter().copied()) / r;
                let mae_var =
                    ksum(abs_err.iter().map(|&a| (a - mae) * (a - mae))) / (r - 1.0).max(1.0);
                let n_pop = frame.n() as f64;
                cells.push(SimCell {
                    variable: var.clone(),
                    estimator: kind,
                    n,
                    replicates: est.len(),
                    mean,
                    bias,
                    variance,
                    mse,
                    mse_se,
                    rel_mse_ht: mse / ht_mse,
                    mae_over_n: mae / n_pop,
                    mae_over_n_se: (mae_var / r).sqrt() / n_pop,
                    fallbacks,
                    truth,
                });
            }
        }
    }
    Ok(SimReport {
        n_population: frame.n(),
        base_seed: config.base_seed,
        cells,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyCheck {
    pub pass: bool,
    /// (n, mean |error| / N, s.e. of that mean) in ascending n.
    pub trend: Vec<(usize, f64, f64)>,
}

/// Theorem-1 style trend check: the per-size N^-1 mean absolute error
/// must be non-increasing in n, up to 2 combined standard errors per step.
pub fn consistency_check(
    report: &SimReport,
    variable: &str,
    estimator: EstimatorKind,
) -> Result<ConsistencyCheck, McError> {
    let mut trend: Vec<(usize, f64, f64)> = report
        .cells
        .iter()
        .filter(|c| c.variable == variable && c.estimator == estimator)
        .map(|c| (c.n, c.mae_over_n, c.mae_over_n_se))
        .collect();
    trend.sort_by_key(|&(n, _, _)| n);
    trend.dedup_by_key(|&mut (n, _, _)| n);
    if trend.len() < 3 {
        if trend.is_empty() {
            return Err(McError::UnknownCell {
                variable: variable.to_string(),
                estimator,
            });
        }
        return Err(McError::InsufficientSampleSizes(trend.len()));
    }
    let pass = trend.windows(2).all(|w| {
        let (_, m0, s0) = w[0];
        let (_, m1, s1) = w[1];
        m1 <= m0 + 2.0 * (s0 * s0 + s1 * s1).sqrt()
    });
    Ok(ConsistencyCheck { pass, trend })
}

impl SimReport {
    pub fn cell(&self, variable: &str, estimator: EstimatorKind, n: usize) -> Option<&SimCell> {
        self.cells
            .iter()
            .find(|c| c.variable == variable && c.estimator == estimator && c.n == n)
    }

    /// CSV form, one row per cell. Contains no timing, so repeated runs
    /// with one seed are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variable,estimator,n,replicates,mean,bias,variance,mse,mse_se,rel_mse_ht,mae_over_n,mae_over_n_se,fallbacks,truth\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.variable,
                c.estimator,
                c.n,
                c.replicates,
                c.mean,
                c.bias,
                c.variance,
                c.mse,
                c.mse_se,
                c.rel_mse_ht,
                c.mae_over_n,
                c.mae_over_n_se,
                c.fallbacks,
                c.truth
            ));
        }
        out
    }

    /// Human-readable summary, including wall-clock time.
    pub fn summary_text(&self) -> String {
        let mut out = format!(
            "simulation over N={} population, base seed {}, {:.2}s\n",
            self.n_population, self.base_seed, self.elapsed_seconds
        );
        let mut variables: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !variables.contains(&c.variable.as_str()) {
                variables.push(&c.variable);
            }
        }
        for var in variables {
            let truth = self
                .cells
                .iter()
                .find(|c| c.variable == var)
                .map(|c| c.truth)
                .unwrap_or(f64::NAN);
            out.push_str(&format!("\n{var} (t_y = {truth:.2})\n"));
            out.push_str(&format!(
                "  {:>6} {:>12} {:>14} {:>14} {:>10} {:>9}\n",
                "n", "estimator", "bias", "mse", "rel(HT)", "fallbacks"
            ));
            for c in self.cells.iter().filter(|c| c.variable == var) {
                out.push_str(&format!(
                    "  {:>6} {:>12} {:>14.4} {:>14.6e} {:>10.3} {:>9}\n",
                    c.n,
                    c.estimator.to_string(),
                    c.bias,
                    c.mse,
                    c.rel_mse_ht,
                    c.fallbacks
                ));
            }
        }
        out
    }
}
