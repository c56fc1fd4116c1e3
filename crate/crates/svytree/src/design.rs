//! Sampling designs with exact first-order inclusion probabilities.
//!
//! All randomness is driven by a ChaCha12 generator seeded from a caller
//! supplied 64-bit seed; within-stratum selection is a partial
//! Fisher-Yates pass, so draws are reproducible across platforms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Column, Frame, VarKind};
use crate::sums::ksum;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("OversampledStratum: stratum `{stratum}` has n_h={n_h} > N_h={n_cap}")]
    OversampledStratum {
        stratum: String,
        n_h: usize,
        n_cap: usize,
    },
    #[error("NonpositiveSize: PPS size values must be strictly positive (row {0})")]
    NonpositiveSize(usize),
    #[error("ZeroInclusionProbability: min pi = 0; the design cannot estimate a total")]
    ZeroInclusionProbability,
    #[error("InfeasibleDesign: {0}")]
    InfeasibleDesign(String),
    #[error("NotCategorical: strata variable `{0}` must be categorical")]
    NotCategorical(String),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
}

/// Per-stratum sample-size allocation for stratified SRSWOR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Explicit n_h by stratum level.
    Counts(BTreeMap<String, usize>),
    /// Base sampling rates by stratum level, scaled proportionally so the
    /// realized total sample size equals `target_n`.
    Rates {
        rates: BTreeMap<String, f64>,
        target_n: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSpec {
    Census,
    Srswor {
        n: usize,
    },
    StratifiedSrswor {
        strata: String,
        allocation: Allocation,
    },
    /// Poisson sampling with probability proportional to `size`, expected
    /// sample size `target_n`, capped at 1 with iterative redistribution.
    PoissonPps {
        size: String,
        target_n: f64,
    },
}

/// A realized sample: member indices into the frame (ascending), their
/// inclusion probabilities and design weights w_j = 1/pi_j.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDraw {
    pub indices: Vec<usize>,
    pub pi: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SampleDraw {
    pub fn n(&self) -> usize {
        self.indices.len()
    }

    /// Study values of the sampled units.
    pub fn values(&self, frame: &Frame, study: &str) -> Result<Vec<f64>, DesignError> {
        let y = frame.study_values(study)?;
        Ok(self.indices.iter().map(|&j| y[j]).collect())
    }
}

/// Summary quantities of a design over a frame: N*min(pi), the largest
/// design weight, the spread max(pi)/min(pi), and the sampling fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    pub n_population: usize,
    pub expected_n: f64,
    pub sampling_fraction: f64,
    pub n_times_min_pi: f64,
    pub max_weight: f64,
    pub pi_ratio: f64,
}

impl DesignSpec {
    /// First-order inclusion probabilities over the whole frame.
    pub fn inclusion_probs(&self, frame: &Frame) -> Result<Vec<f64>, DesignError> {
        let n_pop = frame.n();
        match self {
            DesignSpec::Census => Ok(vec![1.0; n_pop]),
            DesignSpec::Srswor { n } => {
                if *n > n_pop {
                    return Err(DesignError::InfeasibleDesign(format!(
                        "n={n} exceeds N={n_pop}"
                    )));
                }
                Ok(vec![*n as f64 / n_pop as f64; n_pop])
            }
            DesignSpec::StratifiedSrswor { strata, allocation } => {
                let (levels, codes) = strata_levels(frame, strata)?;
                let counts = stratum_counts(codes, levels.len());
                let alloc = resolve_allocation(allocation, &levels, &counts)?;
                let mut pi = vec![0.0; n_pop];
                for (j, &c) in codes.iter().enumerate() {
                    let h = c as usize;
                    pi[j] = alloc[h] as f64 / counts[h] as f64;
                }
                Ok(pi)
            }
            DesignSpec::PoissonPps { size, target_n } => {
                let sizes = match frame.column(size)? {
                    Column::Numeric(v) => v,
                    Column::Categorical(_) => {
                        return Err(DesignError::InfeasibleDesign(format!(
                            "PPS size variable `{size}` must be numeric"
                        )))
                    }
                };
                if let Some(row) = sizes.iter().position(|&s| s <= 0.0) {
                    return Err(DesignError::NonpositiveSize(row + 1));
                }
                if *target_n <= 0.0 || *target_n > n_pop as f64 {
                    return Err(DesignError::InfeasibleDesign(format!(
                        "expected sample size {target_n} outside (0, N]"
                    )));
                }
                Ok(pps_probs(sizes, *target_n))
            }
        }
    }

    /// Draw one sample, deterministically in `seed`.
    pub fn draw(&self, frame: &Frame, seed: u64) -> Result<SampleDraw, DesignError> {
        let pi = self.inclusion_probs(frame)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = match self {
            DesignSpec::Census => (0..frame.n()).collect(),
            DesignSpec::Srswor { n } => {
                let mut pool: Vec<usize> = (0..frame.n()).collect();
                partial_fisher_yates(&mut rng, &mut pool, *n)
            }
            DesignSpec::StratifiedSrswor { strata, allocation } => {
                let (levels, codes) = strata_levels(frame, strata)?;
                let counts = stratum_counts(codes, levels.len());
                let alloc = resolve_allocation(allocation, &levels, &counts)?;
                let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); levels.len()];
                for (j, &c) in codes.iter().enumerate() {
                    by_stratum[c as usize].push(j);
                }
                let mut out = Vec::new();
                for (h, mut pool) in by_stratum.into_iter().enumerate() {
                    out.extend(partial_fisher_yates(&mut rng, &mut pool, alloc[h]));
                }
                out
            }
            DesignSpec::PoissonPps { .. } => (0..frame.n())
                .filter(|&j| rng.gen::<f64>() < pi[j])
                .collect(),
        };
        indices.sort_unstable();
        let sample_pi: Vec<f64> = indices.iter().map(|&j| pi[j]).collect();
        let weights: Vec<f64> = sample_pi.iter().map(|&p| 1.0 / p).collect();
        Ok(SampleDraw {
            indices,
            pi: sample_pi,
            weights,
        })
    }

    pub fn diagnostics(&self, frame: &Frame) -> Result<DesignDiagnostics, DesignError> {
        let pi = self.inclusion_probs(frame)?;
        let min_pi = pi.iter().copied().fold(f64::INFINITY, f64::min);
        let max_pi = pi.iter().copied().fold(0.0, f64::max);
        if min_pi <= 0.0 {
            return Err(DesignError::ZeroInclusionProbability);
        }
        let expected_n = ksum(pi.iter().copied());
        let n_pop = frame.n();
        Ok(DesignDiagnostics {
            n_population: n_pop,
            expected_n,
            sampling_fraction: expected_n / n_pop as f64,
            n_times_min_pi: n_pop as f64 * min_pi,
            max_weight: 1.0 / min_pi,
            pi_ratio: max_pi / min_pi,
        })
    }
}

/// Select `n` items by a partial Fisher-Yates pass over `pool`.
fn partial_fisher_yates(rng: &mut ChaCha12Rng, pool: &mut [usize], n: usize) -> Vec<usize> {
    debug_assert!(n <= pool.len());
    for i in 0..n {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool[..n].to_vec()
}

fn strata_levels<'f>(frame: &'f Frame, strata: &str) -> Result<(Vec<String>, &'f [u16]), DesignError> {
    let spec = frame.spec(strata)?;
    let levels = match &spec.kind {
        VarKind::Categorical { levels } => levels.clone(),
        VarKind::Numeric => return Err(DesignError::NotCategorical(strata.to_string())),
    };
    let codes = match frame.column(strata)? {
        Column::Categorical(v) => v.as_slice(),
        Column::Numeric(_) => unreachable!(),
    };
    Ok((levels, codes))
}

fn stratum_counts(codes: &[u16], n_levels: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_levels];
    for &c in codes {
        counts[c as usize] += 1;
    }
    counts
}

/// Resolve an allocation to per-stratum n_h, validating n_h <= N_h and
/// n_h >= 1 on every non-empty stratum.
fn resolve_allocation(
    allocation: &Allocation,
    levels: &[String],
    counts: &[usize],
) -> Result<Vec<usize>, DesignError> {
    let mut alloc = vec![0usize; levels.len()];
    match allocation {
        Allocation::Counts(map) => {
            for (level, &n_h) in map {
                let h = levels
                    .iter()
                    .position(|l| l == level)
                    .ok_or_else(|| DesignError::InfeasibleDesign(format!("unknown stratum `{level}`")))?;
                alloc[h] = n_h;
            }
        }
        Allocation::Rates { rates, target_n } => {
            let mut base = vec![0.0f64; levels.len()];
            for (level, &rate) in rates {
                let h = levels
                    .iter()
                    .position(|l| l == level)
                    .ok_or_else(|| DesignError::InfeasibleDesign(format!("unknown stratum `{level}`")))?;
                if rate <= 0.0 {
                    return Err(DesignError::InfeasibleDesign(format!(
                        "rate for stratum `{level}` must be positive"
                    )));
                }
                base[h] = rate * counts[h] as f64;
            }
            for (h, level) in levels.iter().enumerate() {
                if counts[h] > 0 && base[h] == 0.0 {
                    return Err(DesignError::InfeasibleDesign(format!(
                        "no rate given for non-empty stratum `{level}`"
                    )));
                }
            }
            let total: f64 = base.iter().sum();
            if total <= 0.0 {
                return Err(DesignError::InfeasibleDesign("all strata empty".into()));
            }
            let scale = *target_n as f64 / total;
            for h in 0..levels.len() {
                if counts[h] == 0 {
                    continue;
                }
                alloc[h] = ((base[h] * scale).round() as usize).clamp(1, counts[h]);
            }
            // Fix rounding drift deterministically: walk strata from the
            // largest down, adding or removing one unit within bounds.
            let mut order: Vec<usize> = (0..levels.len()).filter(|&h| counts[h] > 0).collect();
            order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
            let mut realized: isize = alloc.iter().sum::<usize>() as isize;
            let target = *target_n as isize;
            let mut guard = 0;
            while realized != target {
                let mut moved = false;
                for &h in &order {
                    if realized < target && alloc[h] < counts[h] {
                        alloc[h] += 1;
                        realized += 1;
                        moved = true;
                    } else if realized > target && alloc[h] > 1 {
                        alloc[h] -= 1;
                        realized -= 1;
                        moved = true;
                    }
                    if realized == target {
                        break;
                    }
                }
                guard += 1;
                if !moved || guard > 10_000 {
                    return Err(DesignError::InfeasibleDesign(format!(
                        "cannot allocate target_n={target_n} across strata"
                    )));
                }
            }
        }
    }
    for (h, level) in levels.iter().enumerate() {
        if alloc[h] > counts[h] {
            return Err(DesignError::OversampledStratum {
                stratum: level.clone(),
                n_h: alloc[h],
                n_cap: counts[h],
            });
        }
    }
    Ok(alloc)
}

/// Capped PPS probabilities: pi_j = min(1, n s_j / S), iterated so capped
/// units keep pi = 1 and the rest sum to the remaining expected size.
/// Iterated to a 1e-12 fixed point.
fn pps_probs(sizes: &[f64], target_n: f64) -> Vec<f64> {
    let mut capped = vec![false; sizes.len()];
    loop {
        let remaining_n = target_n - capped.iter().filter(|&&c| c).count() as f64;
        let remaining_s: f64 = sizes
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|(&s, _)| s)
            .sum();
        let mut changed = false;
        for (j, &s) in sizes.iter().enumerate() {
            if !capped[j] && remaining_n * s / remaining_s >= 1.0 - 1e-12 {
                capped[j] = true;
                changed = true;
            }
        }
        if !changed {
            let mut pi = vec![1.0; sizes.len()];
            for (j, &s) in sizes.iter().enumerate() {
                if !capped[j] {
                    pi[j] = remaining_n * s / remaining_s;
                }
            }
            return pi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{Column, VarRole, VariableSpec};

    fn two_strata_frame() -> Frame {
        // Stratum A: 100 units, stratum B: 50 units.
        let mut codes = vec![0u16; 100];
        codes.extend(vec![1u16; 50]);
        let y: Vec<f64> = (0..150).map(|i| i as f64).collect();
        Frame::new(
            vec![
                VariableSpec::categorical("h", &["A", "B"], VarRole::Predictor),
                VariableSpec::numeric("y", VarRole::Study),
            ],
            vec![Column::Categorical(codes), Column::Numeric(y)],
        )
        .unwrap()
    }

    fn pps_frame() -> Frame {
        Frame::new(
            vec![
                VariableSpec::categorical("g", &["a"], VarRole::Predictor),
                VariableSpec::numeric("s", VarRole::Study),
            ],
            vec![
                Column::Categorical(vec![0; 4]),
                Column::Numeric(vec![1.0, 1.0, 2.0, 4.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn stratified_pi_is_nh_over_capital_nh() {
        let frame = two_strata_frame();
        let design = DesignSpec::StratifiedSrswor {
            strata: "h".into(),
            allocation: Allocation::Counts([("A".to_string(), 10), ("B".to_string(), 25)].into()),
        };
        let pi = design.inclusion_probs(&frame).unwrap();
        assert!(pi[..100].iter().all(|&p| (p - 0.1).abs() < 1e-15));
        assert!(pi[100..].iter().all(|&p| (p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn census_is_all_ones() {
        let frame = two_strata_frame();
        let pi = DesignSpec::Census.inclusion_probs(&frame).unwrap();
        assert!(pi.iter().all(|&p| p == 1.0));
        let draw = DesignSpec::Census.draw(&frame, 1).unwrap();
        assert_eq!(draw.n(), frame.n());
        assert!(draw.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn pps_capping_matches_hand_computation() {
        // sizes {1,1,2,4}, n=2: base pi = {0.25, 0.25, 0.5, 1.0}; the last
        // unit is capped at 1 and the remainder redistributes to itself.
        let pi = DesignSpec::PoissonPps {
            size: "s".into(),
            target_n: 2.0,
        }
        .inclusion_probs(&pps_frame())
        .unwrap();
        let expect = [0.25, 0.25, 0.5, 1.0];
        for (p, e) in pi.iter().zip(expect) {
            assert!((p - e).abs() < 1e-12, "{pi:?}");
        }
        let total: f64 = pi.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pps_empirical_inclusion_matches_pi() {
        let frame = pps_frame();
        let design = DesignSpec::PoissonPps {
            size: "s".into(),
            target_n: 2.0,
        };
        let pi = design.inclusion_probs(&frame).unwrap();
        let reps = 100_000usize;
        let mut hits = [0usize; 4];
        for r in 0..reps {
            let draw = design.draw(&frame, r as u64).unwrap();
            for &j in &draw.indices {
                hits[j] += 1;
            }
        }
        for j in 0..4 {
            let phat = hits[j] as f64 / reps as f64;
            let se = (pi[j] * (1.0 - pi[j]) / reps as f64).sqrt();
            assert!(
                (phat - pi[j]).abs() <= 3.0 * se.max(1e-12),
                "unit {j}: {phat} vs {}",
                pi[j]
            );
        }
    }

    #[test]
    fn oversampled_stratum_rejected() {
        let frame = two_strata_frame();
        let design = DesignSpec::StratifiedSrswor {
            strata: "h".into(),
            allocation: Allocation::Counts([("A".to_string(), 10), ("B".to_string(), 60)].into()),
        };
        assert!(matches!(
            design.inclusion_probs(&frame),
            Err(DesignError::OversampledStratum { .. })
        ));
    }

    #[test]
    fn nonpositive_size_rejected() {
        let frame = Frame::new(
            vec![
                VariableSpec::categorical("g", &["a"], VarRole::Predictor),
                VariableSpec::numeric("s", VarRole::Study),
            ],
            vec![
                Column::Categorical(vec![0; 2]),
                Column::Numeric(vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        let design = DesignSpec::PoissonPps {
            size: "s".into(),
            target_n: 1.0,
        };
        assert!(matches!(
            design.inclusion_probs(&frame),
            Err(DesignError::NonpositiveSize(2))
        ));
    }

    #[test]
    fn stratified_draw_realizes_exact_allocation() {
        let frame = two_strata_frame();
        let design = DesignSpec::StratifiedSrswor {
            strata: "h".into(),
            allocation: Allocation::Counts([("A".to_string(), 10), ("B".to_string(), 25)].into()),
        };
        for seed in 0..20 {
            let draw = design.draw(&frame, seed).unwrap();
            let in_a = draw.indices.iter().filter(|&&j| j < 100).count();
            assert_eq!(in_a, 10);
            assert_eq!(draw.n() - in_a, 25);
            assert!(draw
                .indices
                .iter()
                .zip(&draw.weights)
                .all(|(&j, &w)| if j < 100 { w == 10.0 } else { w == 2.0 }));
        }
    }

    #[test]
    fn srswor_empirical_inclusion_frequency() {
        // Unit 0 under SRSWOR(n=20, N=100) over 10,000 seeded draws; oracle
        // is the binomial standard error around 0.2.
        let frame = Frame::new(
            vec![
                VariableSpec::categorical("g", &["a"], VarRole::Predictor),
                VariableSpec::numeric("y", VarRole::Study),
            ],
            vec![
                Column::Categorical(vec![0; 100]),
                Column::Numeric((0..100).map(|i| i as f64).collect()),
            ],
        )
        .unwrap();
        let design = DesignSpec::Srswor { n: 20 };
        let reps = 10_000usize;
        let mut hits = 0usize;
        for seed in 0..reps {
            let draw = design.draw(&frame, seed as u64).unwrap();
            assert_eq!(draw.n(), 20);
            if draw.indices.contains(&0) {
                hits += 1;
            }
        }
        let phat = hits as f64 / reps as f64;
        let se = (0.2f64 * 0.8 / reps as f64).sqrt();
        assert!((phat - 0.2).abs() < 3.0 * se, "phat = {phat}");
    }

    #[test]
    fn diagnostics_arithmetic() {
        let frame = two_strata_frame();
        let design = DesignSpec::StratifiedSrswor {
            strata: "h".into(),
            allocation: Allocation::Counts([("A".to_string(), 10), ("B".to_string(), 5)].into()),
        };
        let d = design.diagnostics(&frame).unwrap();
        assert_eq!(d.n_population, 150);
        assert!((d.expected_n - 15.0).abs() < 1e-12);
        assert!((d.sampling_fraction - 0.1).abs() < 1e-12);
        assert!((d.n_times_min_pi - 15.0).abs() < 1e-12);
        assert!((d.max_weight - 10.0).abs() < 1e-12);
        assert!((d.pi_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pps_diagnostics_weight_ratio() {
        let d = DesignSpec::PoissonPps {
            size: "s".into(),
            target_n: 2.0,
        }
        .diagnostics(&pps_frame())
        .unwrap();
        assert!((d.pi_ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sum_pi_equals_expected_n_for_rates() {
        let frame = two_strata_frame();
        let design = DesignSpec::StratifiedSrswor {
            strata: "h".into(),
            allocation: Allocation::Rates {
                rates: [("A".to_string(), 0.05), ("B".to_string(), 0.4)].into(),
                target_n: 30,
            },
        };
        let pi = design.inclusion_probs(&frame).unwrap();
        let total: f64 = pi.iter().sum();
        assert!((total - 30.0).abs() < 1e-9, "{total}");
        let draw = design.draw(&frame, 3).unwrap();
        assert_eq!(draw.n(), 30);
    }

    #[test]
    fn ht_of_population_size_is_unbiased() {
        // Mean over replicates of sum of weights stays within 3 MC s.e. of N.
        let frame = two_strata_frame();
        let design = DesignSpec::StratifiedSrswor {
            strata: "h".into(),
            allocation: Allocation::Counts([("A".to_string(), 10), ("B".to_string(), 25)].into()),
        };
        let reps = 10_000usize;
        let mut totals = Vec::with_capacity(reps);
        for seed in 0..reps {
            let draw = design.draw(&frame, seed as u64).unwrap();
            totals.push(draw.weights.iter().sum::<f64>());
        }
        let mean = totals.iter().sum::<f64>() / reps as f64;
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        // Fixed-size stratified SRSWOR keeps sum of weights constant, so the
        // 3 s.e. band collapses; allow a floor for exact-arithmetic noise.
        assert!((mean - 150.0).abs() <= (3.0 * se).max(1e-9));
    }
}
