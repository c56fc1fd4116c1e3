//! Seeded synthetic-population generator.
//!
//! The generator is itself the superpopulation: study values are drawn as
//! (optionally zero-inflated) Poisson counts around configured cell means,
//! so the conditional mean function is queryable as ground truth via
//! [`SynthConfig::true_mean`].

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Column, Frame, VarRole, VariableSpec};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("EmptyPopulation: N must be at least 1")]
    EmptyPopulation,
    #[error("InvalidCellMean: `{study}` has a negative mean {mean}")]
    InvalidCellMean { study: String, mean: f64 },
    #[error("UnknownLevel: `{value}` is not a level of `{variable}`")]
    UnknownLevel { variable: String, value: String },
    #[error("BadConfig: {0}")]
    BadConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub name: String,
    /// Closed level set, in order.
    pub levels: Vec<String>,
    /// Marginal frequencies, aligned with `levels`. Uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// One cell-means rule. A row matches when, for every variable listed in
/// `when`, the row's level is in the listed set. Rules are checked in
/// order; the first match wins, and the default applies otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRule {
    pub when: BTreeMap<String, Vec<String>>,
    /// Cell mean E[Y | x] for matching rows.
    pub mean: f64,
    /// Extra probability mass at zero; the Poisson component is scaled so
    /// the cell mean stays `mean`.
    #[serde(default)]
    pub zero_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    #[serde(default)]
    pub rules: Vec<CellRule>,
    pub default_mean: f64,
    #[serde(default)]
    pub default_zero_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub predictors: Vec<PredictorConfig>,
    pub study: Vec<StudyConfig>,
}

struct CompiledRule {
    /// (predictor index, level bitmask) conjunction.
    conds: Vec<(usize, u64)>,
    mean: f64,
    zero_prob: f64,
}

struct CompiledStudy {
    rules: Vec<CompiledRule>,
    default_mean: f64,
    default_zero_prob: f64,
}

impl SynthConfig {
    pub fn schema(&self) -> Vec<VariableSpec> {
        let mut specs: Vec<VariableSpec> = self
            .predictors
            .iter()
            .map(|p| VariableSpec {
                name: p.name.clone(),
                kind: crate::frame::VarKind::Categorical {
                    levels: p.levels.clone(),
                },
                role: VarRole::Predictor,
            })
            .collect();
        specs.extend(
            self.study
                .iter()
                .map(|s| VariableSpec::numeric(&s.name, VarRole::Study)),
        );
        specs
    }

    fn predictor_index(&self, name: &str) -> Result<usize, SynthError> {
        self.predictors
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| SynthError::BadConfig(format!("unknown predictor `{name}`")))
    }

    fn level_index(&self, pred: usize, label: &str) -> Result<u16, SynthError> {
        self.predictors[pred]
            .levels
            .iter()
            .position(|l| l == label)
            .map(|i| i as u16)
            .ok_or_else(|| SynthError::UnknownLevel {
                variable: self.predictors[pred].name.clone(),
                value: label.to_string(),
            })
    }

    fn compile_study(&self, study: &StudyConfig) -> Result<CompiledStudy, SynthError> {
        let check_mean = |mean: f64, zero_prob: f64| -> Result<(), SynthError> {
            if mean < 0.0 || !mean.is_finite() {
                return Err(SynthError::InvalidCellMean {
                    study: study.name.clone(),
                    mean,
                });
            }
            if !(0.0..1.0).contains(&zero_prob) {
                return Err(SynthError::BadConfig(format!(
                    "`{}`: zero_prob {zero_prob} outside [0,1)",
                    study.name
                )));
            }
            Ok(())
        };
        check_mean(study.default_mean, study.default_zero_prob)?;
        let mut rules = Vec::with_capacity(study.rules.len());
        for rule in &study.rules {
            check_mean(rule.mean, rule.zero_prob)?;
            let mut conds = Vec::with_capacity(rule.when.len());
            for (var, levels) in &rule.when {
                let pred = self.predictor_index(var)?;
                let mut mask = 0u64;
                for label in levels {
                    mask |= 1u64 << self.level_index(pred, label)?;
                }
                conds.push((pred, mask));
            }
            rules.push(CompiledRule {
                conds,
                mean: rule.mean,
                zero_prob: rule.zero_prob,
            });
        }
        Ok(CompiledStudy {
            rules,
            default_mean: study.default_mean,
            default_zero_prob: study.default_zero_prob,
        })
    }

    fn validate(&self) -> Result<Vec<CompiledStudy>, SynthError> {
        if self.n == 0 {
            return Err(SynthError::EmptyPopulation);
        }
        if self.predictors.is_empty() || self.study.is_empty() {
            return Err(SynthError::BadConfig(
                "need at least one predictor and one study variable".into(),
            ));
        }
        for p in &self.predictors {
            if p.levels.is_empty() || p.levels.len() > 64 {
                return Err(SynthError::BadConfig(format!(
                    "`{}` must have 1..=64 levels",
                    p.name
                )));
            }
            if let Some(w) = &p.weights {
                if w.len() != p.levels.len() || w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                    return Err(SynthError::BadConfig(format!(
                        "`{}`: weights must align with levels and be nonnegative",
                        p.name
                    )));
                }
            }
        }
        self.study.iter().map(|s| self.compile_study(s)).collect()
    }

    /// Generate the population. Deterministic in `seed`: the same config
    /// always yields a byte-identical frame (fixed ChaCha12 generator,
    /// fixed row-major draw order).
    pub fn generate(&self) -> Result<Frame, SynthError> {
        let compiled = self.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        let samplers: Vec<WeightedIndex<f64>> = self
            .predictors
            .iter()
            .map(|p| {
                let w = p
                    .weights
                    .clone()
                    .unwrap_or_else(|| vec![1.0; p.levels.len()]);
                WeightedIndex::new(w)
                    .map_err(|e| SynthError::BadConfig(format!("`{}`: {e}", p.name)))
            })
            .collect::<Result<_, _>>()?;

        let mut pred_cols: Vec<Vec<u16>> = vec![Vec::with_capacity(self.n); self.predictors.len()];
        let mut study_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(self.n); self.study.len()];
        let mut levels = vec![0u16; self.predictors.len()];
        for _ in 0..self.n {
            for (p, sampler) in samplers.iter().enumerate() {
                let ix = sampler.sample(&mut rng) as u16;
                levels[p] = ix;
                pred_cols[p].push(ix);
            }
            for (s, cs) in compiled.iter().enumerate() {
                let (mean, zero_prob) = cs.cell(&levels);
                study_cols[s].push(draw_count(&mut rng, mean, zero_prob));
            }
        }

        let mut columns: Vec<Column> = pred_cols.into_iter().map(Column::Categorical).collect();
        columns.extend(study_cols.into_iter().map(Column::Numeric));
        Frame::new(self.schema(), columns).map_err(|e| SynthError::BadConfig(e.to_string()))
    }

    /// The superpopulation conditional mean h(x) for a predictor record
    /// given as level labels in predictor order.
    pub fn true_mean(&self, study: &str, x: &[&str]) -> Result<f64, SynthError> {
        let levels = self.encode_record(x)?;
        Ok(self.compiled_for(study)?.cell(&levels).0)
    }

    /// Conditional mean and variance of the (zero-inflated) Poisson cell
    /// distribution; the variance backs s.e.-based oracles in tests.
    pub fn cell_moments(&self, study: &str, x: &[&str]) -> Result<(f64, f64), SynthError> {
        let levels = self.encode_record(x)?;
        let (mean, p) = self.compiled_for(study)?.cell(&levels);
        Ok((mean, cell_variance(mean, p)))
    }

    /// h(x) by level indices, for bulk model-recovery checks.
    pub fn true_mean_coded(&self, study: &str, levels: &[u16]) -> Result<f64, SynthError> {
        Ok(self.compiled_for(study)?.cell(levels).0)
    }

    fn compiled_for(&self, study: &str) -> Result<CompiledStudy, SynthError> {
        let sc = self
            .study
            .iter()
            .find(|s| s.name == study)
            .ok_or_else(|| SynthError::BadConfig(format!("unknown study variable `{study}`")))?;
        self.compile_study(sc)
    }

    fn encode_record(&self, x: &[&str]) -> Result<Vec<u16>, SynthError> {
        if x.len() != self.predictors.len() {
            return Err(SynthError::BadConfig(format!(
                "record has {} values, expected {}",
                x.len(),
                self.predictors.len()
            )));
        }
        x.iter()
            .enumerate()
            .map(|(p, label)| self.level_index(p, label))
            .collect()
    }
}

impl CompiledStudy {
    fn cell(&self, levels: &[u16]) -> (f64, f64) {
        for rule in &self.rules {
            if rule
                .conds
                .iter()
                .all(|&(p, mask)| mask >> levels[p] & 1 == 1)
            {
                return (rule.mean, rule.zero_prob);
            }
        }
        (self.default_mean, self.default_zero_prob)
    }
}

fn draw_count(rng: &mut impl Rng, mean: f64, zero_prob: f64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    if zero_prob > 0.0 && rng.gen::<f64>() < zero_prob {
        return 0.0;
    }
    let lambda = mean / (1.0 - zero_prob);
    rand_distr::Poisson::new(lambda).unwrap().sample(rng)
}

/// Variance of the zero-inflated Poisson cell distribution with overall
/// mean `mean` and zero-inflation `p`.
pub fn cell_variance(mean: f64, p: f64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let lambda = mean / (1.0 - p);
    (1.0 - p) * (lambda + lambda * lambda) - mean * mean
}

/// Industry sector codes used by the bundled reference population (two-digit
/// NAICS sectors, matching establishment-frame conventions).
pub const INDUSTRY_CODES: [&str; 24] = [
    "11", "21", "22", "23", "31", "32", "33", "42", "44", "45", "48", "49", "51", "52", "53", "54",
    "55", "56", "61", "62", "71", "72", "81", "99",
];

/// The bundled reference population: an establishment-like frame with four
/// categorical predictors (industry, size class, multi-establishment flag,
/// region) and four study variables chosen to contrast estimator behavior:
/// two interaction-dominated, high-prevalence counts (`teachers`,
/// `waitstaff`) and two low-prevalence counts (`bartenders`, `salesmgr`).
pub fn reference_config(n: usize, seed: u64) -> SynthConfig {
    let industry_weights = vec![
        0.010, 0.005, 0.005, 0.055, 0.020, 0.020, 0.030, 0.060, 0.060, 0.040, 0.040, 0.010, 0.020,
        0.060, 0.040, 0.055, 0.010, 0.060, 0.180, 0.080, 0.020, 0.090, 0.075, 0.005,
    ];
    let rule = |when: &[(&str, &[&str])], mean: f64, zero_prob: f64| CellRule {
        when: when
            .iter()
            .map(|(v, ls)| (v.to_string(), ls.iter().map(|l| l.to_string()).collect()))
            .collect(),
        mean,
        zero_prob,
    };
    SynthConfig {
        n,
        seed,
        predictors: vec![
            PredictorConfig {
                name: "industry".into(),
                levels: INDUSTRY_CODES.iter().map(|s| s.to_string()).collect(),
                weights: Some(industry_weights),
            },
            PredictorConfig {
                name: "size".into(),
                levels: (1..=6).map(|i| i.to_string()).collect(),
                weights: Some(vec![0.42, 0.24, 0.15, 0.09, 0.07, 0.03]),
            },
            PredictorConfig {
                name: "multi".into(),
                levels: vec!["0".into(), "1".into()],
                weights: Some(vec![0.7, 0.3]),
            },
            PredictorConfig {
                name: "region".into(),
                levels: (1..=6).map(|i| i.to_string()).collect(),
                weights: None,
            },
        ],
        study: vec![
            StudyConfig {
                name: "teachers".into(),
                rules: vec![
                    rule(&[("industry", &["61"]), ("size", &["4", "5", "6"])], 55.0, 0.15),
                    rule(&[("industry", &["61"])], 0.5, 0.5),
                    rule(
                        &[("industry", &["56", "62", "81", "99"]), ("size", &["4", "5", "6"])],
                        0.2,
                        0.8,
                    ),
                ],
                default_mean: 0.005,
                default_zero_prob: 0.9,
            },
            StudyConfig {
                name: "waitstaff".into(),
                rules: vec![
                    rule(
                        &[("industry", &["72"]), ("size", &["3", "4", "5", "6"])],
                        32.0,
                        0.05,
                    ),
                    rule(&[("industry", &["72"])], 4.0, 0.1),
                    rule(&[("industry", &["71"])], 2.0, 0.4),
                ],
                default_mean: 0.002,
                default_zero_prob: 0.9,
            },
            StudyConfig {
                name: "bartenders".into(),
                rules: vec![
                    rule(
                        &[("industry", &["72"]), ("size", &["3", "4", "5", "6"])],
                        4.5,
                        0.3,
                    ),
                    rule(&[("industry", &["72"])], 0.6, 0.5),
                    rule(&[("industry", &["71"])], 1.2, 0.5),
                    rule(&[("industry", &["56", "81", "99"])], 0.08, 0.9),
                ],
                default_mean: 0.003,
                default_zero_prob: 0.9,
            },
            StudyConfig {
                name: "salesmgr".into(),
                rules: vec![
                    rule(&[("size", &["5", "6"])], 1.2, 0.5),
                    rule(&[("size", &["3", "4"])], 0.35, 0.7),
                ],
                default_mean: 0.03,
                default_zero_prob: 0.9,
            },
        ],
    }
}

/// Population size of the reference frame (matches the scale of a national
/// establishment frame in count only).
pub const REFERENCE_N: usize = 187_115;

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        let mut cfg = reference_config(10_000, 42);
        cfg.n = 10_000;
        cfg
    }

    #[test]
    fn seeded_determinism() {
        let cfg = small_config();
        assert_eq!(cfg.generate().unwrap(), cfg.generate().unwrap());
    }

    #[test]
    fn empty_population_rejected() {
        let mut cfg = small_config();
        cfg.n = 0;
        assert!(matches!(cfg.generate(), Err(SynthError::EmptyPopulation)));
    }

    #[test]
    fn negative_mean_rejected() {
        let mut cfg = small_config();
        cfg.study[0].rules[0].mean = -1.0;
        assert!(matches!(
            cfg.generate(),
            Err(SynthError::InvalidCellMean { .. })
        ));
    }

    #[test]
    fn true_mean_is_table_lookup() {
        let cfg = small_config();
        let m = cfg.true_mean("teachers", &["61", "5", "0", "1"]).unwrap();
        assert_eq!(m, 55.0);
        let d = cfg.true_mean("teachers", &["23", "1", "0", "1"]).unwrap();
        assert_eq!(d, 0.005);
        assert!(matches!(
            cfg.true_mean("teachers", &["07", "1", "0", "1"]),
            Err(SynthError::UnknownLevel { .. })
        ));
    }

    #[test]
    fn empirical_cell_mean_within_three_se() {
        // Oracle: configured analytic cell mean and zero-inflated Poisson s.e.
        let mut cfg = reference_config(50_000, 7);
        cfg.study.truncate(1);
        cfg.study[0].rules = vec![CellRule {
            when: [(
                "industry".to_string(),
                vec!["72".to_string()],
            )]
            .into_iter()
            .chain([(
                "size".to_string(),
                vec!["3".to_string(), "4".to_string(), "5".to_string(), "6".to_string()],
            )])
            .collect(),
            mean: 3.0,
            zero_prob: 0.0,
        }];
        cfg.study[0].default_mean = 0.01;
        cfg.study[0].default_zero_prob = 0.0;
        let frame = cfg.generate().unwrap();
        let (mean, var) = cfg.cell_moments("teachers", &["72", "4", "0", "1"]).unwrap();
        assert_eq!(mean, 3.0);
        let ind = match frame.column("industry").unwrap() {
            crate::frame::Column::Categorical(v) => v.clone(),
            _ => unreachable!(),
        };
        let size = match frame.column("size").unwrap() {
            crate::frame::Column::Categorical(v) => v.clone(),
            _ => unreachable!(),
        };
        let y = frame.study_values("teachers").unwrap();
        let ix72 = INDUSTRY_CODES.iter().position(|&c| c == "72").unwrap() as u16;
        let (mut s, mut c) = (0.0, 0usize);
        for j in 0..frame.n() {
            if ind[j] == ix72 && size[j] >= 2 {
                s += y[j];
                c += 1;
            }
        }
        let emp = s / c as f64;
        let se = (var / c as f64).sqrt();
        assert!(
            (emp - mean).abs() < 3.0 * se,
            "empirical {emp} vs {mean} (3 s.e. = {})",
            3.0 * se
        );
    }

    #[test]
    fn totals_partition_additively_over_cells() {
        let cfg = small_config();
        let frame = cfg.generate().unwrap();
        let t = frame.total("waitstaff").unwrap();
        // Split the total by industry level and re-add.
        let ind = match frame.column("industry").unwrap() {
            crate::frame::Column::Categorical(v) => v.clone(),
            _ => unreachable!(),
        };
        let y = frame.study_values("waitstaff").unwrap();
        let mut per_level = vec![0.0f64; INDUSTRY_CODES.len()];
        for j in 0..frame.n() {
            per_level[ind[j] as usize] += y[j];
        }
        let resum: f64 = per_level.iter().sum();
        assert!((t - resum).abs() <= 1e-9 * t.abs().max(1.0));
    }
}
