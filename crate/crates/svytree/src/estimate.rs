//! The estimator suite: Horvitz-Thompson, generic GREG, calibrated linear
//! weights with forward-stepwise selection, and the regression-tree
//! estimator in both its GREG and post-stratified forms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::SampleDraw;
use crate::frame::{Column, Frame, VarKind, VarRole};
use crate::linalg::{LinalgError, WlsFactor, DEFAULT_DROP_TOL};
use crate::sums::{ksum, KahanSum};
use crate::tree::Partition;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("LengthMismatch: y and weights differ in length")]
    LengthMismatch,
    #[error("NonpositiveWeight: weight {0} is not positive")]
    NonpositiveWeight(f64),
    #[error("PredictionFailure: {0}")]
    PredictionFailure(String),
    #[error("SingularSystem: the calibration model is unusable")]
    SingularSystem,
    #[error("EmptySampleBox: box {0} has no sampled units")]
    EmptySampleBox(usize),
    #[error("FormMismatch: GREG and post-stratified forms differ ({greg} vs {post})")]
    FormMismatch { greg: f64, post: f64 },
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
    #[error(transparent)]
    Design(#[from] crate::design::DesignError),
    #[error(transparent)]
    Tree(#[from] crate::tree::TreeError),
}

impl From<LinalgError> for EstimateError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::SingularSystem => EstimateError::SingularSystem,
            LinalgError::DimensionMismatch(_) => EstimateError::LengthMismatch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Ht,
    GregLinear,
    GregTree,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::Ht => "ht",
            EstimatorKind::GregLinear => "greg-linear",
            EstimatorKind::GregTree => "greg-tree",
        };
        f.write_str(s)
    }
}

/// Min/max/negative-count summary of calibration weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub min: f64,
    pub max: f64,
    pub negative_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateResult {
    pub total: f64,
    pub estimator_kind: EstimatorKind,
    pub model_summary: String,
    /// Calibrated per-sampled-unit weights, aligned with the sample.
    pub calibration_weights: Option<Vec<f64>>,
}

/// The serializable record form of an estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub estimator: EstimatorKind,
    pub total: f64,
    pub model_summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_diagnostics: Option<WeightDiagnostics>,
}

impl EstimateResult {
    pub fn weight_diagnostics(&self) -> Option<WeightDiagnostics> {
        self.calibration_weights.as_ref().map(|w| WeightDiagnostics {
            min: w.iter().copied().fold(f64::INFINITY, f64::min),
            max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            negative_count: w.iter().filter(|&&x| x < 0.0).count(),
        })
    }

    pub fn to_record(&self) -> EstimateRecord {
        EstimateRecord {
            estimator: self.estimator_kind,
            total: self.total,
            model_summary: self.model_summary.clone(),
            weight_diagnostics: self.weight_diagnostics(),
        }
    }
}

/// Horvitz-Thompson total: sum of w_j y_j over the sample.
pub fn ht_total(y: &[f64], w: &[f64]) -> Result<f64, EstimateError> {
    if y.len() != w.len() {
        return Err(EstimateError::LengthMismatch);
    }
    if let Some(&bad) = w.iter().find(|&&x| x.is_nan() || x <= 0.0) {
        return Err(EstimateError::NonpositiveWeight(bad));
    }
    Ok(ksum(y.iter().zip(w).map(|(&yi, &wi)| wi * yi)))
}

/// GREG total for an arbitrary working model: the weighted residual sum
/// over the sample plus the model prediction summed over the population.
/// `predict` maps a frame row index to its model prediction.
pub fn greg_total(
    sample: &SampleDraw,
    frame: &Frame,
    study: &str,
    mut predict: impl FnMut(usize) -> Result<f64, EstimateError>,
) -> Result<f64, EstimateError> {
    let y = frame.study_values(study)?;
    let mut residual = KahanSum::new();
    for (&j, &wj) in sample.indices.iter().zip(&sample.weights) {
        residual.add(wj * (y[j] - predict(j)?));
    }
    let mut pop = KahanSum::new();
    for j in 0..frame.n() {
        pop.add(predict(j)?);
    }
    Ok(residual.value() + pop.value())
}

/// One expanded column of a working-model design matrix.
struct ModelColumn {
    /// Values over the sampled units.
    sample: Vec<f64>,
    /// Exact population total of the column.
    total: f64,
}

/// Design matrix of indicator-expanded predictor blocks over a sample.
/// Categorical variables expand to one indicator per category (all
/// categories; collinearity is handled downstream), so a block's totals
/// are the known population category counts.
pub struct ModelMatrix {
    names: Vec<String>,
    cols: Vec<ModelColumn>,
    /// Per block: (label, column range).
    blocks: Vec<(String, std::ops::Range<usize>)>,
}

impl ModelMatrix {
    pub fn block_labels(&self) -> Vec<&str> {
        self.blocks.iter().map(|(l, _)| l.as_str()).collect()
    }
    pub fn column_names(&self) -> &[String] {
        &self.names
    }
}

fn expand_variable(
    frame: &Frame,
    sample: &SampleDraw,
    var: &str,
) -> Result<Vec<(String, ModelColumn)>, EstimateError> {
    let spec = frame.spec(var)?;
    if spec.role != VarRole::Predictor {
        return Err(EstimateError::PredictionFailure(format!(
            "`{var}` is not a predictor"
        )));
    }
    match (&spec.kind, frame.column(var)?) {
        (VarKind::Categorical { levels }, Column::Categorical(codes)) => {
            let mut counts = vec![0.0f64; levels.len()];
            for &c in codes {
                counts[c as usize] += 1.0;
            }
            Ok(levels
                .iter()
                .enumerate()
                .map(|(l, label)| {
                    let col: Vec<f64> = sample
                        .indices
                        .iter()
                        .map(|&j| if codes[j] as usize == l { 1.0 } else { 0.0 })
                        .collect();
                    (
                        format!("{var}={label}"),
                        ModelColumn {
                            sample: col,
                            total: counts[l],
                        },
                    )
                })
                .collect())
        }
        (VarKind::Numeric, Column::Numeric(values)) => Ok(vec![(
            var.to_string(),
            ModelColumn {
                sample: sample.indices.iter().map(|&j| values[j]).collect(),
                total: ksum(values.iter().copied()),
            },
        )]),
        _ => unreachable!(),
    }
}

fn expand_interaction(
    frame: &Frame,
    sample: &SampleDraw,
    a: &str,
    b: &str,
) -> Result<Vec<(String, ModelColumn)>, EstimateError> {
    let cols_a = expand_variable(frame, sample, a)?;
    let cols_b = expand_variable(frame, sample, b)?;
    // Product columns need population totals of the products, computed
    // from the full frame rather than from the expanded totals.
    let full_a = full_columns(frame, a)?;
    let full_b = full_columns(frame, b)?;
    let mut out = Vec::with_capacity(cols_a.len() * cols_b.len());
    for (ia, (name_a, ca)) in cols_a.iter().enumerate() {
        for (ib, (name_b, cb)) in cols_b.iter().enumerate() {
            let sample_col: Vec<f64> = ca
                .sample
                .iter()
                .zip(&cb.sample)
                .map(|(&x, &y)| x * y)
                .collect();
            let total = ksum(full_a[ia].iter().zip(&full_b[ib]).map(|(&x, &y)| x * y));
            out.push((
                format!("{name_a}:{name_b}"),
                ModelColumn {
                    sample: sample_col,
                    total,
                },
            ));
        }
    }
    Ok(out)
}

fn full_columns(frame: &Frame, var: &str) -> Result<Vec<Vec<f64>>, EstimateError> {
    let spec = frame.spec(var)?;
    Ok(match (&spec.kind, frame.column(var)?) {
        (VarKind::Categorical { levels }, Column::Categorical(codes)) => (0..levels.len())
            .map(|l| {
                codes
                    .iter()
                    .map(|&c| if c as usize == l { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
        (VarKind::Numeric, Column::Numeric(values)) => vec![values.clone()],
        _ => unreachable!(),
    })
}

/// Build the candidate design matrix for the given variables; with
/// `interactions`, every pairwise interaction block is appended after the
/// main-effect blocks, in schema order.
pub fn build_model_matrix(
    frame: &Frame,
    sample: &SampleDraw,
    vars: &[&str],
    interactions: bool,
) -> Result<ModelMatrix, EstimateError> {
    let mut names = Vec::new();
    let mut cols = Vec::new();
    let mut blocks = Vec::new();
    let push_block = |label: String,
                          expanded: Vec<(String, ModelColumn)>,
                          names: &mut Vec<String>,
                          cols: &mut Vec<ModelColumn>,
                          blocks: &mut Vec<(String, std::ops::Range<usize>)>| {
        let start = cols.len();
        for (name, col) in expanded {
            names.push(name);
            cols.push(col);
        }
        blocks.push((label, start..cols.len()));
    };
    for &var in vars {
        push_block(
            var.to_string(),
            expand_variable(frame, sample, var)?,
            &mut names,
            &mut cols,
            &mut blocks,
        );
    }
    if interactions {
        for i in 0..vars.len() {
            for j in i + 1..vars.len() {
                push_block(
                    format!("{}:{}", vars[i], vars[j]),
                    expand_interaction(frame, sample, vars[i], vars[j])?,
                    &mut names,
                    &mut cols,
                    &mut blocks,
                );
            }
        }
    }
    Ok(ModelMatrix {
        names,
        cols,
        blocks,
    })
}

/// Calibrated linear (GREG) weights: w~_j = [1 + (t_x - t^_x)' G^-1 x_j] / pi_j
/// with G the HT-weighted cross-product matrix. Collinear columns are
/// dropped by the rank-revealing solve; the calibration identity holds on
/// the kept columns.
pub fn linear_weights(
    sample: &SampleDraw,
    design_cols: &[Vec<f64>],
    totals: &[f64],
) -> Result<Vec<f64>, EstimateError> {
    let n = sample.n();
    if design_cols.iter().any(|c| c.len() != n) || design_cols.len() != totals.len() {
        return Err(EstimateError::LengthMismatch);
    }
    let factor = WlsFactor::new(design_cols, &sample.weights, DEFAULT_DROP_TOL)?;
    // t_x - HT estimate of t_x, per column.
    let gap: Vec<f64> = design_cols
        .iter()
        .zip(totals)
        .map(|(col, &t)| {
            t - ksum(col.iter().zip(&sample.weights).map(|(&x, &w)| w * x))
        })
        .collect();
    let g = factor.solve_gram(&gap)?;
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let dot: f64 = design_cols.iter().zip(&g).map(|(col, &gk)| col[i] * gk).sum();
        let w = (1.0 + dot) * sample.weights[i];
        if !w.is_finite() {
            return Err(EstimateError::SingularSystem);
        }
        weights.push(w);
    }
    Ok(weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepwiseControls {
    /// Per-parameter penalty on the weighted Gaussian log-likelihood scale;
    /// 2 gives AIC-style selection, ln(n) BIC-style.
    pub penalty: f64,
    pub max_steps: usize,
    /// Also offer all pairwise interaction blocks as candidates.
    pub interactions: bool,
}

impl Default for StepwiseControls {
    fn default() -> Self {
        Self {
            penalty: 2.0,
            max_steps: 16,
            interactions: false,
        }
    }
}

/// Greedy forward selection over variable blocks (all categories of a
/// variable enter or leave together) on weighted least squares. Returns
/// the labels of selected blocks in selection order.
pub fn stepwise_select(
    matrix: &ModelMatrix,
    y: &[f64],
    w: &[f64],
    controls: &StepwiseControls,
) -> Result<Vec<String>, EstimateError> {
    let n = y.len();
    let criterion = |rss: f64, params: usize| -> f64 {
        n as f64 * (rss.max(1e-300) / n as f64).ln() + controls.penalty * params as f64
    };
    let intercept = vec![1.0; n];
    let mut current_cols: Vec<Vec<f64>> = vec![intercept];
    let mut current_crit = {
        let f = WlsFactor::new(&current_cols, w, DEFAULT_DROP_TOL)?;
        let (_, rss) = f.solve_ls(y)?;
        criterion(rss, f.rank())
    };
    let mut selected: Vec<usize> = Vec::new();
    for _ in 0..controls.max_steps {
        let mut best: Option<(usize, f64)> = None;
        for (bix, (_, range)) in matrix.blocks.iter().enumerate() {
            if selected.contains(&bix) {
                continue;
            }
            let mut cols = current_cols.clone();
            cols.extend(matrix.cols[range.clone()].iter().map(|c| c.sample.clone()));
            let crit = match WlsFactor::new(&cols, w, DEFAULT_DROP_TOL) {
                Ok(f) => {
                    let (_, rss) = f.solve_ls(y)?;
                    criterion(rss, f.rank())
                }
                Err(LinalgError::SingularSystem) => continue,
                Err(e) => return Err(e.into()),
            };
            // Strict improvement; earlier blocks win ties.
            if best.is_none_or(|(_, c)| crit < c) {
                best = Some((bix, crit));
            }
        }
        match best {
            Some((bix, crit)) if crit < current_crit => {
                let range = matrix.blocks[bix].1.clone();
                current_cols.extend(matrix.cols[range].iter().map(|c| c.sample.clone()));
                current_crit = crit;
                selected.push(bix);
            }
            _ => break,
        }
    }
    Ok(selected
        .into_iter()
        .map(|bix| matrix.blocks[bix].0.clone())
        .collect())
}

/// The calibrated linear-regression estimator with forward-stepwise
/// variable selection: select blocks, calibrate to the selected category
/// totals (plus the intercept, so weights always reproduce N), and return
/// the weighted total.
pub fn linear_stepwise_estimator(
    frame: &Frame,
    sample: &SampleDraw,
    study: &str,
    candidates: &[&str],
    controls: &StepwiseControls,
) -> Result<EstimateResult, EstimateError> {
    let y = sample.values(frame, study)?;
    let matrix = build_model_matrix(frame, sample, candidates, controls.interactions)?;
    let selected = stepwise_select(&matrix, &y, &sample.weights, controls)?;
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; sample.n()]];
    let mut totals: Vec<f64> = vec![frame.n() as f64];
    for label in &selected {
        let (_, range) = matrix
            .blocks
            .iter()
            .find(|(l, _)| l == label)
            .expect("selected block exists");
        for col in &matrix.cols[range.clone()] {
            cols.push(col.sample.clone());
            totals.push(col.total);
        }
    }
    let weights = linear_weights(sample, &cols, &totals)?;
    let total = ksum(weights.iter().zip(&y).map(|(&wi, &yi)| wi * yi));
    let summary = if selected.is_empty() {
        "intercept".to_string()
    } else {
        format!("intercept+{}", selected.join("+"))
    };
    Ok(EstimateResult {
        total,
        estimator_kind: EstimatorKind::GregLinear,
        model_summary: summary,
        calibration_weights: Some(weights),
    })
}

/// Per-box sample statistics of a partition refit on a given sample.
pub struct BoxFit {
    /// Hajek means per box (zero until filled by the caller for a study
    /// variable; `tree_estimator` fills them).
    pub means: Vec<f64>,
    /// HT box size estimates (sum of weights) per box.
    pub weighted_counts: Vec<f64>,
    /// Exact frame counts N_k per box.
    pub frame_counts: Vec<f64>,
    /// Box assignment for each sampled unit.
    pub sample_boxes: Vec<u32>,
    /// Box assignment for each frame row.
    pub frame_boxes: Vec<u32>,
}

/// Refit box means and counts for `partition` on this sample and frame.
pub fn fit_boxes(
    partition: &Partition,
    sample: &SampleDraw,
    frame: &Frame,
) -> Result<BoxFit, EstimateError> {
    let q = partition.n_boxes();
    let frame_boxes = partition.classify_frame(frame)?;
    let sample_boxes: Vec<u32> = sample.indices.iter().map(|&j| frame_boxes[j]).collect();
    let mut frame_counts = vec![0.0f64; q];
    for &b in &frame_boxes {
        frame_counts[b as usize] += 1.0;
    }
    let mut sw = vec![KahanSum::new(); q];
    for (&b, &wj) in sample_boxes.iter().zip(&sample.weights) {
        sw[b as usize].add(wj);
    }
    let weighted_counts: Vec<f64> = sw.iter().map(|k| k.value()).collect();
    if let Some(k) = weighted_counts.iter().position(|&wc| wc.is_nan() || wc <= 0.0) {
        return Err(EstimateError::EmptySampleBox(k));
    }
    Ok(BoxFit {
        means: vec![0.0; q],
        weighted_counts,
        frame_counts,
        sample_boxes,
        frame_boxes,
    })
}

/// Regression-tree estimator: computes the GREG plug-in form and the
/// post-stratified form, checks their identity, and returns the
/// post-stratified total with calibration weights attached.
pub fn tree_estimator(
    sample: &SampleDraw,
    frame: &Frame,
    study: &str,
    partition: &Partition,
) -> Result<EstimateResult, EstimateError> {
    let y_s = sample.values(frame, study)?;
    let mut fit = fit_boxes(partition, sample, frame)?;
    // Hajek means per box from this sample.
    let q = partition.n_boxes();
    let mut swy = vec![KahanSum::new(); q];
    for ((&b, &wj), &yj) in fit.sample_boxes.iter().zip(&sample.weights).zip(&y_s) {
        swy[b as usize].add(wj * yj);
    }
    for (k, s) in swy.iter().enumerate() {
        fit.means[k] = s.value() / fit.weighted_counts[k];
    }

    // Post-stratified form: sum over boxes of N_k mu~_k.
    let post = ksum((0..q).map(|k| fit.frame_counts[k] * fit.means[k]));

    // GREG plug-in form: weighted residuals plus predictions over U,
    // accumulated row by row.
    let mut residual = KahanSum::new();
    for ((&b, &wj), &yj) in fit.sample_boxes.iter().zip(&sample.weights).zip(&y_s) {
        residual.add(wj * (yj - fit.means[b as usize]));
    }
    let pop_pred = ksum(fit.frame_boxes.iter().map(|&b| fit.means[b as usize]));
    let greg = residual.value() + pop_pred;

    let scale = post.abs().max(greg.abs()).max(1.0);
    if (greg - post).abs() > 1e-8 * scale {
        return Err(EstimateError::FormMismatch { greg, post });
    }

    // Calibration weights w~_j = (N_k / #~(B_k)) w_j for j in box k.
    let weights: Vec<f64> = fit
        .sample_boxes
        .iter()
        .zip(&sample.weights)
        .map(|(&b, &wj)| wj * fit.frame_counts[b as usize] / fit.weighted_counts[b as usize])
        .collect();

    Ok(EstimateResult {
        total: post,
        estimator_kind: EstimatorKind::GregTree,
        model_summary: format!("tree[{q} boxes]"),
        calibration_weights: Some(weights),
    })
}

/// Post-stratification calibration weights of a partition:
/// w~_j = (N_k / #~(B_k)) / pi_j for j in box k. Summed over a box they
/// reproduce N_k exactly.
pub fn calibration_weights(
    partition: &Partition,
    sample: &SampleDraw,
    frame: &Frame,
) -> Result<Vec<f64>, EstimateError> {
    let fit = fit_boxes(partition, sample, frame)?;
    Ok(fit
        .sample_boxes
        .iter()
        .zip(&sample.weights)
        .map(|(&b, &wj)| wj * fit.frame_counts[b as usize] / fit.weighted_counts[b as usize])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{Allocation, DesignSpec};
    use crate::synth::reference_config;
    use crate::tree::{grow, GrowControls};

    fn test_frame(n: usize, seed: u64) -> Frame {
        reference_config(n, seed).generate().unwrap()
    }

    #[test]
    fn ht_examples() {
        assert_eq!(ht_total(&[2.0, 4.0], &[2.0, 2.0]).unwrap(), 12.0);
        assert!(matches!(
            ht_total(&[1.0], &[1.0, 2.0]),
            Err(EstimateError::LengthMismatch)
        ));
        assert!(matches!(
            ht_total(&[1.0], &[0.0]),
            Err(EstimateError::NonpositiveWeight(_))
        ));
    }

    #[test]
    fn census_ht_is_exact() {
        let frame = test_frame(2_000, 1);
        let s = DesignSpec::Census.draw(&frame, 0).unwrap();
        let y = s.values(&frame, "teachers").unwrap();
        let t = frame.total("teachers").unwrap();
        assert!((ht_total(&y, &s.weights).unwrap() - t).abs() <= 1e-10 * t.abs().max(1.0));
    }

    #[test]
    fn ht_design_unbiased_under_srswor() {
        let frame = test_frame(2_000, 2);
        let t = frame.total("waitstaff").unwrap();
        let design = DesignSpec::Srswor { n: 200 };
        let reps = 10_000;
        let mut est = Vec::with_capacity(reps);
        for seed in 0..reps {
            let s = design.draw(&frame, seed as u64).unwrap();
            let y = s.values(&frame, "waitstaff").unwrap();
            est.push(ht_total(&y, &s.weights).unwrap());
        }
        let mean = est.iter().sum::<f64>() / reps as f64;
        let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - t).abs() < 3.0 * se, "mean {mean} truth {t} se {se}");
    }

    #[test]
    fn greg_zero_model_equals_ht() {
        let frame = test_frame(3_000, 3);
        let s = DesignSpec::Srswor { n: 150 }.draw(&frame, 9).unwrap();
        let y = s.values(&frame, "teachers").unwrap();
        let ht = ht_total(&y, &s.weights).unwrap();
        let greg = greg_total(&s, &frame, "teachers", |_| Ok(0.0)).unwrap();
        assert!((greg - ht).abs() <= 1e-9 * ht.abs().max(1.0));
    }

    #[test]
    fn greg_perfect_model_is_exact() {
        let frame = test_frame(3_000, 4);
        let t = frame.total("teachers").unwrap();
        let yv = frame.study_values("teachers").unwrap().to_vec();
        for seed in 0..5 {
            let s = DesignSpec::Srswor { n: 100 }.draw(&frame, seed).unwrap();
            let greg = greg_total(&s, &frame, "teachers", |j| Ok(yv[j])).unwrap();
            assert!((greg - t).abs() <= 1e-9 * t.abs().max(1.0));
        }
    }

    #[test]
    fn intercept_calibration_reproduces_population_size() {
        let frame = test_frame(5_000, 5);
        let s = DesignSpec::Srswor { n: 250 }.draw(&frame, 17).unwrap();
        let cols = vec![vec![1.0; s.n()]];
        let w = linear_weights(&s, &cols, &[frame.n() as f64]).unwrap();
        let total: f64 = w.iter().sum();
        assert!((total - frame.n() as f64).abs() <= 1e-8 * frame.n() as f64);
    }

    #[test]
    fn saturated_indicators_give_poststratification_weights() {
        // With a full set of group indicators the calibrated weights solve
        // to (N_k/N^_k)/pi_j blockwise.
        let frame = test_frame(5_000, 6);
        let s = DesignSpec::Srswor { n: 400 }.draw(&frame, 23).unwrap();
        let matrix = build_model_matrix(&frame, &s, &["size"], false).unwrap();
        let cols: Vec<Vec<f64>> = matrix.cols.iter().map(|c| c.sample.clone()).collect();
        let totals: Vec<f64> = matrix.cols.iter().map(|c| c.total).collect();
        let w = linear_weights(&s, &cols, &totals).unwrap();
        // Hand-solved block-diagonal form.
        let size_col = match frame.column("size").unwrap() {
            Column::Categorical(v) => v.clone(),
            _ => unreachable!(),
        };
        for k in 0..6u16 {
            let n_k: f64 = size_col.iter().filter(|&&c| c == k).count() as f64;
            let nhat_k: f64 = s
                .indices
                .iter()
                .zip(&s.weights)
                .filter(|(&j, _)| size_col[j] == k)
                .map(|(_, &wj)| wj)
                .sum();
            for ((&j, &wj), &wt) in s.indices.iter().zip(&s.weights).zip(&w) {
                if size_col[j] == k {
                    let expect = wj * n_k / nhat_k;
                    assert!(
                        (wt - expect).abs() <= 1e-8 * expect.abs().max(1.0),
                        "unit {j}: {wt} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn duplicated_column_changes_nothing() {
        let frame = test_frame(3_000, 7);
        let s = DesignSpec::Srswor { n: 200 }.draw(&frame, 29).unwrap();
        let x: Vec<f64> = s.indices.iter().map(|&j| (j % 7) as f64).collect();
        let base_cols = vec![vec![1.0; s.n()], x.clone()];
        let tx = ksum((0..frame.n()).map(|j| (j % 7) as f64));
        let base = linear_weights(&s, &base_cols, &[frame.n() as f64, tx]).unwrap();
        let dup_cols = vec![vec![1.0; s.n()], x.clone(), x];
        let dup = linear_weights(&s, &dup_cols, &[frame.n() as f64, tx, tx]).unwrap();
        for (a, b) in base.iter().zip(&dup) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn stepwise_picks_informative_predictor_first() {
        // One informative predictor (industry drives teachers) against
        // pure-noise predictors (multi, region); over replicates the
        // informative block must be selected first nearly always.
        let frame = test_frame(30_000, 8);
        let design = DesignSpec::Srswor { n: 2_000 };
        let mut first_hits = 0;
        let reps = 100;
        for seed in 0..reps {
            let s = design.draw(&frame, seed).unwrap();
            let y = s.values(&frame, "teachers").unwrap();
            let matrix =
                build_model_matrix(&frame, &s, &["multi", "region", "industry"], false).unwrap();
            let sel = stepwise_select(&matrix, &y, &s.weights, &StepwiseControls::default())
                .unwrap();
            if sel.first().map(|s| s.as_str()) == Some("industry") {
                first_hits += 1;
            }
        }
        assert!(first_hits > 95, "industry first in {first_hits}/{reps}");
    }

    #[test]
    fn stepwise_constant_y_selects_nothing() {
        let frame = test_frame(2_000, 9);
        let s = DesignSpec::Srswor { n: 300 }.draw(&frame, 41).unwrap();
        let y = vec![5.0; s.n()];
        let matrix = build_model_matrix(&frame, &s, &["industry", "size"], false).unwrap();
        let sel = stepwise_select(&matrix, &y, &s.weights, &StepwiseControls::default()).unwrap();
        assert!(sel.is_empty());
    }

    #[test]
    fn stepwise_zero_steps_selects_nothing() {
        let frame = test_frame(2_000, 10);
        let s = DesignSpec::Srswor { n: 300 }.draw(&frame, 43).unwrap();
        let y = s.values(&frame, "teachers").unwrap();
        let matrix = build_model_matrix(&frame, &s, &["industry"], false).unwrap();
        let controls = StepwiseControls {
            max_steps: 0,
            ..StepwiseControls::default()
        };
        assert!(stepwise_select(&matrix, &y, &s.weights, &controls)
            .unwrap()
            .is_empty());
    }

    fn grown(frame: &Frame, s: &SampleDraw, study: &str) -> Partition {
        grow(
            s,
            frame,
            &["industry", "size", "multi", "region"],
            study,
            &GrowControls::default(),
        )
        .unwrap()
    }

    #[test]
    fn tree_estimator_census_is_exact() {
        let frame = test_frame(2_000, 11);
        let s = DesignSpec::Census.draw(&frame, 0).unwrap();
        let part = grown(&frame, &s, "waitstaff");
        let t = frame.total("waitstaff").unwrap();
        let est = tree_estimator(&s, &frame, "waitstaff", &part).unwrap();
        assert!((est.total - t).abs() <= 1e-10 * t.abs().max(1.0));
        // Census calibration weights are all 1.
        for w in est.calibration_weights.unwrap() {
            assert!((w - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_box_tree_is_hajek_expansion() {
        let frame = test_frame(4_000, 12);
        let s = DesignSpec::Srswor { n: 200 }.draw(&frame, 51).unwrap();
        let controls = GrowControls {
            max_depth: 0,
            ..GrowControls::default()
        };
        let part = grow(&s, &frame, &["industry"], "teachers", &controls).unwrap();
        let est = tree_estimator(&s, &frame, "teachers", &part).unwrap();
        let y = s.values(&frame, "teachers").unwrap();
        let hajek =
            frame.n() as f64 * crate::tree::weighted_node_mean(&y, &s.weights).unwrap();
        assert!((est.total - hajek).abs() <= 1e-9 * hajek.abs().max(1.0));
    }

    #[test]
    fn greg_and_poststratified_forms_agree_on_random_draws() {
        let frame = test_frame(20_000, 13);
        let design = DesignSpec::StratifiedSrswor {
            strata: "size".into(),
            allocation: Allocation::Rates {
                rates: [
                    ("1", 0.005),
                    ("2", 0.01),
                    ("3", 0.02),
                    ("4", 0.05),
                    ("5", 0.15),
                    ("6", 0.4),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
                target_n: 600,
            },
        };
        for seed in 0..50 {
            let s = design.draw(&frame, seed).unwrap();
            let part = grown(&frame, &s, "waitstaff");
            // tree_estimator itself asserts the identity at 1e-8 relative.
            let est = tree_estimator(&s, &frame, "waitstaff", &part).unwrap();
            // And the weighted-sum representation matches the total.
            let y = s.values(&frame, "waitstaff").unwrap();
            let wsum = ksum(
                est.calibration_weights
                    .as_ref()
                    .unwrap()
                    .iter()
                    .zip(&y)
                    .map(|(&w, &yi)| w * yi),
            );
            assert!((wsum - est.total).abs() <= 1e-8 * est.total.abs().max(1.0));
        }
    }

    #[test]
    fn calibration_weights_reproduce_box_counts() {
        let frame = test_frame(10_000, 14);
        let design = DesignSpec::Srswor { n: 800 };
        for seed in 0..20 {
            let s = design.draw(&frame, seed).unwrap();
            let part = grown(&frame, &s, "teachers");
            let w = calibration_weights(&part, &s, &frame).unwrap();
            let fit = fit_boxes(&part, &s, &frame).unwrap();
            let mut sums = vec![0.0f64; part.n_boxes()];
            for (&b, &wt) in fit.sample_boxes.iter().zip(&w) {
                sums[b as usize] += wt;
            }
            for (k, (&got, &want)) in sums.iter().zip(&fit.frame_counts).enumerate() {
                assert!(
                    (got - want).abs() <= 1e-8 * want.max(1.0),
                    "box {k}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn location_shift_moves_estimate_by_c_times_n() {
        // Adding c to every y shifts any partition-based estimate by cN.
        let cfg = reference_config(5_000, 15);
        let frame = cfg.generate().unwrap();
        let s = DesignSpec::Srswor { n: 400 }.draw(&frame, 61).unwrap();
        let part = grown(&frame, &s, "teachers");
        let base = tree_estimator(&s, &frame, "teachers", &part).unwrap().total;
        // Shift the study variable by 3.0 in a copied frame.
        let mut specs = frame.specs().to_vec();
        let mut cols: Vec<Column> = Vec::new();
        for spec in &specs {
            cols.push(frame.column(&spec.name).unwrap().clone());
        }
        let t_ix = specs.iter().position(|sp| sp.name == "teachers").unwrap();
        if let Column::Numeric(v) = &mut cols[t_ix] {
            for x in v.iter_mut() {
                *x += 3.0;
            }
        }
        specs[t_ix].name = "teachers".to_string();
        let shifted = Frame::new(specs, cols).unwrap();
        let est2 = tree_estimator(&s, &shifted, "teachers", &part).unwrap().total;
        let expect = base + 3.0 * frame.n() as f64;
        assert!((est2 - expect).abs() <= 1e-8 * expect.abs().max(1.0));
    }
}
