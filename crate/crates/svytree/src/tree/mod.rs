//! Survey-weighted recursive partitioning.
//!
//! [`grow`] builds a partition of the predictor space by repeatedly taking
//! the best weighted-SSE split ([`split::best_split`]), and fits the Hajek
//! mean (weighted mean with design weights) in every resulting box.

pub mod io;
pub mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::SampleDraw;
use crate::frame::{Column, Frame, Value, VarRole, VariableSpec};
use crate::sums::{ksum, KahanSum};

pub use split::{best_split, NodeData, PredColumn, SplitCandidate};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("EmptySample: cannot grow a tree from zero units")]
    EmptySample,
    #[error("EmptyNode: weighted mean of an empty node is undefined")]
    EmptyNode,
    #[error("UnknownVariable: `{0}`")]
    UnknownVariable(String),
    #[error("UnknownLevel: level index {level} is outside `{variable}`'s level set")]
    UnknownLevel { variable: String, level: u16 },
    #[error("SchemaMismatch: {0}")]
    SchemaMismatch(String),
    #[error("TooManyLevels: `{0}` has more than 64 levels")]
    TooManyLevels(String),
    #[error("BadDocument: {0}")]
    BadDocument(String),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
    #[error(transparent)]
    Design(#[from] crate::design::DesignError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Binary split rule over one predictor. `var` indexes the partition's
/// predictor schema.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitRule {
    /// Listed levels (sorted, always containing the node's lowest observed
    /// level) go left.
    CategoricalSubset { var: usize, left_levels: Vec<u16> },
    /// `x <= threshold` goes left.
    NumericThreshold { var: usize, threshold: f64 },
}

impl SplitRule {
    pub fn var(&self) -> usize {
        match self {
            SplitRule::CategoricalSubset { var, .. } | SplitRule::NumericThreshold { var, .. } => {
                *var
            }
        }
    }

    fn goes_left(&self, value: Value) -> Result<bool, TreeError> {
        match (self, value) {
            (SplitRule::CategoricalSubset { left_levels, .. }, Value::Level(l)) => {
                Ok(left_levels.binary_search(&l).is_ok())
            }
            (SplitRule::NumericThreshold { threshold, .. }, Value::Number(x)) => {
                Ok(x <= *threshold)
            }
            _ => Err(TreeError::SchemaMismatch(
                "value kind does not match rule kind".into(),
            )),
        }
    }
}

/// One box of the partition: its defining rule path and fitted statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeBox {
    pub rule_path: Vec<(SplitRule, Side)>,
    /// Hajek mean of the study variable over sampled units in the box.
    pub mean: f64,
    /// HT estimate of the box population size: sum of weights in the box.
    pub weighted_count: f64,
    pub sample_count: usize,
    /// Weighted residual sum of squares within the box.
    pub sse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Node {
    Leaf(usize),
    Split {
        rule: SplitRule,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Stopping and search controls for tree growth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowControls {
    /// Minimum raw sample count per child; the same value also floors the
    /// child's Kish effective sample size (Σw)²/Σw², a weight-scale-free
    /// "weighted-equivalent" count.
    pub min_node: usize,
    /// Minimum accepted SSE reduction, as a fraction of the root SSE.
    pub min_improve: f64,
    pub max_depth: usize,
    /// Categorical level count at or below which all bipartitions are
    /// enumerated; above it, the mean-ordered contiguous scan is used.
    pub exhaustive_cutoff: usize,
}

impl Default for GrowControls {
    fn default() -> Self {
        Self {
            min_node: 25,
            min_improve: 0.001,
            max_depth: 8,
            exhaustive_cutoff: 12,
        }
    }
}

/// A grown (or imported) partition of the predictor space into boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    schema: Vec<VariableSpec>,
    boxes: Vec<TreeBox>,
    root: Node,
}

/// Hajek mean: (sum w y) / (sum w), with compensated sums.
pub fn weighted_node_mean(y: &[f64], w: &[f64]) -> Result<f64, TreeError> {
    if y.is_empty() || y.len() != w.len() {
        return Err(TreeError::EmptyNode);
    }
    let swy = ksum(y.iter().zip(w).map(|(&yi, &wi)| wi * yi));
    let sw = ksum(w.iter().copied());
    Ok(swy / sw)
}

/// Weighted SSE around the Hajek mean.
fn weighted_sse(y: &[f64], w: &[f64]) -> f64 {
    let mu = weighted_node_mean(y, w).unwrap_or(0.0);
    let mut acc = KahanSum::new();
    for (&yi, &wi) in y.iter().zip(w) {
        let d = yi - mu;
        acc.add(wi * d * d);
    }
    acc.value()
}

/// Grow a partition from the sampled units of `frame`.
pub fn grow(
    sample: &SampleDraw,
    frame: &Frame,
    predictors: &[&str],
    study: &str,
    controls: &GrowControls,
) -> Result<Partition, TreeError> {
    if sample.n() == 0 {
        return Err(TreeError::EmptySample);
    }
    let mut schema = Vec::with_capacity(predictors.len());
    let mut cols = Vec::with_capacity(predictors.len());
    for &name in predictors {
        let spec = frame
            .spec(name)
            .map_err(|_| TreeError::UnknownVariable(name.to_string()))?;
        if spec.role != VarRole::Predictor {
            return Err(TreeError::SchemaMismatch(format!(
                "`{name}` is not a predictor"
            )));
        }
        if let Some(levels) = spec.levels() {
            if levels.len() > 64 {
                return Err(TreeError::TooManyLevels(name.to_string()));
            }
        }
        schema.push(spec.clone());
        cols.push(match frame.column(name)? {
            Column::Categorical(v) => PredColumn::Categorical {
                codes: sample.indices.iter().map(|&j| v[j]).collect(),
                n_levels: spec.levels().unwrap().len(),
            },
            Column::Numeric(v) => {
                PredColumn::Numeric(sample.indices.iter().map(|&j| v[j]).collect())
            }
        });
    }
    let y = sample.values(frame, study)?;
    let w = sample.weights.clone();
    grow_from_columns(schema, NodeData { y, w, cols }, controls)
}

/// Grow from already extracted node data (sample order).
pub fn grow_from_columns(
    schema: Vec<VariableSpec>,
    data: NodeData,
    controls: &GrowControls,
) -> Result<Partition, TreeError> {
    let n = data.y.len();
    if n == 0 {
        return Err(TreeError::EmptySample);
    }
    let root_sse = weighted_sse(&data.y, &data.w);
    let mut boxes = Vec::new();
    let mut indices: Vec<usize> = (0..n).collect();
    let root = grow_node(
        &data,
        &mut indices,
        0,
        Vec::new(),
        controls,
        root_sse,
        &mut boxes,
    );
    Ok(Partition {
        schema,
        boxes,
        root,
    })
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    data: &NodeData,
    indices: &mut [usize],
    depth: usize,
    path: Vec<(SplitRule, Side)>,
    controls: &GrowControls,
    root_sse: f64,
    boxes: &mut Vec<TreeBox>,
) -> Node {
    let candidate = if depth < controls.max_depth && indices.len() >= 2 * controls.min_node {
        let local = extract(data, indices);
        best_split(&local, controls, root_sse)
    } else {
        None
    };
    match candidate {
        Some(SplitCandidate { rule, .. }) => {
            // Stable partition of the index slice: left block, right block.
            let mut left_ix = Vec::with_capacity(indices.len());
            let mut right_ix = Vec::with_capacity(indices.len());
            for &i in indices.iter() {
                let v = value_of(data, rule.var(), i);
                if rule.goes_left(v).unwrap() {
                    left_ix.push(i);
                } else {
                    right_ix.push(i);
                }
            }
            let split_at = left_ix.len();
            indices[..split_at].copy_from_slice(&left_ix);
            indices[split_at..].copy_from_slice(&right_ix);
            let (li, ri) = indices.split_at_mut(split_at);
            let mut lpath = path.clone();
            lpath.push((rule.clone(), Side::Left));
            let left = grow_node(data, li, depth + 1, lpath, controls, root_sse, boxes);
            let mut rpath = path;
            rpath.push((rule.clone(), Side::Right));
            let right =
                grow_node(data, ri, depth + 1, rpath, controls, root_sse, boxes);
            Node::Split {
                rule,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
        None => {
            let local = extract(data, indices);
            let mean = weighted_node_mean(&local.y, &local.w).unwrap();
            let weighted_count = ksum(local.w.iter().copied());
            let sse = weighted_sse(&local.y, &local.w);
            boxes.push(TreeBox {
                rule_path: path,
                mean,
                weighted_count,
                sample_count: indices.len(),
                sse,
            });
            Node::Leaf(boxes.len() - 1)
        }
    }
}

fn value_of(data: &NodeData, var: usize, i: usize) -> Value {
    match &data.cols[var] {
        PredColumn::Categorical { codes, .. } => Value::Level(codes[i]),
        PredColumn::Numeric(v) => Value::Number(v[i]),
    }
}

fn extract(data: &NodeData, indices: &[usize]) -> NodeData {
    NodeData {
        y: indices.iter().map(|&i| data.y[i]).collect(),
        w: indices.iter().map(|&i| data.w[i]).collect(),
        cols: data
            .cols
            .iter()
            .map(|c| match c {
                PredColumn::Categorical { codes, n_levels } => PredColumn::Categorical {
                    codes: indices.iter().map(|&i| codes[i]).collect(),
                    n_levels: *n_levels,
                },
                PredColumn::Numeric(v) => {
                    PredColumn::Numeric(indices.iter().map(|&i| v[i]).collect())
                }
            })
            .collect(),
    }
}

impl Partition {
    pub fn schema(&self) -> &[VariableSpec] {
        &self.schema
    }

    pub fn boxes(&self) -> &[TreeBox] {
        &self.boxes
    }

    pub fn n_boxes(&self) -> usize {
        self.boxes.len()
    }

    /// Index of the unique box containing `x` (values in schema order).
    pub fn box_index(&self, x: &[Value]) -> Result<usize, TreeError> {
        if x.len() != self.schema.len() {
            return Err(TreeError::SchemaMismatch(format!(
                "record has {} values, schema has {}",
                x.len(),
                self.schema.len()
            )));
        }
        for (spec, &v) in self.schema.iter().zip(x) {
            if let (Some(levels), Value::Level(l)) = (spec.levels(), v) {
                if l as usize >= levels.len() {
                    return Err(TreeError::UnknownLevel {
                        variable: spec.name.clone(),
                        level: l,
                    });
                }
            }
        }
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(ix) => return Ok(*ix),
                Node::Split { rule, left, right } => {
                    node = if rule.goes_left(x[rule.var()])? {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Predicted value: the Hajek mean of the containing box.
    pub fn predict(&self, x: &[Value]) -> Result<f64, TreeError> {
        Ok(self.boxes[self.box_index(x)?].mean)
    }

    /// Box index for every row of a frame. The frame must carry every
    /// schema variable with an identical level set.
    pub fn classify_frame(&self, frame: &Frame) -> Result<Vec<u32>, TreeError> {
        let cols: Vec<&Column> = self
            .schema
            .iter()
            .map(|spec| {
                let fspec = frame
                    .spec(&spec.name)
                    .map_err(|_| TreeError::UnknownVariable(spec.name.clone()))?;
                if fspec.kind != spec.kind {
                    return Err(TreeError::SchemaMismatch(format!(
                        "`{}` differs between tree and frame",
                        spec.name
                    )));
                }
                Ok(frame.column(&spec.name).unwrap())
            })
            .collect::<Result<_, _>>()?;
        let mut out = vec![0u32; frame.n()];
        let mut x = vec![Value::Number(0.0); self.schema.len()];
        for (row, slot) in out.iter_mut().enumerate() {
            for (k, col) in cols.iter().enumerate() {
                x[k] = match col {
                    Column::Categorical(v) => Value::Level(v[row]),
                    Column::Numeric(v) => Value::Number(v[row]),
                };
            }
            *slot = self.box_index(&x)? as u32;
        }
        Ok(out)
    }

    /// Box index for every sampled unit.
    pub fn classify_sample(
        &self,
        sample: &SampleDraw,
        frame: &Frame,
    ) -> Result<Vec<u32>, TreeError> {
        let cols: Vec<&Column> = self
            .schema
            .iter()
            .map(|spec| frame.column(&spec.name).map_err(TreeError::from))
            .collect::<Result<_, _>>()?;
        let mut out = vec![0u32; sample.n()];
        let mut x = vec![Value::Number(0.0); self.schema.len()];
        for (k_out, &j) in sample.indices.iter().enumerate() {
            for (k, col) in cols.iter().enumerate() {
                x[k] = match col {
                    Column::Categorical(v) => Value::Level(v[j]),
                    Column::Numeric(v) => Value::Number(v[j]),
                };
            }
            out[k_out] = self.box_index(&x)? as u32;
        }
        Ok(out)
    }

    pub(crate) fn from_parts(
        schema: Vec<VariableSpec>,
        boxes: Vec<TreeBox>,
        root: Node,
    ) -> Self {
        Self {
            schema,
            boxes,
            root,
        }
    }

}
