//! Tree document serialization: a self-contained JSON format holding the
//! predictor schema, every box's rule path, and the fitted leaf values.
//! `import(export(t))` reproduces identical predictions.

use serde::{Deserialize, Serialize};

use crate::frame::{VarKind, VariableSpec};

use super::{Node, Partition, Side, SplitRule, TreeBox, TreeError};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathStep {
    var: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left_levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    side: Side,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    path: Vec<PathStep>,
    value: f64,
    weighted_count: f64,
    #[serde(default)]
    sample_count: usize,
    #[serde(default)]
    sse: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    schema: Vec<VariableSpec>,
    nodes: Vec<NodeDoc>,
}

fn rule_to_step(rule: &SplitRule, side: Side, schema: &[VariableSpec]) -> PathStep {
    match rule {
        SplitRule::CategoricalSubset { var, left_levels } => {
            let levels = schema[*var].levels().unwrap();
            PathStep {
                var: schema[*var].name.clone(),
                left_levels: Some(
                    left_levels
                        .iter()
                        .map(|&l| levels[l as usize].clone())
                        .collect(),
                ),
                threshold: None,
                side,
            }
        }
        SplitRule::NumericThreshold { var, threshold } => PathStep {
            var: schema[*var].name.clone(),
            left_levels: None,
            threshold: Some(*threshold),
            side,
        },
    }
}

fn step_to_rule(step: &PathStep, schema: &[VariableSpec]) -> Result<(SplitRule, Side), TreeError> {
    let var = schema
        .iter()
        .position(|s| s.name == step.var)
        .ok_or_else(|| TreeError::UnknownVariable(step.var.clone()))?;
    let rule = match (&step.left_levels, step.threshold, &schema[var].kind) {
        (Some(names), None, VarKind::Categorical { levels }) => {
            let mut left = Vec::with_capacity(names.len());
            for name in names {
                let ix = levels.iter().position(|l| l == name).ok_or_else(|| {
                    TreeError::BadDocument(format!("`{name}` is not a level of `{}`", step.var))
                })?;
                left.push(ix as u16);
            }
            left.sort_unstable();
            left.dedup();
            SplitRule::CategoricalSubset {
                var,
                left_levels: left,
            }
        }
        (None, Some(threshold), VarKind::Numeric) => SplitRule::NumericThreshold { var, threshold },
        _ => {
            return Err(TreeError::BadDocument(format!(
                "step on `{}` must carry exactly one of left_levels/threshold matching the variable kind",
                step.var
            )))
        }
    };
    Ok((rule, step.side))
}

/// Serialize a partition to the JSON tree document.
pub fn export(partition: &Partition) -> Result<String, TreeError> {
    let doc = TreeDoc {
        schema: partition.schema().to_vec(),
        nodes: partition
            .boxes()
            .iter()
            .map(|b| NodeDoc {
                path: b
                    .rule_path
                    .iter()
                    .map(|(rule, side)| rule_to_step(rule, *side, partition.schema()))
                    .collect(),
                value: b.mean,
                weighted_count: b.weighted_count,
                sample_count: b.sample_count,
                sse: b.sse,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parse a tree document back into a partition.
pub fn import(text: &str) -> Result<Partition, TreeError> {
    let doc: TreeDoc = serde_json::from_str(text)?;
    if doc.nodes.is_empty() {
        return Err(TreeError::BadDocument("document has no nodes".into()));
    }
    let mut boxes = Vec::with_capacity(doc.nodes.len());
    let mut paths = Vec::with_capacity(doc.nodes.len());
    for node in &doc.nodes {
        let path: Vec<(SplitRule, Side)> = node
            .path
            .iter()
            .map(|s| step_to_rule(s, &doc.schema))
            .collect::<Result<_, _>>()?;
        if node.weighted_count.is_nan() || node.weighted_count <= 0.0 || !node.value.is_finite() {
            return Err(TreeError::BadDocument(
                "leaf needs finite value and positive weighted_count".into(),
            ));
        }
        paths.push(path.clone());
        boxes.push(TreeBox {
            rule_path: path,
            mean: node.value,
            weighted_count: node.weighted_count,
            sample_count: node.sample_count,
            sse: node.sse,
        });
    }
    let leaf_ids: Vec<usize> = (0..boxes.len()).collect();
    let root = build_node(&paths, &leaf_ids, 0)?;
    Ok(Partition::from_parts(doc.schema, boxes, root))
}

/// Rebuild the decision tree from the rule paths: at each depth, all boxes
/// under a node must agree on the splitting rule, with both sides present.
fn build_node(
    paths: &[Vec<(SplitRule, Side)>],
    members: &[usize],
    depth: usize,
) -> Result<Node, TreeError> {
    if members.len() == 1 && paths[members[0]].len() == depth {
        return Ok(Node::Leaf(members[0]));
    }
    let first = members[0];
    let rule = paths[first]
        .get(depth)
        .map(|(r, _)| r.clone())
        .ok_or_else(|| TreeError::BadDocument("paths do not form a binary tree".into()))?;
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &m in members {
        match paths[m].get(depth) {
            Some((r, side)) if *r == rule => match side {
                Side::Left => left.push(m),
                Side::Right => right.push(m),
            },
            _ => {
                return Err(TreeError::BadDocument(
                    "sibling boxes disagree on the splitting rule".into(),
                ))
            }
        }
    }
    if left.is_empty() || right.is_empty() {
        return Err(TreeError::BadDocument(
            "split with an empty side".into(),
        ));
    }
    Ok(Node::Split {
        rule,
        left: Box::new(build_node(paths, &left, depth + 1)?),
        right: Box::new(build_node(paths, &right, depth + 1)?),
    })
}
