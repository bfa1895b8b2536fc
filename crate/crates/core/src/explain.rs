//! Shapley-value explanations for boosted-tree models: an exact
//! polynomial-time path algorithm and an exponential subset-enumeration
//! reference, both over cover-weighted conditional expectations.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::gbt::{GbtModel, Node, Tree};
use crate::parallel;

/// Largest feature count the subset-enumeration route accepts.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 12;

/// Per-class additive attributions for one sample:
/// margin_k = base_values[k] + sum_j phi[k][j].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapValues {
    /// Class label per score slot: the positive class for binary models,
    /// every class for softmax models.
    pub classes: Vec<u32>,
    pub base_values: Vec<f64>,
    /// phi[slot][feature].
    pub phi: Vec<Vec<f64>>,
}

impl ShapValues {
    pub fn margin(&self, slot: usize) -> f64 {
        self.base_values[slot] + self.phi[slot].iter().sum::<f64>()
    }
}

fn slot_classes(model: &GbtModel) -> Vec<u32> {
    if model.base_score.len() == 1 {
        vec![model.classes[1]]
    } else {
        model.classes.clone()
    }
}

fn check_covers(model: &GbtModel) -> Result<()> {
    for round in &model.trees {
        for tree in round {
            for node in &tree.nodes {
                let c = node.cover();
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::MissingCover);
                }
            }
        }
    }
    Ok(())
}

/// Cover-weighted mean leaf value: the model's output when no feature
/// is known.
fn tree_expectation(tree: &Tree) -> f64 {
    fn walk(tree: &Tree, idx: usize) -> f64 {
        match tree.nodes[idx] {
            Node::Leaf { value, cover } => value * cover,
            Node::Split { left, right, .. } => walk(tree, left) + walk(tree, right),
        }
    }
    walk(tree, 0) / tree.nodes[0].cover()
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / denom;
    }
}

/// Remove element `index` from the path, restoring the permutation weights
/// to what they would have been had it never been extended.
fn unwind(path: &[PathElement], index: usize) -> Vec<PathElement> {
    let last = path.len() - 1;
    let one = path[index].one;
    let zero = path[index].zero;
    let mut out = path.to_vec();
    let mut carry = out[last].weight;
    for j in (0..last).rev() {
        if one != 0.0 {
            let kept = out[j].weight;
            out[j].weight = carry * (last + 1) as f64 / ((j + 1) as f64 * one);
            carry = kept - out[j].weight * zero * (last - j) as f64 / (last + 1) as f64;
        } else {
            out[j].weight = out[j].weight * (last + 1) as f64 / (zero * (last - j) as f64);
        }
    }
    for j in index..last {
        out[j].feature = out[j + 1].feature;
        out[j].zero = out[j + 1].zero;
        out[j].one = out[j + 1].one;
    }
    out.truncate(last);
    out
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    node: usize,
    x: &[f64],
    mut path: Vec<PathElement>,
    zero: f64,
    one: f64,
    feature: Option<usize>,
    phi: &mut [f64],
) {
    extend(&mut path, zero, one, feature);
    match tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let weight: f64 = unwind(&path, i).iter().map(|e| e.weight).sum();
                let el = &path[i];
                phi[el.feature.expect("non-root path element")] +=
                    weight * (el.one - el.zero) * value;
            }
        }
        Node::Split {
            feature: split_feature,
            threshold,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if x[split_feature] < threshold {
                (left, right)
            } else {
                (right, left)
            };
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = path.iter().position(|e| e.feature == Some(split_feature)) {
                incoming_zero = path[k].zero;
                incoming_one = path[k].one;
                path = unwind(&path, k);
            }
            let hot_frac = tree.nodes[hot].cover() / cover;
            let cold_frac = tree.nodes[cold].cover() / cover;
            recurse(
                tree,
                hot,
                x,
                path.clone(),
                incoming_zero * hot_frac,
                incoming_one,
                Some(split_feature),
                phi,
            );
            recurse(
                tree,
                cold,
                x,
                path,
                incoming_zero * cold_frac,
                0.0,
                Some(split_feature),
                phi,
            );
        }
    }
}

/// Exact per-class Shapley attributions via the polynomial path algorithm,
/// additive over trees.
pub fn tree_shap(model: &GbtModel, x: &[f64]) -> Result<ShapValues> {
    if x.len() != model.n_features {
        return Err(Error::DimensionMismatch {
            expected: model.n_features,
            got: x.len(),
        });
    }
    check_covers(model)?;
    let slots = model.base_score.len();
    let mut phi = vec![vec![0.0; model.n_features]; slots];
    let mut base_values = model.base_score.clone();
    for round in &model.trees {
        for (slot, tree) in round.iter().enumerate() {
            base_values[slot] += tree_expectation(tree);
            recurse(tree, 0, x, Vec::new(), 1.0, 1.0, None, &mut phi[slot]);
        }
    }
    Ok(ShapValues {
        classes: slot_classes(model),
        base_values,
        phi,
    })
}

/// Attributions for many rows at once.
pub fn tree_shap_batch(model: &GbtModel, rows: &[Vec<f64>]) -> Result<Vec<ShapValues>> {
    check_covers(model)?;
    let out = parallel::map_collect(rows, |row| tree_shap(model, row));
    out.into_iter().collect()
}

/// Conditional expectation of one tree given the features in `mask` take
/// their values from `x` and the rest follow the training distribution
/// (cover-weighted descent).
fn masked_expectation(tree: &Tree, node: usize, x: &[f64], mask: u32) -> f64 {
    match tree.nodes[node] {
        Node::Leaf { value, .. } => value,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            if mask & (1 << feature) != 0 {
                let next = if x[feature] < threshold { left } else { right };
                masked_expectation(tree, next, x, mask)
            } else {
                let l = tree.nodes[left].cover() * masked_expectation(tree, left, x, mask);
                let r = tree.nodes[right].cover() * masked_expectation(tree, right, x, mask);
                (l + r) / cover
            }
        }
    }
}

/// Reference Shapley computation by full subset enumeration. Limited to
/// 12 features; exists to cross-check `tree_shap` and must agree with it.
pub fn shap_brute_force(model: &GbtModel, x: &[f64]) -> Result<ShapValues> {
    let n = model.n_features;
    if n > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::TooManyFeatures {
            max: BRUTE_FORCE_MAX_FEATURES,
            got: n,
        });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    check_covers(model)?;

    let mut factorial = [1.0f64; BRUTE_FORCE_MAX_FEATURES + 1];
    for i in 1..factorial.len() {
        factorial[i] = factorial[i - 1] * i as f64;
    }

    let slots = model.base_score.len();
    let n_masks = 1usize << n;
    let mut phi = vec![vec![0.0; n]; slots];
    let mut base_values = vec![0.0; slots];

    for slot in 0..slots {
        // v(S) for every subset.
        let mut value = vec![model.base_score[slot]; n_masks];
        for (mask, v) in value.iter_mut().enumerate() {
            for round in &model.trees {
                *v += masked_expectation(&round[slot], 0, x, mask as u32);
            }
        }
        base_values[slot] = value[0];
        for (i, phi_i) in phi[slot].iter_mut().enumerate() {
            let bit = 1usize << i;
            let mut total = 0.0;
            for mask in 0..n_masks {
                if mask & bit != 0 {
                    continue;
                }
                let s = (mask as u32).count_ones() as usize;
                let weight = factorial[s] * factorial[n - s - 1] / factorial[n];
                total += weight * (value[mask | bit] - value[mask]);
            }
            *phi_i = total;
        }
    }

    Ok(ShapValues {
        classes: slot_classes(model),
        base_values,
        phi,
    })
}

/// Mean absolute attribution per class and feature across many samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub classes: Vec<u32>,
    pub feature_names: Vec<String>,
    /// mean_abs_phi[slot][feature].
    pub mean_abs_phi: Vec<Vec<f64>>,
    /// Mean over classes of `mean_abs_phi`, one entry per feature.
    pub overall: Vec<f64>,
}

impl ImportanceRanking {
    /// Features sorted by overall importance, descending; ties keep
    /// feature order.
    pub fn ranked_overall(&self) -> Vec<(String, f64)> {
        let mut idx: Vec<usize> = (0..self.feature_names.len()).collect();
        idx.sort_by(|&a, &b| {
            self.overall[b]
                .partial_cmp(&self.overall[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        idx.into_iter()
            .map(|i| (self.feature_names[i].clone(), self.overall[i]))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let err = |e: std::io::Error| Error::MalformedCsv {
            path: "<writer>".into(),
            message: e.to_string(),
        };
        writeln!(writer, "feature,class,mean_abs_phi").map_err(err)?;
        for (slot, &class) in self.classes.iter().enumerate() {
            for (j, name) in self.feature_names.iter().enumerate() {
                writeln!(writer, "{},{},{}", name, class, self.mean_abs_phi[slot][j])
                    .map_err(err)?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Aggregate per-sample attributions into a mean-|phi| ranking.
pub fn aggregate_importance(
    values: &[ShapValues],
    feature_names: &[String],
) -> Result<ImportanceRanking> {
    let first = values
        .first()
        .ok_or_else(|| Error::EmptyInput("no attribution rows".into()))?;
    let slots = first.phi.len();
    let n_features = first.phi[0].len();
    if feature_names.len() != n_features {
        return Err(Error::FeatureMismatch);
    }
    let mut mean_abs = vec![vec![0.0; n_features]; slots];
    for v in values {
        if v.classes != first.classes || v.phi.len() != slots {
            return Err(Error::FeatureMismatch);
        }
        for (slot, row) in v.phi.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::FeatureMismatch);
            }
            for (j, &p) in row.iter().enumerate() {
                mean_abs[slot][j] += p.abs();
            }
        }
    }
    for row in &mut mean_abs {
        for v in row.iter_mut() {
            *v /= values.len() as f64;
        }
    }
    let overall: Vec<f64> = (0..n_features)
        .map(|j| mean_abs.iter().map(|row| row[j]).sum::<f64>() / slots as f64)
        .collect();
    Ok(ImportanceRanking {
        classes: first.classes.clone(),
        feature_names: feature_names.to_vec(),
        mean_abs_phi: mean_abs,
        overall,
    })
}

/// Long-format per-epoch attributions:
/// subject_id,epoch_index,class,feature,phi. `shap` must be aligned
/// row-for-row with `table`.
pub fn write_shap_csv<W: Write>(
    mut writer: W,
    table: &FeatureTable,
    shap: &[ShapValues],
) -> Result<()> {
    if table.rows.len() != shap.len() {
        return Err(Error::DimensionMismatch {
            expected: table.rows.len(),
            got: shap.len(),
        });
    }
    let err = |e: std::io::Error| Error::MalformedCsv {
        path: "<writer>".into(),
        message: e.to_string(),
    };
    writeln!(writer, "subject_id,epoch_index,class,feature,phi").map_err(err)?;
    for (row, values) in table.rows.iter().zip(shap) {
        for (slot, &class) in values.classes.iter().enumerate() {
            for (j, name) in table.feature_names.iter().enumerate() {
                writeln!(
                    writer,
                    "{},{},{},{},{}",
                    row.subject_id, row.epoch_index, class, name, values.phi[slot][j]
                )
                .map_err(err)?;
            }
        }
    }
    Ok(())
}
