//! Gradient-boosted trees with second-order (gradient + hessian) boosting,
//! logistic and softmax objectives, balanced class weighting, and
//! early stopping on a held-out evaluation set.

pub mod cv;
pub mod tree;

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

pub use cv::{grid_search_cv, stratified_subject_folds, GridSearchResult, ParamGrid};
pub use tree::{Node, Tree};

const HESSIAN_FLOOR: f64 = 1e-16;
const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Gain threshold a split must clear.
    pub min_split_gain: f64,
    /// Fraction of rows drawn (per round) for tree construction.
    pub subsample: f64,
    /// Fraction of features available to each tree.
    pub colsample_bytree: f64,
    /// Stop after this many rounds without eval improvement.
    pub early_stopping_rounds: Option<usize>,
    /// Reweight samples inversely to class frequency.
    pub class_weight: bool,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_rounds: 2000,
            learning_rate: 0.1,
            max_depth: 5,
            min_child_weight: 1.0,
            lambda: 1.0,
            min_split_gain: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            early_stopping_rounds: Some(10),
            class_weight: true,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n_rounds == 0 {
            return bad("n_rounds must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        if !(self.min_child_weight >= 0.0) {
            return bad(format!(
                "min_child_weight {} must be non-negative",
                self.min_child_weight
            ));
        }
        if !(self.min_split_gain >= 0.0) {
            return bad(format!(
                "min_split_gain {} must be non-negative",
                self.min_split_gain
            ));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!("subsample {} outside (0, 1]", self.subsample));
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad(format!(
                "colsample_bytree {} outside (0, 1]",
                self.colsample_bytree
            ));
        }
        Ok(())
    }
}

/// A trained boosted ensemble. `trees[round]` holds one tree for a binary
/// model and one tree per class for a softmax model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub params: GbtParams,
    /// Distinct class labels in ascending order; prediction vectors are
    /// aligned with this.
    pub classes: Vec<u32>,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    /// Initial margin per score slot (length 1 for binary, K for softmax).
    pub base_score: Vec<f64>,
    pub trees: Vec<Vec<Tree>>,
    /// Round with the best eval metric, when early stopping was active.
    pub best_round: Option<usize>,
    /// Rounds actually executed before truncation to `best_round`; shows
    /// how long training kept going once the eval metric stopped moving.
    #[serde(default)]
    pub rounds_trained: usize,
}

impl GbtModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn n_slots(&self) -> usize {
        self.base_score.len()
    }

    pub fn n_rounds_used(&self) -> usize {
        self.trees.len()
    }

    pub fn set_feature_names(&mut self, names: &[String]) -> Result<()> {
        if names.len() != self.n_features {
            return Err(Error::FeatureMismatch);
        }
        self.feature_names = names.to_vec();
        Ok(())
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Raw additive scores, one per slot.
    pub fn predict_margin(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        let mut margins = self.base_score.clone();
        for round in &self.trees {
            for (slot, tree) in round.iter().enumerate() {
                margins[slot] += tree.predict(x);
            }
        }
        Ok(margins)
    }

    /// Class probabilities aligned with `classes`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let margins = self.predict_margin(x)?;
        Ok(self.margins_to_proba(&margins))
    }

    fn margins_to_proba(&self, margins: &[f64]) -> Vec<f64> {
        if self.n_slots() == 1 {
            let p = sigmoid(margins[0]);
            vec![1.0 - p, p]
        } else {
            softmax(margins)
        }
    }

    /// Label of the highest-probability class (first wins on exact ties).
    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        let probs = self.predict_proba(x)?;
        Ok(self.classes[argmax(&probs)])
    }

    pub fn predict_proba_batch(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let rows = parallel::map_collect(x, |row| self.predict_proba(row));
        rows.into_iter().collect()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<GbtModel> {
        serde_json::from_str(text).map_err(|e| Error::MalformedJson {
            path: "<string>".into(),
            message: e.to_string(),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<GbtModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(margins: &[f64]) -> Vec<f64> {
    let max = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = margins.iter().map(|m| (m - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Balanced weights: n / (n_classes * count(class)), keyed by class label.
pub fn balanced_class_weights(y: &[u32]) -> Vec<(u32, f64)> {
    let mut classes: Vec<u32> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let n = y.len() as f64;
    let k = classes.len() as f64;
    classes
        .iter()
        .map(|&c| {
            let count = y.iter().filter(|&&v| v == c).count() as f64;
            (c, n / (k * count))
        })
        .collect()
}

fn validate_matrix(x: &[Vec<f64>], y: &[u32]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let n_features = x[0].len();
    if n_features == 0 {
        return Err(Error::EmptyMatrix);
    }
    for row in x {
        if row.len() != n_features {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(
                "feature matrix contains a non-finite value".into(),
            ));
        }
    }
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(n_features)
}

struct Objective {
    classes: Vec<u32>,
    /// Class index per training sample.
    y_idx: Vec<usize>,
    /// Per-sample weight.
    weight: Vec<f64>,
    slots: usize,
}

impl Objective {
    fn new(y: &[u32], class_weight: bool) -> Result<Objective> {
        let mut classes: Vec<u32> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::SingleClassTraining(classes[0]));
        }
        let y_idx: Vec<usize> = y
            .iter()
            .map(|v| classes.iter().position(|c| c == v).unwrap())
            .collect();
        let weight = if class_weight {
            let table = balanced_class_weights(y);
            y.iter()
                .map(|v| table.iter().find(|(c, _)| c == v).unwrap().1)
                .collect()
        } else {
            vec![1.0; y.len()]
        };
        let slots = if classes.len() == 2 { 1 } else { classes.len() };
        Ok(Objective {
            classes,
            y_idx,
            weight,
            slots,
        })
    }

    fn base_score(&self) -> Vec<f64> {
        if self.slots == 1 {
            let pos = self.y_idx.iter().filter(|&&i| i == 1).count() as f64;
            let neg = self.y_idx.len() as f64 - pos;
            vec![(pos / neg).ln()]
        } else {
            vec![0.0; self.slots]
        }
    }

    /// Gradient and hessian for one slot given slot-major margins.
    fn grad_hess(&self, margins: &[Vec<f64>], slot: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.y_idx.len();
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        if self.slots == 1 {
            for i in 0..n {
                let p = sigmoid(margins[0][i]);
                let y = self.y_idx[i] as f64;
                let w = self.weight[i];
                grad[i] = w * (p - y);
                hess[i] = (w * p * (1.0 - p)).max(HESSIAN_FLOOR);
            }
        } else {
            for i in 0..n {
                let m: Vec<f64> = margins.iter().map(|s| s[i]).collect();
                let p = softmax(&m)[slot];
                let target = if self.y_idx[i] == slot { 1.0 } else { 0.0 };
                let w = self.weight[i];
                grad[i] = w * (p - target);
                hess[i] = (w * p * (1.0 - p)).max(HESSIAN_FLOOR);
            }
        }
        (grad, hess)
    }
}

/// Unweighted mean negative log-likelihood of the true class.
fn mean_logloss(probs: &[Vec<f64>], y_idx: &[usize]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(y_idx)
        .map(|(p, &yi)| -(p[yi].max(PROB_FLOOR).ln()))
        .sum();
    total / y_idx.len() as f64
}

/// Train a boosted ensemble. With an eval set and `early_stopping_rounds`,
/// training stops once the eval metric (AUC for binary with both classes
/// present, otherwise log loss) fails to improve, and the ensemble is
/// truncated back to the best round.
pub fn train(
    x: &[Vec<f64>],
    y: &[u32],
    params: &GbtParams,
    eval_set: Option<(&[Vec<f64>], &[u32])>,
) -> Result<GbtModel> {
    params.validate()?;
    let n_features = validate_matrix(x, y)?;
    let objective = Objective::new(y, params.class_weight)?;

    let eval = match eval_set {
        None => None,
        Some((ex, ey)) => {
            if ex.is_empty() {
                return Err(Error::EmptyEvalSet);
            }
            let ef = validate_matrix(ex, ey)?;
            if ef != n_features {
                return Err(Error::DimensionMismatch {
                    expected: n_features,
                    got: ef,
                });
            }
            let mut eval_idx = Vec::with_capacity(ey.len());
            for &label in ey {
                let idx = objective
                    .classes
                    .iter()
                    .position(|&c| c == label)
                    .ok_or(Error::UnknownClassLabel(label))?;
                eval_idx.push(idx);
            }
            Some((ex, eval_idx))
        }
    };

    let n = x.len();
    let slots = objective.slots;
    let base = objective.base_score();

    // Slot-major margins for train and eval rows.
    let mut margins: Vec<Vec<f64>> = (0..slots).map(|s| vec![base[s]; n]).collect();
    let mut eval_margins: Vec<Vec<f64>> = match &eval {
        Some((ex, _)) => (0..slots).map(|s| vec![base[s]; ex.len()]).collect(),
        None => Vec::new(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let all_features: Vec<usize> = (0..n_features).collect();
    let mut trees: Vec<Vec<Tree>> = Vec::new();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_round = 0usize;
    let early_stop = params.early_stopping_rounds.filter(|_| eval.is_some());

    for round in 0..params.n_rounds {
        // Row and feature draws happen in a fixed order for determinism.
        let rows: Vec<usize> = if params.subsample < 1.0 {
            let picked: Vec<usize> =
                (0..n).filter(|_| rng.gen_bool(params.subsample)).collect();
            if picked.is_empty() {
                (0..n).collect()
            } else {
                picked
            }
        } else {
            (0..n).collect()
        };
        let features: Vec<usize> = if params.colsample_bytree < 1.0 {
            let take = ((params.colsample_bytree * n_features as f64).ceil() as usize)
                .clamp(1, n_features);
            let mut chosen = rand::seq::index::sample(&mut rng, n_features, take).into_vec();
            chosen.sort_unstable();
            chosen
        } else {
            all_features.clone()
        };

        let mut round_trees = Vec::with_capacity(slots);
        for slot in 0..slots {
            let (grad, hess) = objective.grad_hess(&margins, slot);
            let builder = tree::TreeBuilder {
                x,
                grad: &grad,
                hess: &hess,
                weight: &objective.weight,
                params,
                features: &features,
            };
            let t = builder.build(rows.clone());
            margins[slot] = parallel::map_indices(n, |i| margins[slot][i] + t.predict(&x[i]));
            if let Some((ex, _)) = &eval {
                eval_margins[slot] =
                    parallel::map_indices(ex.len(), |i| eval_margins[slot][i] + t.predict(&ex[i]));
            }
            round_trees.push(t);
        }
        trees.push(round_trees);

        if let (Some(stop_after), Some((_, eval_idx))) = (early_stop, &eval) {
            let metric = eval_metric(&eval_margins, eval_idx, slots);
            if metric > best_metric {
                best_metric = metric;
                best_round = round;
            }
            if round - best_round >= stop_after {
                break;
            }
        }
    }

    let rounds_trained = trees.len();
    if early_stop.is_some() {
        trees.truncate(best_round + 1);
    }

    Ok(GbtModel {
        params: params.clone(),
        classes: objective.classes,
        n_features,
        feature_names: (0..n_features).map(|i| format!("f{i}")).collect(),
        base_score: base,
        trees,
        best_round: early_stop.map(|_| best_round),
        rounds_trained,
    })
}

/// Early-stopping metric, oriented so larger is better: AUC for binary
/// eval sets containing both classes, negative log loss otherwise.
fn eval_metric(eval_margins: &[Vec<f64>], eval_idx: &[usize], slots: usize) -> f64 {
    if slots == 1 {
        let labels: Vec<bool> = eval_idx.iter().map(|&i| i == 1).collect();
        let scores: Vec<f64> = eval_margins[0].iter().map(|&m| sigmoid(m)).collect();
        if labels.iter().any(|&b| b) && labels.iter().any(|&b| !b) {
            return crate::evaluate::roc_auc(&scores, &labels)
                .expect("non-degenerate AUC inputs");
        }
        let probs: Vec<Vec<f64>> = scores.iter().map(|&p| vec![1.0 - p, p]).collect();
        -mean_logloss(&probs, eval_idx)
    } else {
        let n = eval_idx.len();
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let m: Vec<f64> = eval_margins.iter().map(|s| s[i]).collect();
                softmax(&m)
            })
            .collect();
        -mean_logloss(&probs, eval_idx)
    }
}
