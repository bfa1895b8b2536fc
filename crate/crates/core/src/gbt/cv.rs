//! Subject-level stratified cross-validation and hyperparameter grid search.

use std::collections::{BTreeMap, HashSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate;
use crate::parallel;

use super::{train, GbtParams};

/// Partition subjects into `n_folds` groups, keeping each class spread
/// evenly across folds. Returns fold -> subject ids.
pub fn stratified_subject_folds(
    subjects: &[String],
    y: &[u32],
    n_folds: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    if subjects.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: subjects.len(),
            got: y.len(),
        });
    }
    if n_folds < 2 {
        return Err(Error::InvalidParams("need at least 2 folds".into()));
    }

    // Subject -> label from first appearance; class -> subjects in
    // first-seen order.
    let mut by_class: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for (s, &label) in subjects.iter().zip(y) {
        if seen.insert(s.as_str()) {
            by_class.entry(label).or_default().push(s.clone());
        }
    }
    let total: usize = by_class.values().map(Vec::len).sum();
    if total < n_folds {
        return Err(Error::TooFewSubjectsForFolds {
            subjects: total,
            folds: n_folds,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); n_folds];
    let mut next = 0usize;
    for list in by_class.values_mut() {
        list.shuffle(&mut rng);
        for (i, subject) in list.drain(..).enumerate() {
            folds[(next + i) % n_folds].push(subject);
        }
        next = folds.iter().map(Vec::len).sum::<usize>() % n_folds;
    }
    Ok(folds)
}

/// Choose a per-class ~`frac` slice of subjects to hold out for early
/// stopping. A class only contributes if it has at least two subjects, so
/// the remaining training set always keeps every class.
pub(crate) fn split_eval_subjects(
    subject_labels: &[(String, u32)],
    frac: f64,
    seed: u64,
) -> Vec<String> {
    let mut by_class: BTreeMap<u32, Vec<&String>> = BTreeMap::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for (s, label) in subject_labels {
        if seen.insert(s.as_str()) {
            by_class.entry(*label).or_default().push(s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = Vec::new();
    for list in by_class.values_mut() {
        if list.len() < 2 {
            continue;
        }
        list.shuffle(&mut rng);
        let take = ((frac * list.len() as f64).round() as usize).clamp(1, list.len() - 1);
        eval.extend(list.iter().take(take).map(|s| (*s).clone()));
    }
    eval
}

/// Cartesian hyperparameter grid over the dimensions that matter most;
/// everything else comes from `base`. An empty dimension means "keep the
/// base value".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamGrid {
    pub base: GbtParams,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub min_child_weight: Vec<f64>,
    pub subsample: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid {
            base: GbtParams::default(),
            max_depth: vec![3, 5, 7],
            learning_rate: vec![0.05, 0.1, 0.3],
            min_child_weight: vec![1.0, 5.0],
            subsample: vec![0.8, 1.0],
        }
    }
}

impl ParamGrid {
    /// All combinations in deterministic nesting order: max_depth, then
    /// learning_rate, then min_child_weight, then subsample.
    pub fn expand(&self) -> Vec<GbtParams> {
        let depths = or_base(&self.max_depth, self.base.max_depth);
        let rates = or_base(&self.learning_rate, self.base.learning_rate);
        let weights = or_base(&self.min_child_weight, self.base.min_child_weight);
        let subsamples = or_base(&self.subsample, self.base.subsample);
        let mut out = Vec::new();
        for &max_depth in &depths {
            for &learning_rate in &rates {
                for &min_child_weight in &weights {
                    for &subsample in &subsamples {
                        out.push(GbtParams {
                            max_depth,
                            learning_rate,
                            min_child_weight,
                            subsample,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

fn or_base<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub params: GbtParams,
    /// Mean validation AUC over the folds where it was defined, if any.
    pub mean_score: Option<f64>,
    pub folds_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_params: GbtParams,
    pub best_score: f64,
    pub candidates: Vec<CandidateScore>,
}

/// Score every grid candidate by subject-level stratified cross-validation
/// and return the parameters with the best mean validation AUC (binary) or
/// macro one-vs-rest AUC (multiclass). Folds where the metric is undefined
/// are skipped; ties keep the earliest candidate in grid order.
pub fn grid_search_cv(
    x: &[Vec<f64>],
    y: &[u32],
    subjects: &[String],
    grid: &ParamGrid,
    n_folds: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if x.len() != y.len() || x.len() != subjects.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len().min(subjects.len()),
        });
    }
    let mut classes: Vec<u32> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClassLabels);
    }

    let folds = stratified_subject_folds(subjects, y, n_folds, seed)?;
    let fold_sets: Vec<HashSet<&str>> = folds
        .iter()
        .map(|f| f.iter().map(String::as_str).collect())
        .collect();
    let candidates = grid.expand();

    let scored = parallel::map_collect(&candidates, |params| -> Result<CandidateScore> {
        let mut fold_scores = Vec::new();
        for (fold_idx, held_out) in fold_sets.iter().enumerate() {
            if let Some(score) = score_fold(
                x,
                y,
                subjects,
                &classes,
                held_out,
                params,
                seed.wrapping_add(fold_idx as u64),
            )? {
                fold_scores.push(score);
            }
        }
        let mean = if fold_scores.is_empty() {
            None
        } else {
            Some(fold_scores.iter().sum::<f64>() / fold_scores.len() as f64)
        };
        Ok(CandidateScore {
            params: params.clone(),
            mean_score: mean,
            folds_used: fold_scores.len(),
        })
    });

    let mut results = Vec::with_capacity(scored.len());
    for s in scored {
        results.push(s?);
    }

    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in results.iter().enumerate() {
        if let Some(score) = cand.mean_score {
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
    }
    let (best_idx, best_score) = best.ok_or_else(|| {
        Error::InvalidSpec("grid search: no fold produced a defined metric".into())
    })?;
    Ok(GridSearchResult {
        best_params: results[best_idx].params.clone(),
        best_score,
        candidates: results,
    })
}

/// Validation AUC for one fold, or None when undefined (single-class
/// training set or no measurable class in the validation set).
fn score_fold(
    x: &[Vec<f64>],
    y: &[u32],
    subjects: &[String],
    classes: &[u32],
    held_out: &HashSet<&str>,
    params: &GbtParams,
    eval_seed: u64,
) -> Result<Option<f64>> {
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (i, subject) in subjects.iter().enumerate() {
        if held_out.contains(subject.as_str()) {
            test_rows.push(i);
        } else {
            train_rows.push(i);
        }
    }
    if train_rows.is_empty() || test_rows.is_empty() {
        return Ok(None);
    }
    let distinct = |rows: &[usize]| {
        let mut v: Vec<u32> = rows.iter().map(|&i| y[i]).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    if distinct(&train_rows).len() < 2 || distinct(&test_rows).is_empty() {
        return Ok(None);
    }

    // Carve an early-stopping eval split out of the training subjects so
    // the validation fold never steers training.
    let (fit_rows, eval_rows) = if params.early_stopping_rounds.is_some() {
        let pairs: Vec<(String, u32)> = train_rows
            .iter()
            .map(|&i| (subjects[i].clone(), y[i]))
            .collect();
        let eval_subjects: HashSet<String> =
            split_eval_subjects(&pairs, 0.2, eval_seed).into_iter().collect();
        let (eval, fit): (Vec<usize>, Vec<usize>) = train_rows
            .iter()
            .partition(|&&i| eval_subjects.contains(&subjects[i]));
        if eval.is_empty() || distinct(&fit).len() < 2 {
            (train_rows.clone(), Vec::new())
        } else {
            (fit, eval)
        }
    } else {
        (train_rows.clone(), Vec::new())
    };

    let gather = |rows: &[usize]| -> (Vec<Vec<f64>>, Vec<u32>) {
        (
            rows.iter().map(|&i| x[i].clone()).collect(),
            rows.iter().map(|&i| y[i]).collect(),
        )
    };
    let (fit_x, fit_y) = gather(&fit_rows);
    let model = if eval_rows.is_empty() {
        train(&fit_x, &fit_y, params, None)?
    } else {
        let (eval_x, eval_y) = gather(&eval_rows);
        train(&fit_x, &fit_y, params, Some((&eval_x, &eval_y)))?
    };

    let (test_x, test_y) = gather(&test_rows);
    let probs = model.predict_proba_batch(&test_x)?;

    if classes.len() == 2 {
        let positive = model.classes[1];
        let labels: Vec<bool> = test_y.iter().map(|&v| v == positive).collect();
        if !labels.iter().any(|&b| b) || !labels.iter().any(|&b| !b) {
            return Ok(None);
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        Ok(Some(evaluate::roc_auc(&scores, &labels)?))
    } else {
        Ok(evaluate::macro_ovr_auc(&probs, &test_y, &model.classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_rows(per_class: usize, epochs: usize) -> (Vec<Vec<f64>>, Vec<u32>, Vec<String>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut subjects = Vec::new();
        for c in 0..2u32 {
            for s in 0..per_class {
                for e in 0..epochs {
                    let noise = ((s * 7 + e * 3) % 5) as f64 * 0.1;
                    x.push(vec![c as f64 * 2.0 + noise, e as f64]);
                    y.push(c);
                    subjects.push(format!("c{c}s{s}"));
                }
            }
        }
        (x, y, subjects)
    }

    #[test]
    fn folds_partition_subjects_evenly() {
        let (_, y, subjects) = toy_rows(6, 4);
        let folds = stratified_subject_folds(&subjects, &y, 4, 9).unwrap();
        assert_eq!(folds.len(), 4);
        let mut all: Vec<String> = folds.concat();
        all.sort();
        let mut expect: Vec<String> = (0..2)
            .flat_map(|c| (0..6).map(move |s| format!("c{c}s{s}")))
            .collect();
        expect.sort();
        assert_eq!(all, expect);
        // 6 subjects per class over 4 folds: every fold gets 1 or 2 of each.
        for fold in &folds {
            for c in 0..2 {
                let count = fold.iter().filter(|s| s.starts_with(&format!("c{c}"))).count();
                assert!((1..=2).contains(&count), "fold {fold:?}");
            }
        }
        // Same seed, same folds.
        let again = stratified_subject_folds(&subjects, &y, 4, 9).unwrap();
        assert_eq!(folds, again);
    }

    #[test]
    fn too_few_subjects_is_an_error() {
        let subjects = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        let y = vec![0, 1, 0];
        assert!(matches!(
            stratified_subject_folds(&subjects, &y, 4, 0),
            Err(Error::TooFewSubjectsForFolds {
                subjects: 2,
                folds: 4
            })
        ));
    }

    #[test]
    fn eval_split_keeps_every_class_in_training() {
        let pairs: Vec<(String, u32)> = vec![
            ("a".into(), 0),
            ("b".into(), 0),
            ("c".into(), 0),
            ("d".into(), 1), // single-subject class stays in training
        ];
        let eval = split_eval_subjects(&pairs, 0.2, 3);
        assert_eq!(eval.len(), 1);
        assert_ne!(eval[0], "d");
    }

    #[test]
    fn grid_expansion_order_and_base_fallback() {
        let grid = ParamGrid {
            base: GbtParams::default(),
            max_depth: vec![2, 4],
            learning_rate: vec![0.1],
            min_child_weight: vec![],
            subsample: vec![0.5, 1.0],
        };
        let combos = grid.expand();
        assert_eq!(combos.len(), 4);
        assert_eq!(combos[0].max_depth, 2);
        assert_eq!(combos[0].subsample, 0.5);
        assert_eq!(combos[1].subsample, 1.0);
        assert_eq!(combos[2].max_depth, 4);
        assert!(combos.iter().all(|p| p.min_child_weight == 1.0));
    }

    #[test]
    fn grid_search_prefers_the_working_candidate() {
        let (x, y, subjects) = toy_rows(8, 6);
        let good = GbtParams {
            n_rounds: 20,
            learning_rate: 0.3,
            max_depth: 3,
            min_child_weight: 0.0,
            early_stopping_rounds: None,
            ..GbtParams::default()
        };
        let grid = ParamGrid {
            base: good.clone(),
            max_depth: vec![3],
            learning_rate: vec![0.3],
            // 1e9 blocks every split, leaving a constant score (AUC 0.5).
            min_child_weight: vec![1e9, 0.0],
            subsample: vec![],
        };
        let result = grid_search_cv(&x, &y, &subjects, &grid, 4, 11).unwrap();
        assert_eq!(result.best_params.min_child_weight, 0.0);
        assert!(result.best_score > 0.9, "score {}", result.best_score);
        assert_eq!(result.candidates.len(), 2);
        assert!((result.candidates[0].mean_score.unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ties_keep_grid_order() {
        let (x, y, subjects) = toy_rows(6, 4);
        let base = GbtParams {
            n_rounds: 5,
            learning_rate: 0.3,
            max_depth: 2,
            min_child_weight: 0.0,
            early_stopping_rounds: None,
            ..GbtParams::default()
        };
        // Cleanly separable folds give both learning rates AUC 1.0, an
        // exact tie; the earlier candidate must win.
        let grid = ParamGrid {
            base,
            max_depth: vec![],
            learning_rate: vec![0.3, 0.6],
            min_child_weight: vec![],
            subsample: vec![],
        };
        let result = grid_search_cv(&x, &y, &subjects, &grid, 3, 5).unwrap();
        let scores: Vec<_> = result
            .candidates
            .iter()
            .map(|c| c.mean_score.unwrap())
            .collect();
        assert_eq!(scores[0], scores[1], "expected an exact tie");
        assert_eq!(result.best_params.learning_rate, 0.3);
    }

    #[test]
    fn single_class_input_is_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        let y = vec![0, 0];
        let subjects = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            grid_search_cv(&x, &y, &subjects, &ParamGrid::default(), 2, 0),
            Err(Error::SingleClassLabels)
        ));
    }
}
