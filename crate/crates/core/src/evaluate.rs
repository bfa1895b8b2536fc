//! Evaluation: ROC AUC, subject-level probability aggregation, and
//! leave-one-subject-out cross-validation.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::gbt::{self, GbtParams};
use crate::parallel;

/// Area under the ROC curve by tie-aware rank counting: every
/// positive/negative pair contributes 1 if the positive scores higher,
/// 0.5 on an exact tie. Equivalent to the brute-force pairwise count.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParams("NaN score in AUC input".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut num = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_pos = 0usize;
        let mut group_neg = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_pos += 1;
            } else {
                group_neg += 1;
            }
            j += 1;
        }
        num += group_pos as f64 * (neg_below as f64 + 0.5 * group_neg as f64);
        neg_below += group_neg;
        i = j;
    }
    Ok(num / (n_pos as f64 * n_neg as f64))
}

/// Macro-averaged one-vs-rest AUC over the classes measurable in `y`
/// (both members and non-members present). None when no class qualifies.
pub fn macro_ovr_auc(probs: &[Vec<f64>], y: &[u32], classes: &[u32]) -> Option<f64> {
    let mut aucs = Vec::new();
    for (k, &class) in classes.iter().enumerate() {
        let labels: Vec<bool> = y.iter().map(|&v| v == class).collect();
        if labels.iter().any(|&b| b) && labels.iter().any(|&b| !b) {
            let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
            if let Ok(auc) = roc_auc(&scores, &labels) {
                aucs.push(auc);
            }
        }
    }
    if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    }
}

/// Collapse epoch-level probability vectors to one vector per subject:
/// the per-class mean, renormalized to sum to 1. Subjects keep their
/// first-appearance order.
pub fn subject_probability(
    probs: &[Vec<f64>],
    subjects: &[String],
) -> Result<Vec<(String, Vec<f64>)>> {
    if probs.len() != subjects.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            got: subjects.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput("no probability rows".into()));
    }
    let width = probs[0].len();
    let mut order: Vec<&String> = Vec::new();
    let mut sums: Vec<(Vec<f64>, usize)> = Vec::new();
    for (p, s) in probs.iter().zip(subjects) {
        if p.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: p.len(),
            });
        }
        let idx = match order.iter().position(|o| *o == s) {
            Some(i) => i,
            None => {
                order.push(s);
                sums.push((vec![0.0; width], 0));
                order.len() - 1
            }
        };
        for (acc, &v) in sums[idx].0.iter_mut().zip(p) {
            *acc += v;
        }
        sums[idx].1 += 1;
    }
    Ok(order
        .into_iter()
        .zip(sums)
        .map(|(s, (mut acc, count))| {
            for a in acc.iter_mut() {
                *a /= count as f64;
            }
            let total: f64 = acc.iter().sum();
            if total > 0.0 {
                for a in acc.iter_mut() {
                    *a /= total;
                }
            }
            (s.clone(), acc)
        })
        .collect())
}

/// Confusion counts, rows = true class, columns = predicted class, both in
/// `classes` order.
pub fn confusion_matrix(
    true_labels: &[u32],
    predicted: &[u32],
    classes: &[u32],
) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; classes.len()]; classes.len()];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        let (Some(ti), Some(pi)) = (
            classes.iter().position(|&c| c == t),
            classes.iter().position(|&c| c == p),
        ) else {
            continue;
        };
        m[ti][pi] += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub true_label: u32,
    pub predicted_label: u32,
    /// Aggregated class probabilities aligned with `LosoResult::classes`.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassAuc {
    pub class: u32,
    /// One-vs-rest AUC on subject-level probabilities; None if undefined.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoResult {
    pub classes: Vec<u32>,
    pub subjects: Vec<SubjectPrediction>,
    pub per_class_auc: Vec<PerClassAuc>,
    pub macro_auc: Option<f64>,
    pub accuracy: f64,
    /// Rows = true class, columns = predicted, in `classes` order.
    pub confusion: Vec<Vec<usize>>,
}

impl LosoResult {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("result serialization cannot fail");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_confusion_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let err = |e: std::io::Error| Error::MalformedCsv {
            path: "<writer>".into(),
            message: e.to_string(),
        };
        let header: Vec<String> = std::iter::once("true_label".to_string())
            .chain(self.classes.iter().map(|c| format!("pred_{c}")))
            .collect();
        writeln!(writer, "{}", header.join(",")).map_err(err)?;
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = std::iter::once(self.classes[i].to_string())
                .chain(row.iter().map(|v| v.to_string()))
                .collect();
            writeln!(writer, "{}", cells.join(",")).map_err(err)?;
        }
        Ok(())
    }

    pub fn save_confusion_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_confusion_csv(std::io::BufWriter::new(file))
    }
}

/// Leave-one-subject-out evaluation: one fold per subject, trained on all
/// other subjects' epochs. When early stopping is configured, each fold
/// carves its own per-class ~20% eval split out of the remaining training
/// subjects; the held-out subject's epochs never influence training. The
/// fold prediction is the subject-level aggregated probability.
pub fn loso(table: &FeatureTable, params: &GbtParams, seed: u64) -> Result<LosoResult> {
    params.validate()?;
    let subjects = table.subjects();
    if subjects.len() < 2 {
        return Err(Error::TooFewSubjects(subjects.len()));
    }
    let mut classes: Vec<u32> = table.labels();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClassLabels);
    }

    let x = table.values_matrix();
    let y = table.labels();
    let row_subjects = table.row_subjects();

    let folds = parallel::map_indices(subjects.len(), |fold_idx| -> Result<SubjectPrediction> {
        let held = &subjects[fold_idx];
        let mut train_rows = Vec::new();
        let mut test_rows = Vec::new();
        for (i, s) in row_subjects.iter().enumerate() {
            if s == held {
                test_rows.push(i);
            } else {
                train_rows.push(i);
            }
        }

        let (fit_rows, eval_rows) = if params.early_stopping_rounds.is_some() {
            let pairs: Vec<(String, u32)> = train_rows
                .iter()
                .map(|&i| (row_subjects[i].clone(), y[i]))
                .collect();
            let eval_subjects: HashSet<String> =
                gbt::cv::split_eval_subjects(&pairs, 0.2, seed.wrapping_add(fold_idx as u64))
                    .into_iter()
                    .collect();
            let (eval, fit): (Vec<usize>, Vec<usize>) = train_rows
                .iter()
                .partition(|&&i| eval_subjects.contains(&row_subjects[i]));
            let mut fit_classes: Vec<u32> = fit.iter().map(|&i| y[i]).collect();
            fit_classes.sort_unstable();
            fit_classes.dedup();
            if eval.is_empty() || fit_classes.len() < 2 {
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
            gbt::train(&fit_x, &fit_y, params, None)?
        } else {
            let (ex, ey) = gather(&eval_rows);
            gbt::train(&fit_x, &fit_y, params, Some((&ex, &ey)))?
        };

        let (test_x, test_y) = gather(&test_rows);
        let probs = model.predict_proba_batch(&test_x)?;
        let test_subjects: Vec<String> = test_rows
            .iter()
            .map(|&i| row_subjects[i].clone())
            .collect();
        let aggregated = subject_probability(&probs, &test_subjects)?;
        let (_, subject_probs) = &aggregated[0];

        // The fold model may have seen fewer classes than the cohort;
        // expand its probability vector onto the full class list.
        let mut full = vec![0.0; classes.len()];
        for (k, &class) in model.classes.iter().enumerate() {
            let pos = classes.iter().position(|&c| c == class).unwrap();
            full[pos] = subject_probs[k];
        }
        let predicted = classes[gbt::argmax(&full)];
        Ok(SubjectPrediction {
            subject_id: held.clone(),
            true_label: test_y[0],
            predicted_label: predicted,
            probabilities: full,
        })
    });

    let mut predictions = Vec::with_capacity(folds.len());
    for f in folds {
        predictions.push(f?);
    }

    let true_labels: Vec<u32> = predictions.iter().map(|p| p.true_label).collect();
    let predicted: Vec<u32> = predictions.iter().map(|p| p.predicted_label).collect();
    let mut per_class_auc = Vec::with_capacity(classes.len());
    for (k, &class) in classes.iter().enumerate() {
        let labels: Vec<bool> = true_labels.iter().map(|&v| v == class).collect();
        let auc = if labels.iter().any(|&b| b) && labels.iter().any(|&b| !b) {
            let scores: Vec<f64> = predictions.iter().map(|p| p.probabilities[k]).collect();
            roc_auc(&scores, &labels).ok()
        } else {
            None
        };
        per_class_auc.push(PerClassAuc { class, auc });
    }
    let defined: Vec<f64> = per_class_auc.iter().filter_map(|p| p.auc).collect();
    let macro_auc = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let accuracy = true_labels
        .iter()
        .zip(&predicted)
        .filter(|(t, p)| t == p)
        .count() as f64
        / true_labels.len() as f64;
    let confusion = confusion_matrix(&true_labels, &predicted, &classes);

    Ok(LosoResult {
        classes,
        subjects: predictions,
        per_class_auc,
        macro_auc,
        accuracy,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRow;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_matches_pairwise_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(5..60);
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..8) as f64) / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = pairwise_auc(&scores, &labels);
            assert_eq!(fast, slow, "scores {scores:?} labels {labels:?}");
        }
    }

    #[test]
    fn auc_known_values() {
        // Perfect separation.
        assert_eq!(
            roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        // Perfectly wrong.
        assert_eq!(
            roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(),
            0.0
        );
        // All tied.
        assert_eq!(
            roc_auc(&[0.5, 0.5, 0.5, 0.5], &[false, true, false, true]).unwrap(),
            0.5
        );
        assert!(matches!(
            roc_auc(&[0.5, 0.6], &[true, true]),
            Err(Error::SingleClassLabels)
        ));
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms() {
        let scores = vec![0.1, 0.4, 0.4, 0.7, 0.2, 0.9];
        let labels = vec![false, true, false, true, false, true];
        let base = roc_auc(&scores, &labels).unwrap();
        let scaled: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
        let logit: Vec<f64> = scores.iter().map(|s| (s / (1.0 - s)).ln()).collect();
        assert_eq!(roc_auc(&scaled, &labels).unwrap(), base);
        assert_eq!(roc_auc(&logit, &labels).unwrap(), base);
    }

    #[test]
    fn subject_probability_averages_and_renormalizes() {
        let probs = vec![
            vec![0.8, 0.2],
            vec![0.6, 0.4],
            vec![0.1, 0.9],
        ];
        let subjects = vec!["a".to_string(), "a".to_string(), "b".to_string()];
        let agg = subject_probability(&probs, &subjects).unwrap();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].0, "a");
        assert!((agg[0].1[0] - 0.7).abs() < 1e-12);
        assert!((agg[0].1[1] - 0.3).abs() < 1e-12);
        let sum: f64 = agg[1].1.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    fn synthetic_table(per_class: usize, epochs: usize, sep: f64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        for c in 0..2u32 {
            for s in 0..per_class {
                for e in 0..epochs {
                    let base = c as f64 * sep;
                    rows.push(FeatureRow {
                        subject_id: format!("c{c}s{s}"),
                        class_label: c,
                        epoch_index: e,
                        values: vec![
                            base + rng.gen_range(-0.3..0.3),
                            rng.gen_range(-1.0..1.0),
                        ],
                    });
                }
            }
        }
        FeatureTable {
            feature_names: vec!["signal".into(), "noise".into()],
            rows,
        }
    }

    fn loso_params() -> GbtParams {
        GbtParams {
            n_rounds: 15,
            learning_rate: 0.3,
            max_depth: 3,
            min_child_weight: 0.0,
            early_stopping_rounds: None,
            ..GbtParams::default()
        }
    }

    #[test]
    fn loso_recovers_separable_classes() {
        let table = synthetic_table(5, 8, 2.0);
        let result = loso(&table, &loso_params(), 3).unwrap();
        assert_eq!(result.subjects.len(), 10);
        // One prediction per subject, in first-appearance order.
        let ids: Vec<&str> = result.subjects.iter().map(|s| s.subject_id.as_str()).collect();
        assert_eq!(ids, table.subjects().iter().map(String::as_str).collect::<Vec<_>>());
        assert!(result.accuracy > 0.9, "accuracy {}", result.accuracy);
        assert_eq!(result.macro_auc, Some(1.0));
        // Confusion totals match the cohort.
        let total: usize = result.confusion.iter().flatten().sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn loso_with_early_stopping_runs() {
        let table = synthetic_table(6, 6, 2.0);
        let params = GbtParams {
            n_rounds: 100,
            early_stopping_rounds: Some(5),
            ..loso_params()
        };
        let result = loso(&table, &params, 7).unwrap();
        assert!(result.accuracy > 0.8);
    }

    #[test]
    fn loso_is_deterministic() {
        let table = synthetic_table(4, 5, 1.0);
        let a = loso(&table, &loso_params(), 11).unwrap();
        let b = loso(&table, &loso_params(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loso_rejects_degenerate_cohorts() {
        let table = synthetic_table(1, 4, 1.0);
        // Two subjects, one per class: each fold would train single-class.
        assert!(loso(&table, &loso_params(), 0).is_err());
        let single = table.filter_subjects(|s| s.starts_with("c0"));
        assert!(matches!(
            loso(&single, &loso_params(), 0),
            Err(Error::TooFewSubjects(1)) | Err(Error::SingleClassLabels)
        ));
    }

    #[test]
    fn confusion_csv_layout() {
        let result = LosoResult {
            classes: vec![0, 1],
            subjects: Vec::new(),
            per_class_auc: vec![
                PerClassAuc { class: 0, auc: Some(1.0) },
                PerClassAuc { class: 1, auc: Some(1.0) },
            ],
            macro_auc: Some(1.0),
            accuracy: 1.0,
            confusion: vec![vec![3, 1], vec![0, 4]],
        };
        let mut buf = Vec::new();
        result.write_confusion_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "true_label,pred_0,pred_1\n0,3,1\n1,0,4\n");
    }
}
