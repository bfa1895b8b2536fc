//! Acute-stress screening and band-power correction: flag subjects whose
//! aggregated stress probability exceeds a threshold, estimate per-feature
//! stress offsets, and subtract them from flagged subjects' features.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::subject_probability;
use crate::features::FeatureTable;
use crate::gbt::GbtModel;

pub const DEFAULT_STRESS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStress {
    pub subject_id: String,
    /// Aggregated probability of the stressed class.
    pub probability: f64,
    /// True only when probability exceeds the threshold strictly.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub threshold: f64,
    pub subjects: Vec<SubjectStress>,
}

impl StressReport {
    pub fn flagged_subjects(&self) -> Vec<String> {
        self.subjects
            .iter()
            .filter(|s| s.flagged)
            .map(|s| s.subject_id.clone())
            .collect()
    }

    pub fn n_flagged(&self) -> usize {
        self.subjects.iter().filter(|s| s.flagged).count()
    }

    /// Subject ids sorted by ascending stress probability (ties keep
    /// screening order).
    pub fn calmest_first(&self) -> Vec<String> {
        let mut order: Vec<usize> = (0..self.subjects.len()).collect();
        order.sort_by(|&a, &b| {
            self.subjects[a]
                .probability
                .partial_cmp(&self.subjects[b].probability)
                .unwrap()
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .map(|i| self.subjects[i].subject_id.clone())
            .collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Score every subject in `table` with a binary stress model and flag the
/// ones whose aggregated stressed-class probability is strictly above
/// `threshold`. A probability exactly equal to the threshold is not
/// flagged.
pub fn screen(model: &GbtModel, table: &FeatureTable, threshold: f64) -> Result<StressReport> {
    if model.n_classes() != 2 {
        return Err(Error::InvalidSpec(format!(
            "stress screening needs a binary model, got {} classes",
            model.n_classes()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidSpec(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    if table.rows.is_empty() {
        return Err(Error::EmptyInput("no rows to screen".into()));
    }
    let probs = model.predict_proba_batch(&table.values_matrix())?;
    let row_subjects = table.row_subjects();
    let aggregated = subject_probability(&probs, &row_subjects)?;
    let subjects = aggregated
        .into_iter()
        .map(|(subject_id, p)| SubjectStress {
            subject_id,
            probability: p[1],
            flagged: p[1] > threshold,
        })
        .collect();
    Ok(StressReport {
        threshold,
        subjects,
    })
}

/// Per-feature stress offset: mean over stressed epochs minus mean over
/// non-stressed epochs, in feature (log power) units.
pub fn stress_coefficient(
    stressed: &FeatureTable,
    nonstressed: &FeatureTable,
) -> Result<Vec<f64>> {
    if stressed.feature_names != nonstressed.feature_names {
        return Err(Error::FeatureMismatch);
    }
    if stressed.rows.is_empty() {
        return Err(Error::EmptyGroup("stressed".into()));
    }
    if nonstressed.rows.is_empty() {
        return Err(Error::EmptyGroup("nonstressed".into()));
    }
    let mean = |t: &FeatureTable| -> Vec<f64> {
        let n = t.rows.len() as f64;
        let mut acc = vec![0.0; t.n_features()];
        for row in &t.rows {
            for (a, &v) in acc.iter_mut().zip(&row.values) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= n;
        }
        acc
    };
    let ms = mean(stressed);
    let mn = mean(nonstressed);
    Ok(ms.iter().zip(&mn).map(|(s, n)| s - n).collect())
}

/// Everything needed to reproduce (or audit) an adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressAdjustment {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub adjusted_subjects: Vec<String>,
}

impl StressAdjustment {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serialization cannot fail");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Subtract the stress coefficients from every epoch of the selected
/// subjects, leaving all other rows untouched. Every selected subject must
/// appear in the table.
pub fn adjust(
    table: &FeatureTable,
    coefficients: &[f64],
    subjects: &[String],
) -> Result<FeatureTable> {
    if coefficients.len() != table.n_features() {
        return Err(Error::DimensionMismatch {
            expected: table.n_features(),
            got: coefficients.len(),
        });
    }
    let present: HashSet<&str> = table.rows.iter().map(|r| r.subject_id.as_str()).collect();
    for s in subjects {
        if !present.contains(s.as_str()) {
            return Err(Error::UnknownSubject(s.clone()));
        }
    }
    let selected: HashSet<&str> = subjects.iter().map(String::as_str).collect();
    let mut out = table.clone();
    for row in &mut out.rows {
        if selected.contains(row.subject_id.as_str()) {
            for (v, &c) in row.values.iter_mut().zip(coefficients) {
                *v -= c;
            }
        }
    }
    Ok(out)
}
