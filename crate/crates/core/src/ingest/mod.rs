//! Recording ingest: EDF and CSV readers plus dataset manifests.

mod edf;

pub use edf::{read_edf, write_edf, EdfHeader, EdfSignalHeader};

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multichannel time-domain EEG recording in physical units (microvolts).
/// Samples are channel-major: `samples[ch][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub channel_labels: Vec<String>,
    pub sample_rate_hz: f64,
    pub samples: Vec<Vec<f64>>,
    pub subject_id: String,
    pub dataset_id: String,
}

impl Recording {
    /// Build a recording, validating the type invariants: positive rate,
    /// at least one sample, equal per-channel lengths and channel labels
    /// unique after normalization.
    pub fn new(
        channel_labels: Vec<String>,
        sample_rate_hz: f64,
        samples: Vec<Vec<f64>>,
        subject_id: impl Into<String>,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        if channel_labels.len() != samples.len() {
            return Err(Error::MalformedHeader(format!(
                "{} labels for {} channels",
                channel_labels.len(),
                samples.len()
            )));
        }
        if channel_labels.is_empty() {
            return Err(Error::EmptyInput("recording has no channels".into()));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidRate(format!(
                "sample rate {sample_rate_hz} must be positive"
            )));
        }
        let n = samples[0].len();
        if n == 0 {
            return Err(Error::EmptyInput("recording has no samples".into()));
        }
        if samples.iter().any(|ch| ch.len() != n) {
            return Err(Error::MalformedHeader(
                "channels have unequal sample counts".into(),
            ));
        }
        let mut seen = HashSet::new();
        for label in &channel_labels {
            if !seen.insert(normalize_channel_label(label)) {
                return Err(Error::MalformedHeader(format!(
                    "duplicate channel label {label:?} after normalization"
                )));
            }
        }
        Ok(Recording {
            channel_labels,
            sample_rate_hz,
            samples,
            subject_id: subject_id.into(),
            dataset_id: dataset_id.into(),
        })
    }

    pub fn channel_count(&self) -> usize {
        self.samples.len()
    }

    pub fn sample_count(&self) -> usize {
        self.samples[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.sample_count() as f64 / self.sample_rate_hz
    }

    /// Index of `label` after normalizing both sides.
    pub fn channel_index(&self, label: &str) -> Option<usize> {
        let wanted = normalize_channel_label(label);
        self.channel_labels
            .iter()
            .position(|l| normalize_channel_label(l) == wanted)
    }
}

/// Canonical channel-label form: uppercase, "EEG " prefix dropped, reference
/// suffixes such as "-REF" or "-LE" dropped.
pub fn normalize_channel_label(label: &str) -> String {
    let mut s = label.trim().to_uppercase();
    if let Some(rest) = s.strip_prefix("EEG ") {
        s = rest.trim().to_string();
    }
    if let Some(dash) = s.find('-') {
        s.truncate(dash);
    }
    s.trim().to_string()
}

/// File format of a manifest entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordingFormat {
    #[serde(rename = "EDF", alias = "edf")]
    Edf,
    #[serde(rename = "CSV", alias = "csv")]
    Csv,
}

/// One dataset file with its subject assignment and labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub format: RecordingFormat,
    pub subject_id: String,
    pub class_label: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stress_ground_truth: Option<bool>,
    /// Required for CSV entries, ignored for EDF (the header carries it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
}

/// Subject/label/role assignment for a dataset on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub dataset_id: String,
    pub entries: Vec<ManifestEntry>,
    pub class_names: BTreeMap<u32, String>,
    /// Directory that relative entry paths resolve against. Set on load;
    /// not part of the serialized form.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Validate invariants: unique subject ids, every class label named.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.subject_id.as_str()) {
                return Err(Error::DuplicateSubject(entry.subject_id.clone()));
            }
            if !self.class_names.contains_key(&entry.class_label) {
                return Err(Error::UnknownClassLabel(entry.class_label));
            }
        }
        Ok(())
    }

    /// Subject counts per class label.
    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for entry in &self.entries {
            *counts.entry(entry.class_label).or_insert(0) += 1;
        }
        counts
    }

    /// Resolve an entry path against the manifest location.
    pub fn resolve_path(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Read the recording behind one entry; subject and dataset ids come
    /// from the manifest, not the file.
    pub fn load_recording(&self, entry: &ManifestEntry) -> Result<Recording> {
        let path = self.resolve_path(entry);
        let mut rec = match entry.format {
            RecordingFormat::Edf => read_edf(&path)?,
            RecordingFormat::Csv => {
                let rate = entry.sample_rate_hz.ok_or_else(|| {
                    Error::InvalidRate(format!(
                        "CSV entry {:?} needs sample_rate_hz",
                        entry.subject_id
                    ))
                })?;
                read_csv_recording(&path, rate, None)?
            }
        };
        rec.subject_id = entry.subject_id.clone();
        rec.dataset_id = self.dataset_id.clone();
        Ok(rec)
    }
}

/// Load and validate a manifest JSON document.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    if manifest.dataset_id.is_empty() {
        manifest.dataset_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    manifest.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

/// Write a manifest as JSON.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a row-per-sample CSV recording. The header row names channels.
/// When `channels` is given, columns are selected and reordered to match;
/// otherwise header order is kept.
pub fn read_csv_recording(
    path: &Path,
    sample_rate_hz: f64,
    channels: Option<&[String]>,
) -> Result<Recording> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::MalformedCsv {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::MalformedCsv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let wanted: Vec<String> = match channels {
        Some(list) => list.to_vec(),
        None => header.clone(),
    };
    let mut column_of = Vec::with_capacity(wanted.len());
    for name in &wanted {
        let norm = normalize_channel_label(name);
        let idx = header
            .iter()
            .position(|h| normalize_channel_label(h) == norm)
            .ok_or_else(|| Error::MissingChannel(name.clone()))?;
        column_of.push(idx);
    }

    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedCsv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for (out, &col) in column_of.iter().enumerate() {
            let cell = record.get(col).unwrap_or("").trim();
            let value: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                row: row_idx,
                column: wanted[out].clone(),
                value: cell.to_string(),
            })?;
            samples[out].push(value);
        }
    }

    Recording::new(wanted, sample_rate_hz, samples, "", "")
}

/// Write a recording as CSV (header row of channel labels, row per sample).
pub fn write_csv_recording(rec: &Recording, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::MalformedCsv {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    writer
        .write_record(&rec.channel_labels)
        .map_err(|e| Error::MalformedCsv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    for t in 0..rec.sample_count() {
        let row: Vec<String> = rec.samples.iter().map(|ch| ch[t].to_string()).collect();
        writer.write_record(&row).map_err(|e| Error::MalformedCsv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_normalization() {
        assert_eq!(normalize_channel_label("EEG Fp1-REF"), "FP1");
        assert_eq!(normalize_channel_label("Cz"), "CZ");
        assert_eq!(normalize_channel_label(" eeg O2-LE "), "O2");
        assert_eq!(normalize_channel_label("P3"), "P3");
    }

    #[test]
    fn recording_rejects_ragged_channels() {
        let err = Recording::new(
            vec!["C3".into(), "C4".into()],
            128.0,
            vec![vec![0.0; 10], vec![0.0; 9]],
            "s",
            "d",
        )
        .unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }

    #[test]
    fn recording_rejects_duplicate_labels_after_normalization() {
        let err = Recording::new(
            vec!["Fp1".into(), "EEG FP1-REF".into()],
            128.0,
            vec![vec![0.0; 4], vec![0.0; 4]],
            "s",
            "d",
        )
        .unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }

    #[test]
    fn manifest_validation() {
        let manifest = DatasetManifest {
            dataset_id: "d".into(),
            entries: vec![
                ManifestEntry {
                    path: "a.edf".into(),
                    format: RecordingFormat::Edf,
                    subject_id: "s1".into(),
                    class_label: 0,
                    stress_ground_truth: None,
                    sample_rate_hz: None,
                },
                ManifestEntry {
                    path: "b.edf".into(),
                    format: RecordingFormat::Edf,
                    subject_id: "s2".into(),
                    class_label: 1,
                    stress_ground_truth: Some(true),
                    sample_rate_hz: None,
                },
            ],
            class_names: [(0, "healthy".to_string()), (1, "rest".to_string())].into(),
            base_dir: PathBuf::new(),
        };
        manifest.validate().unwrap();

        let mut dup = manifest.clone();
        dup.entries[1].subject_id = "s1".into();
        assert!(matches!(dup.validate(), Err(Error::DuplicateSubject(_))));

        let mut unknown = manifest;
        unknown.entries[1].class_label = 7;
        assert!(matches!(
            unknown.validate(),
            Err(Error::UnknownClassLabel(7))
        ));
    }

    #[test]
    fn csv_round_trip_and_missing_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        let rec = Recording::new(
            vec!["C3".into(), "C4".into(), "CZ".into()],
            128.0,
            vec![
                vec![1.0, 2.0, 3.0, 4.0],
                vec![-1.0, -2.0, -3.0, -4.0],
                vec![0.5, 0.25, 0.125, 0.0625],
            ],
            "s1",
            "d",
        )
        .unwrap();
        write_csv_recording(&rec, &path).unwrap();

        let back = read_csv_recording(&path, 128.0, None).unwrap();
        assert_eq!(back.channel_labels, rec.channel_labels);
        assert_eq!(back.samples, rec.samples);

        let reordered =
            read_csv_recording(&path, 128.0, Some(&["CZ".to_string(), "C3".to_string()])).unwrap();
        assert_eq!(reordered.channel_labels, vec!["CZ", "C3"]);
        assert_eq!(reordered.samples[0], rec.samples[2]);

        let err = read_csv_recording(&path, 128.0, Some(&["T3".to_string()])).unwrap_err();
        assert!(matches!(err, Error::MissingChannel(_)));
    }

    #[test]
    fn csv_non_numeric_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "C3,C4\n1.0,2.0\nx,3.0\n").unwrap();
        let err = read_csv_recording(&path, 128.0, None).unwrap_err();
        assert!(matches!(err, Error::NonNumericCell { row: 1, .. }));
    }
}
