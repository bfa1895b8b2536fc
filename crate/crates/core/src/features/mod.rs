//! Band-power features: log10 power per frequency band, averaged over
//! scalp regions, one row per epoch.

pub mod welch;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{self, Epoch, PipelineConfig};
use crate::error::{Error, Result};
use crate::ingest::{normalize_channel_label, DatasetManifest};
use crate::parallel;

pub use welch::{welch_psd, PsdEstimate};

/// Additive floor inside the log so silent bands stay finite.
pub const LOG_POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDefinition {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl BandDefinition {
    pub fn new(name: &str, lo_hz: f64, hi_hz: f64) -> Self {
        BandDefinition {
            name: name.to_string(),
            lo_hz,
            hi_hz,
        }
    }
}

/// The five classic EEG bands, gamma capped at the bandpass edge.
pub fn standard_bands() -> Vec<BandDefinition> {
    vec![
        BandDefinition::new("delta", 0.5, 4.0),
        BandDefinition::new("theta", 4.0, 8.0),
        BandDefinition::new("alpha", 8.0, 12.0),
        BandDefinition::new("beta", 12.0, 30.0),
        BandDefinition::new("gamma", 30.0, 45.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub channels: Vec<String>,
}

impl Region {
    pub fn new(name: &str, channels: &[&str]) -> Self {
        Region {
            name: name.to_string(),
            channels: channels.iter().map(|c| c.to_string()).collect(),
        }
    }
}

/// Scalp regions over the standard 14-channel montage.
pub fn standard_regions() -> Vec<Region> {
    vec![
        Region::new("frontal", &["FP1", "FP2", "F3", "F4", "F7", "F8"]),
        Region::new("central", &["C3", "C4", "CZ"]),
        Region::new("parietal", &["P3", "P4", "PZ"]),
        Region::new("occipital", &["O1", "O2"]),
    ]
}

/// Region-major feature names: frontal_delta, frontal_theta, ...,
/// occipital_gamma.
pub fn feature_names(regions: &[Region], bands: &[BandDefinition]) -> Vec<String> {
    let mut names = Vec::with_capacity(regions.len() * bands.len());
    for region in regions {
        for band in bands {
            names.push(format!("{}_{}", region.name, band.name));
        }
    }
    names
}

/// Integrated power in [lo, hi): sum of density bins times bin width.
pub fn band_power(psd: &PsdEstimate, band: &BandDefinition) -> Result<f64> {
    let df = psd.bin_width_hz();
    let mut power = 0.0;
    let mut bins = 0usize;
    for (&f, &d) in psd.freqs_hz.iter().zip(&psd.density) {
        if f >= band.lo_hz && f < band.hi_hz {
            power += d * df;
            bins += 1;
        }
    }
    if bins == 0 {
        return Err(Error::EmptyBand {
            name: band.name.clone(),
            lo: band.lo_hz,
            hi: band.hi_hz,
        });
    }
    Ok(power)
}

/// One feature vector for one epoch: for every region x band, the mean over
/// the region's channels of log10(band power + floor).
pub fn region_band_features(
    epoch: &Epoch,
    channel_labels: &[String],
    regions: &[Region],
    bands: &[BandDefinition],
    segment_s: f64,
) -> Result<Vec<f64>> {
    let find = |label: &str| -> Result<usize> {
        let want = normalize_channel_label(label);
        channel_labels
            .iter()
            .position(|l| normalize_channel_label(l) == want)
            .ok_or_else(|| Error::MissingChannel(label.to_string()))
    };

    let mut features = Vec::with_capacity(regions.len() * bands.len());
    for region in regions {
        if region.channels.is_empty() {
            return Err(Error::EmptyGroup(region.name.clone()));
        }
        // log per channel first, then average across the region.
        let mut sums = vec![0.0; bands.len()];
        for label in &region.channels {
            let idx = find(label)?;
            let psd = welch_psd(&epoch.channels[idx], epoch.sample_rate_hz, segment_s)?;
            for (s, band) in sums.iter_mut().zip(bands) {
                *s += (band_power(&psd, band)? + LOG_POWER_FLOOR).log10();
            }
        }
        for s in &sums {
            features.push(s / region.channels.len() as f64);
        }
    }
    Ok(features)
}

/// One epoch's features plus its identifying metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub class_label: u32,
    pub epoch_index: usize,
    pub values: Vec<f64>,
}

/// All epochs of a dataset in manifest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Unique subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.subject_id) {
                seen.push(row.subject_id.clone());
            }
        }
        seen
    }

    pub fn label_of(&self, subject_id: &str) -> Option<u32> {
        self.rows
            .iter()
            .find(|r| r.subject_id == subject_id)
            .map(|r| r.class_label)
    }

    /// Map of subject id to class label, in subject order.
    pub fn subject_labels(&self) -> BTreeMap<String, u32> {
        self.rows
            .iter()
            .map(|r| (r.subject_id.clone(), r.class_label))
            .collect()
    }

    /// Keep only rows whose subject passes the predicate.
    pub fn filter_subjects<F: Fn(&str) -> bool>(&self, keep: F) -> FeatureTable {
        FeatureTable {
            feature_names: self.feature_names.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| keep(&r.subject_id))
                .cloned()
                .collect(),
        }
    }

    /// Same rows with class labels replaced per subject. Every subject in
    /// the table must be present in `labels`.
    pub fn with_labels(&self, labels: &BTreeMap<String, u32>) -> Result<FeatureTable> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let &label = labels
                .get(&row.subject_id)
                .ok_or_else(|| Error::UnknownSubject(row.subject_id.clone()))?;
            let mut row = row.clone();
            row.class_label = label;
            rows.push(row);
        }
        Ok(FeatureTable {
            feature_names: self.feature_names.clone(),
            rows,
        })
    }

    /// Append another table's rows; the feature sets must be identical.
    pub fn merge(&mut self, other: &FeatureTable) -> Result<()> {
        if self.feature_names != other.feature_names {
            return Err(Error::FeatureMismatch);
        }
        self.rows.extend(other.rows.iter().cloned());
        Ok(())
    }

    pub fn values_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.class_label).collect()
    }

    pub fn row_subjects(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.subject_id.clone()).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "subject_id".to_string(),
            "class_label".to_string(),
            "epoch_index".to_string(),
        ];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)
            .map_err(|e| Error::MalformedCsv {
                path: "<writer>".into(),
                message: e.to_string(),
            })?;
        for row in &self.rows {
            let mut record = vec![
                row.subject_id.clone(),
                row.class_label.to_string(),
                row.epoch_index.to_string(),
            ];
            record.extend(row.values.iter().map(|v| format!("{v}")));
            w.write_record(&record).map_err(|e| Error::MalformedCsv {
                path: "<writer>".into(),
                message: e.to_string(),
            })?;
        }
        w.flush().map_err(|e| Error::MalformedCsv {
            path: "<writer>".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureTable> {
        Self::read_csv_named(reader, "<reader>")
    }

    fn read_csv_named<R: Read>(reader: R, path: &str) -> Result<FeatureTable> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r
            .headers()
            .map_err(|e| Error::MalformedCsv {
                path: path.into(),
                message: e.to_string(),
            })?
            .clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 4
            || cols[0] != "subject_id"
            || cols[1] != "class_label"
            || cols[2] != "epoch_index"
        {
            return Err(Error::MalformedCsv {
                path: path.into(),
                message: "expected header subject_id,class_label,epoch_index,<features>".into(),
            });
        }
        let feature_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();

        let mut rows = Vec::new();
        for (i, record) in r.records().enumerate() {
            let record = record.map_err(|e| Error::MalformedCsv {
                path: path.into(),
                message: e.to_string(),
            })?;
            if record.len() != 3 + feature_names.len() {
                return Err(Error::MalformedCsv {
                    path: path.into(),
                    message: format!(
                        "row {} has {} columns, expected {}",
                        i + 2,
                        record.len(),
                        3 + feature_names.len()
                    ),
                });
            }
            let parse_num = |col: usize, value: &str| -> Result<f64> {
                value.trim().parse::<f64>().map_err(|_| Error::NonNumericCell {
                    row: i + 2,
                    column: cols[col].to_string(),
                    value: value.to_string(),
                })
            };
            let class_label = record[1].trim().parse::<u32>().map_err(|_| {
                Error::NonNumericCell {
                    row: i + 2,
                    column: "class_label".into(),
                    value: record[1].to_string(),
                }
            })?;
            let epoch_index = record[2].trim().parse::<usize>().map_err(|_| {
                Error::NonNumericCell {
                    row: i + 2,
                    column: "epoch_index".into(),
                    value: record[2].to_string(),
                }
            })?;
            let mut values = Vec::with_capacity(feature_names.len());
            for (j, v) in record.iter().enumerate().skip(3) {
                values.push(parse_num(j, v)?);
            }
            rows.push(FeatureRow {
                subject_id: record[0].to_string(),
                class_label,
                epoch_index,
                values,
            });
        }
        Ok(FeatureTable {
            feature_names,
            rows,
        })
    }

    pub fn load_csv(path: &Path) -> Result<FeatureTable> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_named(std::io::BufReader::new(file), &path.display().to_string())
    }
}

/// Condition and featurize every recording in a manifest. Rows come out in
/// manifest order, then epoch order within each recording.
pub fn build_feature_table(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
) -> Result<FeatureTable> {
    config.validate()?;
    let regions = standard_regions();
    let bands = standard_bands();
    let names = feature_names(&regions, &bands);

    let per_entry = parallel::map_collect(&manifest.entries, |entry| -> Result<Vec<FeatureRow>> {
        let rec = manifest.load_recording(entry)?;
        let rec = dsp::standardize(&rec, config)?;
        let epochs = dsp::epoch(&rec, config.epoch_s, config.epoch_overlap)?;
        let mut rows = Vec::with_capacity(epochs.len());
        for ep in &epochs {
            let values = region_band_features(
                ep,
                &rec.channel_labels,
                &regions,
                &bands,
                config.welch_segment_s,
            )?;
            rows.push(FeatureRow {
                subject_id: entry.subject_id.clone(),
                class_label: entry.class_label,
                epoch_index: ep.index,
                values,
            });
        }
        Ok(rows)
    });

    let mut rows = Vec::new();
    for r in per_entry {
        rows.extend(r?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("no epochs produced from manifest".into()));
    }
    Ok(FeatureTable {
        feature_names: names,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_region_major() {
        let names = feature_names(&standard_regions(), &standard_bands());
        assert_eq!(names.len(), 20);
        assert_eq!(names[0], "frontal_delta");
        assert_eq!(names[4], "frontal_gamma");
        assert_eq!(names[5], "central_delta");
        assert_eq!(names[19], "occipital_gamma");
    }

    #[test]
    fn flat_density_band_powers() {
        // Density of exactly 1 over 0..64 Hz at 0.25 Hz spacing.
        let psd = PsdEstimate {
            freqs_hz: (0..257).map(|k| k as f64 * 0.25).collect(),
            density: vec![1.0; 257],
        };
        let expected = [3.5, 4.0, 4.0, 18.0, 15.0];
        for (band, &want) in standard_bands().iter().zip(&expected) {
            let got = band_power(&psd, band).unwrap();
            assert!(
                (got - want).abs() < 1e-12,
                "{}: got {got}, want {want}",
                band.name
            );
        }
    }

    #[test]
    fn band_with_no_bins_is_an_error() {
        let psd = PsdEstimate {
            freqs_hz: (0..257).map(|k| k as f64 * 0.25).collect(),
            density: vec![1.0; 257],
        };
        let band = BandDefinition::new("sliver", 10.05, 10.20);
        assert!(matches!(
            band_power(&psd, &band),
            Err(Error::EmptyBand { .. })
        ));
    }

    #[test]
    fn tone_shows_up_in_its_region_band() {
        use crate::dsp::{Epoch, STANDARD_CHANNELS};
        let rate = 128.0;
        let n = 768;
        let labels: Vec<String> = STANDARD_CHANNELS.iter().map(|s| s.to_string()).collect();
        let channels: Vec<Vec<f64>> = labels
            .iter()
            .map(|label| {
                (0..n)
                    .map(|i| {
                        let t = i as f64 / rate;
                        if label == "O1" || label == "O2" {
                            2.0 * (2.0 * std::f64::consts::PI * 10.0 * t).sin()
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let ep = Epoch {
            index: 0,
            start_sample: 0,
            channels,
            sample_rate_hz: rate,
        };
        let regions = standard_regions();
        let bands = standard_bands();
        let values =
            region_band_features(&ep, &labels, &regions, &bands, 4.0).unwrap();
        let names = feature_names(&regions, &bands);
        let idx = names.iter().position(|n| n == "occipital_alpha").unwrap();
        // Power of a 10 Hz tone with amplitude 2 is 2; log10(2) = 0.301.
        assert!(
            (values[idx] - 2.0_f64.log10()).abs() < 0.02,
            "occipital_alpha = {}",
            values[idx]
        );
        // Silent channels sit at the log floor.
        let frontal = names.iter().position(|n| n == "frontal_alpha").unwrap();
        assert!((values[frontal] - (-12.0)).abs() < 1e-6);
    }

    fn toy_table() -> FeatureTable {
        FeatureTable {
            feature_names: vec!["a".into(), "b".into()],
            rows: vec![
                FeatureRow {
                    subject_id: "s1".into(),
                    class_label: 0,
                    epoch_index: 0,
                    values: vec![0.125, -3.5],
                },
                FeatureRow {
                    subject_id: "s1".into(),
                    class_label: 0,
                    epoch_index: 1,
                    values: vec![0.5, 2.25],
                },
                FeatureRow {
                    subject_id: "s2".into(),
                    class_label: 1,
                    epoch_index: 0,
                    values: vec![1e-9, 7.0],
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let table = toy_table();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("subject_id,class_label,epoch_index,a,b\n"));
        let back = FeatureTable::read_csv(&buf[..]).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn csv_rejects_non_numeric_cells() {
        let text = "subject_id,class_label,epoch_index,a\ns1,0,0,oops\n";
        match FeatureTable::read_csv(text.as_bytes()) {
            Err(Error::NonNumericCell { row, column, value }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
                assert_eq!(value, "oops");
            }
            other => panic!("expected NonNumericCell, got {other:?}"),
        }
    }

    #[test]
    fn relabeling_and_filtering() {
        let table = toy_table();
        assert_eq!(table.subjects(), vec!["s1".to_string(), "s2".to_string()]);
        let mut labels = BTreeMap::new();
        labels.insert("s1".to_string(), 5u32);
        labels.insert("s2".to_string(), 6u32);
        let relabeled = table.with_labels(&labels).unwrap();
        assert_eq!(relabeled.labels(), vec![5, 5, 6]);

        labels.remove("s2");
        assert!(matches!(
            table.with_labels(&labels),
            Err(Error::UnknownSubject(ref s)) if s == "s2"
        ));

        let only_s2 = table.filter_subjects(|s| s == "s2");
        assert_eq!(only_s2.rows.len(), 1);
        assert_eq!(only_s2.rows[0].subject_id, "s2");
    }

    #[test]
    fn merge_requires_matching_features() {
        let mut a = toy_table();
        let b = toy_table();
        a.merge(&b).unwrap();
        assert_eq!(a.rows.len(), 6);
        let mut c = toy_table();
        let mut d = toy_table();
        d.feature_names[1] = "z".into();
        assert!(matches!(c.merge(&d), Err(Error::FeatureMismatch)));
    }
}
