//! Synthetic EEG cohorts: per-channel sums of band-limited Gaussian noise
//! hitting prescribed band-power targets, over a 1/f background, written
//! out as EDF files plus a dataset manifest with stress ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{design_butterworth_bandpass, STANDARD_CHANNELS};
use crate::error::{Error, Result};
use crate::features::{standard_bands, standard_regions};
use crate::ingest::{save_manifest, write_edf, DatasetManifest, ManifestEntry, Recording, RecordingFormat};
use crate::parallel;

/// Band-power targets per region: region name -> band name -> power (uV^2).
pub type BandPowerMap = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: u32,
    pub name: String,
    pub count: usize,
    pub band_power: BandPowerMap,
    /// Fraction of this class's subjects generated in the stressed state.
    #[serde(default)]
    pub stress_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub dataset_id: String,
    pub classes: Vec<ClassSpec>,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    /// log10 power shift applied to stressed subjects, region -> band.
    /// Missing entries mean no shift.
    #[serde(default)]
    pub stress_offset: BandPowerMap,
    /// Standard deviation (log10 units) of per-subject band-power jitter.
    #[serde(default = "default_jitter")]
    pub subject_jitter: f64,
    /// 1/f background level relative to the channel's summed band power.
    #[serde(default = "default_background_db")]
    pub background_db: f64,
}

fn default_jitter() -> f64 {
    0.05
}

fn default_background_db() -> f64 {
    -20.0
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidSpec("cohort needs at least one class".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::InvalidSpec("duration_s must be positive".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidRate(format!(
                "sample rate {}",
                self.sample_rate_hz
            )));
        }
        let bands = standard_bands();
        if let Some(b) = bands.last() {
            if b.hi_hz >= self.sample_rate_hz / 2.0 {
                return Err(Error::InvalidRate(format!(
                    "sample rate {} cannot carry the {} band",
                    self.sample_rate_hz, b.name
                )));
            }
        }
        let mut labels: Vec<u32> = self.classes.iter().map(|c| c.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.classes.len() {
            return Err(Error::InvalidSpec("duplicate class labels".into()));
        }
        for class in &self.classes {
            if class.count == 0 {
                return Err(Error::InvalidSpec(format!(
                    "class {} has zero subjects",
                    class.name
                )));
            }
            if !(0.0..=1.0).contains(&class.stress_fraction) {
                return Err(Error::InvalidSpec(format!(
                    "class {} stress_fraction {} outside [0, 1]",
                    class.name, class.stress_fraction
                )));
            }
            for region in standard_regions() {
                let region_map = class.band_power.get(&region.name).ok_or_else(|| {
                    Error::InvalidSpec(format!(
                        "class {} missing band powers for region {}",
                        class.name, region.name
                    ))
                })?;
                for band in &bands {
                    let power = region_map.get(&band.name).ok_or_else(|| {
                        Error::InvalidSpec(format!(
                            "class {} region {} missing band {}",
                            class.name, region.name, band.name
                        ))
                    })?;
                    if !(power.is_finite() && *power > 0.0) {
                        return Err(Error::InvalidSpec(format!(
                            "class {} region {} band {} power {power} must be positive",
                            class.name, region.name, band.name
                        )));
                    }
                }
            }
        }
        if !(self.subject_jitter >= 0.0) {
            return Err(Error::InvalidSpec("subject_jitter must be >= 0".into()));
        }
        Ok(())
    }
}

/// SplitMix64 mixing step; spreads sequential cohort seeds into
/// independent per-subject streams.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gaussian noise confined to [lo, hi] Hz, scaled to unit variance.
fn unit_band_noise(
    rng: &mut ChaCha8Rng,
    n: usize,
    rate: f64,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>> {
    let white: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let filt = design_butterworth_bandpass(lo, hi, 4, rate)?;
    let mut shaped = filt.filtfilt(&white);
    normalize_variance(&mut shaped);
    Ok(shaped)
}

/// 1/f-power noise above `lo` Hz, scaled to unit variance, synthesized in
/// the frequency domain with random phases.
fn unit_pink_noise(rng: &mut ChaCha8Rng, n: usize, rate: f64, lo: f64) -> Vec<f64> {
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..=half {
        let f = k as f64 * rate / n as f64;
        if f < lo {
            continue;
        }
        let amp = 1.0 / f.sqrt();
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let c = if n.is_multiple_of(2) && k == half {
            Complex::new(amp, 0.0) // Nyquist bin must stay real
        } else {
            Complex::from_polar(amp, phase)
        };
        spectrum[k] = c;
        if k != 0 && k != n - k {
            spectrum[n - k] = c.conj();
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re / n as f64).collect();
    normalize_variance(&mut out);
    out
}

fn normalize_variance(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        let scale = 1.0 / var.sqrt();
        for v in x.iter_mut() {
            *v = (*v - mean) * scale;
        }
    }
}

/// Generate one subject's recording. Band powers are the class targets
/// shifted by per-subject jitter and, when `stressed`, by the cohort's
/// stress offset (both in log10 units).
pub fn synth_recording(
    spec: &CohortSpec,
    class: &ClassSpec,
    subject_id: &str,
    subject_seed: u64,
    stressed: bool,
) -> Result<Recording> {
    let n = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    if n == 0 {
        return Err(Error::InvalidSpec("recording would be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    let regions = standard_regions();
    let bands = standard_bands();

    // Subject-level power targets, drawn in a fixed region/band order.
    let mut targets: BTreeMap<(String, String), f64> = BTreeMap::new();
    for region in &regions {
        for band in &bands {
            let base = class.band_power[&region.name][&band.name];
            let jitter: f64 = if spec.subject_jitter > 0.0 {
                rng.sample::<f64, _>(StandardNormal) * spec.subject_jitter
            } else {
                0.0
            };
            let offset = if stressed {
                spec.stress_offset
                    .get(&region.name)
                    .and_then(|m| m.get(&band.name))
                    .copied()
                    .unwrap_or(0.0)
            } else {
                0.0
            };
            let power = base * 10f64.powf(jitter + offset);
            targets.insert((region.name.clone(), band.name.clone()), power);
        }
    }

    let region_of = |channel: &str| -> &str {
        regions
            .iter()
            .find(|r| r.channels.iter().any(|c| c == channel))
            .map(|r| r.name.as_str())
            .expect("standard channel belongs to a region")
    };

    let background_rel = 10f64.powf(spec.background_db / 10.0);
    let mut samples = Vec::with_capacity(STANDARD_CHANNELS.len());
    for channel in STANDARD_CHANNELS {
        let region = region_of(channel);
        let mut wave = vec![0.0; n];
        let mut total_power = 0.0;
        for band in &bands {
            let power = targets[&(region.to_string(), band.name.clone())];
            total_power += power;
            let noise = unit_band_noise(&mut rng, n, spec.sample_rate_hz, band.lo_hz, band.hi_hz)?;
            let scale = power.sqrt();
            for (w, v) in wave.iter_mut().zip(&noise) {
                *w += scale * v;
            }
        }
        let background = unit_pink_noise(&mut rng, n, spec.sample_rate_hz, bands[0].lo_hz);
        let scale = (background_rel * total_power).sqrt();
        for (w, v) in wave.iter_mut().zip(&background) {
            *w += scale * v;
        }
        samples.push(wave);
    }

    Recording::new(
        STANDARD_CHANNELS.iter().map(|s| s.to_string()).collect(),
        spec.sample_rate_hz,
        samples,
        subject_id.to_string(),
        spec.dataset_id.clone(),
    )
}

/// Which subjects of one class are generated stressed:
/// round(stress_fraction * count) of them, drawn by seeded shuffle.
fn stressed_indices(class: &ClassSpec, seed: u64) -> Vec<bool> {
    let n_stressed = (class.stress_fraction * class.count as f64).round() as usize;
    let mut order: Vec<usize> = (0..class.count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut flags = vec![false; class.count];
    for &i in order.iter().take(n_stressed) {
        flags[i] = true;
    }
    flags
}

/// Generate every subject, write EDFs plus `manifest.json` into `out_dir`,
/// and return the manifest. Fully deterministic for a given spec.
pub fn synth_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    struct Job {
        class_idx: usize,
        subject_id: String,
        file_name: String,
        seed: u64,
        stressed: bool,
        label: u32,
    }

    let mut jobs = Vec::new();
    let mut global_idx = 0u64;
    for (class_idx, class) in spec.classes.iter().enumerate() {
        let stressed = stressed_indices(
            class,
            splitmix64(spec.seed ^ (0xA5A5_0000 + class.label as u64)),
        );
        for (k, &is_stressed) in stressed.iter().enumerate() {
            let subject_id = format!("{}_{:03}", class.name, k);
            jobs.push(Job {
                class_idx,
                subject_id: subject_id.clone(),
                file_name: format!("{subject_id}.edf"),
                seed: splitmix64(spec.seed.wrapping_add(global_idx + 1)),
                stressed: is_stressed,
                label: class.label,
            });
            global_idx += 1;
        }
    }

    let results = parallel::map_collect(&jobs, |job| -> Result<(Recording, ManifestEntry)> {
        let rec = synth_recording(
            spec,
            &spec.classes[job.class_idx],
            &job.subject_id,
            job.seed,
            job.stressed,
        )?;
        let entry = ManifestEntry {
            path: job.file_name.clone().into(),
            format: RecordingFormat::Edf,
            subject_id: job.subject_id.clone(),
            class_label: job.label,
            stress_ground_truth: Some(job.stressed),
            sample_rate_hz: None,
        };
        Ok((rec, entry))
    });

    let mut entries = Vec::with_capacity(jobs.len());
    for r in results {
        let (rec, entry) = r?;
        write_edf(&rec, &out_dir.join(&entry.path))?;
        entries.push(entry);
    }

    let manifest = DatasetManifest {
        dataset_id: spec.dataset_id.clone(),
        entries,
        class_names: spec
            .classes
            .iter()
            .map(|c| (c.label, c.name.clone()))
            .collect(),
        base_dir: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    save_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Uniform band-power map: every region gets the same per-band targets.
pub fn uniform_band_power(per_band: &[(&str, f64)]) -> BandPowerMap {
    let mut map = BandPowerMap::new();
    for region in standard_regions() {
        let inner: BTreeMap<String, f64> = per_band
            .iter()
            .map(|(b, p)| (b.to_string(), *p))
            .collect();
        map.insert(region.name.clone(), inner);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{self, PipelineConfig};
    use crate::features::{build_feature_table, feature_names, region_band_features};

    fn base_spec(count: usize, seed: u64) -> CohortSpec {
        CohortSpec {
            dataset_id: "synthetic".into(),
            classes: vec![ClassSpec {
                label: 0,
                name: "control".into(),
                count,
                band_power: uniform_band_power(&[
                    ("delta", 20.0),
                    ("theta", 10.0),
                    ("alpha", 15.0),
                    ("beta", 5.0),
                    ("gamma", 2.0),
                ]),
                stress_fraction: 0.0,
            }],
            duration_s: 60.0,
            sample_rate_hz: 200.0,
            seed,
            stress_offset: BandPowerMap::new(),
            subject_jitter: 0.0,
            background_db: -20.0,
        }
    }

    #[test]
    fn recordings_are_deterministic() {
        let spec = base_spec(1, 7);
        let a = synth_recording(&spec, &spec.classes[0], "s0", 123, false).unwrap();
        let b = synth_recording(&spec, &spec.classes[0], "s0", 123, false).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = synth_recording(&spec, &spec.classes[0], "s0", 124, false).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn generated_powers_survive_the_pipeline() {
        let mut spec = base_spec(1, 42);
        // Make one region clearly different so region mixing would show.
        spec.classes[0]
            .band_power
            .get_mut("occipital")
            .unwrap()
            .insert("alpha".into(), 60.0);
        let rec = synth_recording(&spec, &spec.classes[0], "s0", 99, false).unwrap();
        let conditioned = dsp::standardize(&rec, &PipelineConfig::default()).unwrap();
        let epochs = dsp::epoch(&conditioned, 6.0, 0.0).unwrap();
        let regions = crate::features::standard_regions();
        let bands = crate::features::standard_bands();
        let names = feature_names(&regions, &bands);

        let mut mean = vec![0.0; names.len()];
        for ep in &epochs {
            let v = region_band_features(ep, &conditioned.channel_labels, &regions, &bands, 4.0)
                .unwrap();
            for (m, x) in mean.iter_mut().zip(&v) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= epochs.len() as f64;
        }

        // The conditioning bandpass (0.5-45 Hz) clips the band edges: filtfilt
        // applies |H|^2, so spectral density is scaled by |H|^4. Averaging
        // that over each band's PSD bins predicts the measured shortfall
        // (about -0.15 log10 for gamma, whose top touches the 45 Hz corner).
        let config = PipelineConfig::default();
        let bp = crate::dsp::filter::design_butterworth_bandpass(
            config.band[0],
            config.band[1],
            config.band_order,
            config.common_rate_hz,
        )
        .unwrap();
        let band_attenuation = |lo: f64, hi: f64| -> f64 {
            let df = 0.25; // welch bin width at 128 Hz with 4 s segments
            let mut acc = 0.0;
            let mut count = 0usize;
            let mut f = (lo / df).ceil() * df;
            while f < hi {
                acc += bp.gain_at_hz(f).powi(4);
                count += 1;
                f += df;
            }
            acc / count as f64
        };

        // Beyond the bandpass clip there are smaller class-independent biases:
        // the generator's own band-noise skirts hold ~11% of each band's
        // variance outside the nominal edges, the common average reference
        // shrinks per-channel variance by (1 - 1/14), and averaging log-power
        // over epochs sits slightly below the log of the mean. Absolute
        // levels therefore get a loose bound; contrasts, which all of those
        // offsets cancel out of, get tight ones.
        let expect = |region: &str, band: &str| -> f64 {
            let def = bands.iter().find(|b| b.name == band).unwrap();
            (spec.classes[0].band_power[region][band] * band_attenuation(def.lo_hz, def.hi_hz))
                .log10()
        };
        for (i, name) in names.iter().enumerate() {
            let (region, band) = name.split_once('_').unwrap();
            let want = expect(region, band);
            assert!(
                (mean[i] - want).abs() < 0.25,
                "{name}: measured {:.3}, target {:.3}",
                mean[i],
                want
            );
        }

        let at = |name: &str| mean[names.iter().position(|n| n == name).unwrap()];
        // The boosted occipital alpha shows up as a clean log10 step.
        assert!((at("occipital_alpha") - at("frontal_alpha") - (60.0f64 / 15.0).log10()).abs() < 0.1);
        // Regions sharing a target land on the same level.
        let deltas = [
            at("frontal_delta"),
            at("central_delta"),
            at("parietal_delta"),
            at("occipital_delta"),
        ];
        let spread = deltas.iter().cloned().fold(f64::MIN, f64::max)
            - deltas.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.08, "delta spread across regions {spread:.3}");
        // Cross-band ordering survives end to end: 20 > 15 > 10 > 5 targets.
        assert!(at("frontal_delta") > at("frontal_alpha"));
        assert!(at("frontal_alpha") > at("frontal_theta"));
        assert!(at("frontal_theta") > at("frontal_beta"));
    }

    #[test]
    fn stress_offset_recovers_in_feature_units() {
        let mut spec = base_spec(3, 11);
        spec.duration_s = 48.0;
        spec.subject_jitter = 0.02;
        let mut offset = BandPowerMap::new();
        offset.insert(
            "parietal".into(),
            [("beta".to_string(), 0.3)].into_iter().collect(),
        );
        spec.stress_offset = offset;

        let dir = tempfile::tempdir().unwrap();
        // Calm cohort.
        let calm_dir = dir.path().join("calm");
        let calm_manifest = synth_cohort(&spec, &calm_dir).unwrap();
        // Stressed cohort: same targets, everyone stressed.
        let mut stressed_spec = spec.clone();
        stressed_spec.seed = 12;
        stressed_spec.classes[0].stress_fraction = 1.0;
        stressed_spec.classes[0].name = "stressed".into();
        let stressed_dir = dir.path().join("stressed");
        let stressed_manifest = synth_cohort(&stressed_spec, &stressed_dir).unwrap();

        let config = PipelineConfig::default();
        let calm = build_feature_table(&calm_manifest, &config).unwrap();
        let stressed = build_feature_table(&stressed_manifest, &config).unwrap();
        let coeff = crate::stressguard::stress_coefficient(&stressed, &calm).unwrap();

        let names = calm.feature_names.clone();
        for (i, name) in names.iter().enumerate() {
            let want = if name == "parietal_beta" { 0.3 } else { 0.0 };
            assert!(
                (coeff[i] - want).abs() < 0.1,
                "{name}: coefficient {:.3}, want {want}",
                coeff[i]
            );
        }
    }

    #[test]
    fn cohort_layout_and_stress_counts() {
        let mut spec = base_spec(5, 3);
        spec.classes[0].stress_fraction = 0.4; // round(2.0) = 2 subjects
        spec.classes.push(ClassSpec {
            label: 1,
            name: "patient".into(),
            count: 3,
            band_power: uniform_band_power(&[
                ("delta", 25.0),
                ("theta", 12.0),
                ("alpha", 10.0),
                ("beta", 6.0),
                ("gamma", 3.0),
            ]),
            stress_fraction: 0.0,
        });
        spec.duration_s = 12.0;

        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_cohort(&spec, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 8);
        assert_eq!(manifest.class_names[&0], "control");
        assert_eq!(manifest.class_names[&1], "patient");
        let stressed = manifest
            .entries
            .iter()
            .filter(|e| e.stress_ground_truth == Some(true))
            .count();
        assert_eq!(stressed, 2);
        assert!(manifest
            .entries
            .iter()
            .filter(|e| e.class_label == 1)
            .all(|e| e.stress_ground_truth == Some(false)));

        // Files exist and load back with the right shape.
        let rec = manifest.load_recording(&manifest.entries[0]).unwrap();
        assert_eq!(rec.channel_count(), 14);
        assert_eq!(rec.sample_count(), 2400);
        assert_eq!(rec.subject_id, "control_000");

        // The manifest JSON on disk round-trips.
        let loaded = crate::ingest::load_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.entries.len(), 8);
        assert_eq!(loaded.dataset_id, "synthetic");

        // Same spec, same bytes.
        let dir2 = tempfile::tempdir().unwrap();
        let manifest2 = synth_cohort(&spec, dir2.path()).unwrap();
        let rec2 = manifest2.load_recording(&manifest2.entries[0]).unwrap();
        assert_eq!(rec.samples, rec2.samples);
    }

    #[test]
    fn spec_validation_catches_holes() {
        let mut spec = base_spec(2, 0);
        spec.classes[0]
            .band_power
            .get_mut("frontal")
            .unwrap()
            .remove("beta");
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));

        let mut spec = base_spec(2, 0);
        spec.sample_rate_hz = 80.0; // cannot carry 30-45 Hz gamma
        assert!(matches!(spec.validate(), Err(Error::InvalidRate(_))));

        let mut spec = base_spec(2, 0);
        spec.classes[0].stress_fraction = 1.5;
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    }
}
