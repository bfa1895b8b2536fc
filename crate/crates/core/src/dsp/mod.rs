//! Signal conditioning: channel selection, notch + bandpass filtering,
//! rate conversion, average re-referencing, and epoching.

pub mod filter;
pub mod resample;

use serde::{Deserialize, Serialize};

pub use filter::{design_butterworth_bandpass, design_notch, Biquad, SosFilter};
pub use resample::resample;

use crate::error::{Error, Result};
use crate::ingest::Recording;
use crate::parallel;

/// The electrode subset every recording is reduced to, in fixed order.
pub const STANDARD_CHANNELS: [&str; 14] = [
    "C3", "C4", "CZ", "F3", "F4", "F7", "F8", "FP1", "FP2", "O1", "O2", "P3", "P4", "PZ",
];

pub const DEFAULT_NOTCH_Q: f64 = 30.0;
pub const DEFAULT_BANDPASS_ORDER: usize = 4;

/// Declarative filter description, designable against any sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    Notch {
        freq_hz: f64,
        #[serde(default = "default_notch_q")]
        q: f64,
    },
    Bandpass {
        lo_hz: f64,
        hi_hz: f64,
        #[serde(default = "default_bandpass_order")]
        order: usize,
    },
}

fn default_notch_q() -> f64 {
    DEFAULT_NOTCH_Q
}

fn default_bandpass_order() -> usize {
    DEFAULT_BANDPASS_ORDER
}

impl FilterSpec {
    pub fn design(&self, sample_rate_hz: f64) -> Result<SosFilter> {
        match *self {
            FilterSpec::Notch { freq_hz, q } => filter::design_notch(freq_hz, q, sample_rate_hz),
            FilterSpec::Bandpass { lo_hz, hi_hz, order } => {
                filter::design_butterworth_bandpass(lo_hz, hi_hz, order, sample_rate_hz)
            }
        }
    }
}

/// Settings for the whole conditioning chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub notch_hz: f64,
    pub notch_q: f64,
    /// Bandpass corner frequencies [lo, hi] in Hz.
    pub band: [f64; 2],
    pub band_order: usize,
    /// Rate every recording is brought to before filtering.
    pub common_rate_hz: f64,
    /// Rate of the conditioned output.
    pub final_rate_hz: f64,
    pub epoch_s: f64,
    /// Fractional overlap between consecutive epochs, in [0, 1).
    pub epoch_overlap: f64,
    /// Segment length for spectral estimation, seconds.
    pub welch_segment_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            notch_hz: 50.0,
            notch_q: DEFAULT_NOTCH_Q,
            band: [0.5, 45.0],
            band_order: DEFAULT_BANDPASS_ORDER,
            common_rate_hz: 200.0,
            final_rate_hz: 128.0,
            epoch_s: 6.0,
            epoch_overlap: 0.0,
            welch_segment_s: 4.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.common_rate_hz > 0.0 && self.final_rate_hz > 0.0) {
            return Err(Error::InvalidRate("pipeline rates must be positive".into()));
        }
        if !(self.epoch_s > 0.0) {
            return Err(Error::InvalidSpec("epoch_s must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.epoch_overlap) {
            return Err(Error::InvalidSpec(format!(
                "epoch_overlap {} outside [0, 1)",
                self.epoch_overlap
            )));
        }
        if !(self.welch_segment_s > 0.0) {
            return Err(Error::InvalidSpec("welch_segment_s must be positive".into()));
        }
        Ok(())
    }
}

/// A fixed-length window cut from a conditioned recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub index: usize,
    /// Offset of the first sample within the source recording.
    pub start_sample: usize,
    /// Channel-major samples, same channel order as the recording.
    pub channels: Vec<Vec<f64>>,
    pub sample_rate_hz: f64,
}

impl Epoch {
    pub fn sample_count(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

/// Keep only `labels`, in the order given. Labels are matched after
/// normalization, so "EEG Fp1-REF" satisfies a request for "FP1".
pub fn select_channels(rec: &Recording, labels: &[&str]) -> Result<Recording> {
    let mut channels = Vec::with_capacity(labels.len());
    let mut samples = Vec::with_capacity(labels.len());
    for &want in labels {
        let idx = rec
            .channel_index(want)
            .ok_or_else(|| Error::MissingChannel(want.to_string()))?;
        channels.push(want.to_string());
        samples.push(rec.samples[idx].clone());
    }
    Recording::new(
        channels,
        rec.sample_rate_hz,
        samples,
        rec.subject_id.clone(),
        rec.dataset_id.clone(),
    )
}

fn map_channels<F>(rec: &Recording, f: F) -> Result<Recording>
where
    F: Fn(&Vec<f64>) -> Result<Vec<f64>> + Sync + Send,
{
    let results = parallel::map_collect(&rec.samples, f);
    let mut samples = Vec::with_capacity(results.len());
    for r in results {
        samples.push(r?);
    }
    Ok(Recording {
        channel_labels: rec.channel_labels.clone(),
        sample_rate_hz: rec.sample_rate_hz,
        samples,
        subject_id: rec.subject_id.clone(),
        dataset_id: rec.dataset_id.clone(),
    })
}

/// Zero-phase notch on every channel.
pub fn notch_filter(rec: &Recording, freq_hz: f64, q: f64) -> Result<Recording> {
    let filt = filter::design_notch(freq_hz, q, rec.sample_rate_hz)?;
    map_channels(rec, |ch| Ok(filt.filtfilt(ch)))
}

/// Zero-phase Butterworth bandpass on every channel.
pub fn bandpass_filter(rec: &Recording, lo_hz: f64, hi_hz: f64, order: usize) -> Result<Recording> {
    let filt = filter::design_butterworth_bandpass(lo_hz, hi_hz, order, rec.sample_rate_hz)?;
    map_channels(rec, |ch| Ok(filt.filtfilt(ch)))
}

/// Bring every channel to `target_hz`.
pub fn resample_recording(rec: &Recording, target_hz: f64) -> Result<Recording> {
    if rec.sample_rate_hz == target_hz {
        return Ok(rec.clone());
    }
    let mut out = map_channels(rec, |ch| resample::resample(ch, rec.sample_rate_hz, target_hz))?;
    out.sample_rate_hz = target_hz;
    Ok(out)
}

/// Subtract the instantaneous mean across channels from every channel.
pub fn average_rereference(rec: &Recording) -> Result<Recording> {
    let n_ch = rec.channel_count();
    if n_ch < 2 {
        return Err(Error::TooFewChannels(n_ch));
    }
    let n = rec.sample_count();
    let mut mean = vec![0.0; n];
    for ch in &rec.samples {
        for (m, &v) in mean.iter_mut().zip(ch) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n_ch as f64;
    }
    map_channels(rec, |ch| {
        Ok(ch.iter().zip(&mean).map(|(&v, &m)| v - m).collect())
    })
}

/// Cut a recording into fixed-length windows. `overlap` is the fraction of
/// each epoch shared with the next one.
pub fn epoch(rec: &Recording, epoch_s: f64, overlap: f64) -> Result<Vec<Epoch>> {
    if !(epoch_s > 0.0) {
        return Err(Error::InvalidSpec("epoch_s must be positive".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidSpec(format!("overlap {overlap} outside [0, 1)")));
    }
    let n = rec.sample_count();
    let per_epoch = (epoch_s * rec.sample_rate_hz).round() as usize;
    if per_epoch == 0 {
        return Err(Error::InvalidSpec("epoch shorter than one sample".into()));
    }
    if per_epoch > n {
        return Err(Error::EpochTooLong {
            samples: n,
            needed: per_epoch,
        });
    }
    let hop = ((per_epoch as f64) * (1.0 - overlap)).round().max(1.0) as usize;

    let mut epochs = Vec::new();
    let mut start = 0;
    let mut index = 0;
    while start + per_epoch <= n {
        let channels: Vec<Vec<f64>> = rec
            .samples
            .iter()
            .map(|ch| ch[start..start + per_epoch].to_vec())
            .collect();
        epochs.push(Epoch {
            index,
            start_sample: start,
            channels,
            sample_rate_hz: rec.sample_rate_hz,
        });
        index += 1;
        start += hop;
    }
    Ok(epochs)
}

/// The full conditioning chain: select the standard channels, move to the
/// common rate, notch, bandpass, re-reference to the channel average, then
/// move to the final rate.
pub fn standardize(rec: &Recording, config: &PipelineConfig) -> Result<Recording> {
    config.validate()?;
    let rec = select_channels(rec, &STANDARD_CHANNELS)?;
    let rec = resample_recording(&rec, config.common_rate_hz)?;
    let rec = notch_filter(&rec, config.notch_hz, config.notch_q)?;
    let rec = bandpass_filter(&rec, config.band[0], config.band[1], config.band_order)?;
    let rec = average_rereference(&rec)?;
    resample_recording(&rec, config.final_rate_hz)
}
