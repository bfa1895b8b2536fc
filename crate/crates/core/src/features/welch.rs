//! Welch power spectral density estimation.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// One-sided power spectral density in units of signal^2 per Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs_hz: Vec<f64>,
    pub density: Vec<f64>,
}

impl PsdEstimate {
    pub fn bin_width_hz(&self) -> f64 {
        if self.freqs_hz.len() > 1 {
            self.freqs_hz[1] - self.freqs_hz[0]
        } else {
            0.0
        }
    }

    /// Trapezoid-free total power: sum of density * bin width.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width_hz()
    }
}

/// Welch PSD with mean-detrended, Hann-windowed segments at 50% overlap.
///
/// `segment_s` sets the segment length (and thus the bin width
/// `sample_rate / segment_samples`); the signal must hold at least one
/// full segment.
pub fn welch_psd(x: &[f64], sample_rate_hz: f64, segment_s: f64) -> Result<PsdEstimate> {
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(Error::InvalidRate(format!("sample rate {sample_rate_hz}")));
    }
    if !(segment_s > 0.0) {
        return Err(Error::InvalidSpec("segment length must be positive".into()));
    }
    let nperseg = (segment_s * sample_rate_hz).round() as usize;
    if nperseg < 2 {
        return Err(Error::InvalidSpec("segment shorter than two samples".into()));
    }
    if nperseg > x.len() {
        return Err(Error::SegmentTooLong {
            segment: nperseg,
            samples: x.len(),
        });
    }

    let hop = nperseg / 2;
    let window: Vec<f64> = (0..nperseg)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / nperseg as f64).cos()))
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let scale = 1.0 / (sample_rate_hz * window_power);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nperseg);

    let n_bins = nperseg / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); nperseg];

    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for (b, (&v, &w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let mag2 = buf[k].norm_sqr();
            // One-sided density doubles everything except DC and Nyquist.
            let one_sided = if k == 0 || (nperseg.is_multiple_of(2) && k == nperseg / 2) {
                1.0
            } else {
                2.0
            };
            *a += mag2 * scale * one_sided;
        }
        segments += 1;
        start += hop;
    }

    let density: Vec<f64> = acc.iter().map(|a| a / segments as f64).collect();
    let freqs_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate_hz / nperseg as f64)
        .collect();
    Ok(PsdEstimate { freqs_hz, density })
}
