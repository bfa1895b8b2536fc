//! IIR filter design (Butterworth bandpass, second-order notch) and
//! zero-phase forward-backward application.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One second-order section, normalized so the leading denominator
/// coefficient is 1: H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Both poles strictly inside the unit circle.
    fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Complex frequency response at normalized angular frequency w.
    fn response(&self, w: f64) -> (f64, f64) {
        // H(e^{jw}) evaluated with z^-1 = e^{-jw}.
        let (c1, s1) = ((-w).cos(), (-w).sin());
        let (c2, s2) = ((-2.0 * w).cos(), (-2.0 * w).sin());
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = self.b1 * s1 + self.b2 * s2;
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = self.a1 * s1 + self.a2 * s2;
        let den_norm = den_re * den_re + den_im * den_im;
        (
            (num_re * den_re + num_im * den_im) / den_norm,
            (num_im * den_re - num_re * den_im) / den_norm,
        )
    }

    fn gain_at(&self, w: f64) -> f64 {
        let (re, im) = self.response(w);
        re.hypot(im)
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }
}

/// Cascade of second-order sections applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    /// Nominal filter order, used for edge-padding heuristics.
    pub order: usize,
    /// Lowest frequency the filter is expected to resolve (Hz); sets the
    /// reflect-padding length for zero-phase application.
    pub lowest_freq_hz: f64,
    pub sample_rate_hz: f64,
}

impl SosFilter {
    fn check_stability(&self) -> Result<()> {
        for (i, s) in self.sections.iter().enumerate() {
            if !s.is_stable() {
                return Err(Error::UnstableFilter(format!(
                    "section {i}: a1={}, a2={}",
                    s.a1, s.a2
                )));
            }
            if ![s.b0, s.b1, s.b2, s.a1, s.a2].iter().all(|c| c.is_finite()) {
                return Err(Error::UnstableFilter(format!(
                    "section {i}: non-finite coefficient"
                )));
            }
        }
        Ok(())
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain_at_hz(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        self.sections.iter().map(|s| s.gain_at(w)).product()
    }

    /// Single forward pass (direct form II transposed) with steady-state
    /// initial conditions for a step of the first input sample.
    fn filter_forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = if x.is_empty() { 0.0 } else { x[0] };
        for s in &self.sections {
            // Steady state for constant input `level` keeps the filter from
            // ringing at the very first samples.
            let y_ss = level * s.dc_gain();
            let mut s2 = s.b2 * level - s.a2 * y_ss;
            let mut s1 = s.b1 * level - s.a1 * y_ss + s2;
            for v in y.iter_mut() {
                let x_in = *v;
                let out = s.b0 * x_in + s1;
                s1 = s.b1 * x_in - s.a1 * out + s2;
                s2 = s.b2 * x_in - s.a2 * out;
                *v = out;
            }
            level = y_ss;
        }
        y
    }

    /// Reflect-padding length for zero-phase application:
    /// 2 * order * rate / lowest_freq, capped at len - 1.
    pub fn pad_len(&self, len: usize) -> usize {
        let ideal = (2.0 * self.order as f64 * self.sample_rate_hz / self.lowest_freq_hz).ceil();
        (ideal as usize).min(len.saturating_sub(1))
    }

    /// Zero-phase (forward-backward) filtering with odd-reflection padding.
    /// Output length equals input length.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let n = x.len();
        let pad = self.pad_len(n);

        let mut ext = Vec::with_capacity(n + 2 * pad);
        let first = x[0];
        let last = x[n - 1];
        for i in (1..=pad).rev() {
            ext.push(2.0 * first - x[i]);
        }
        ext.extend_from_slice(x);
        for i in (n - 1 - pad..n - 1).rev() {
            ext.push(2.0 * last - x[i]);
        }

        let mut y = self.filter_forward(&ext);
        y.reverse();
        let mut y = self.filter_forward(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Second-order IIR notch (band-reject) at `freq_hz` with quality factor `q`.
pub fn design_notch(freq_hz: f64, q: f64, sample_rate_hz: f64) -> Result<SosFilter> {
    if !(freq_hz > 0.0 && freq_hz < sample_rate_hz / 2.0) {
        return Err(Error::InvalidFilterSpec(format!(
            "notch frequency {freq_hz} Hz outside (0, {}) at rate {sample_rate_hz}",
            sample_rate_hz / 2.0
        )));
    }
    if !(q > 0.0) {
        return Err(Error::InvalidFilterSpec(format!("notch Q {q} must be positive")));
    }
    let w0 = 2.0 * PI * freq_hz / sample_rate_hz;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let section = Biquad {
        b0: 1.0 / a0,
        b1: -2.0 * w0.cos() / a0,
        b2: 1.0 / a0,
        a1: -2.0 * w0.cos() / a0,
        a2: (1.0 - alpha) / a0,
    };
    let filter = SosFilter {
        sections: vec![section],
        order: 2,
        lowest_freq_hz: freq_hz / q, // notch bandwidth
        sample_rate_hz,
    };
    filter.check_stability()?;
    Ok(filter)
}

/// Butterworth bandpass of prototype order `order` (2*order poles) between
/// `lo_hz` and `hi_hz`, as cascaded biquads each normalized to unity gain
/// at the band center.
pub fn design_butterworth_bandpass(
    lo_hz: f64,
    hi_hz: f64,
    order: usize,
    sample_rate_hz: f64,
) -> Result<SosFilter> {
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < sample_rate_hz / 2.0) {
        return Err(Error::InvalidFilterSpec(format!(
            "band [{lo_hz}, {hi_hz}] invalid at rate {sample_rate_hz}"
        )));
    }
    if order == 0 {
        return Err(Error::InvalidFilterSpec("filter order must be >= 1".into()));
    }

    let fs = sample_rate_hz;
    let k = 2.0 * fs; // bilinear constant
    let w1 = k * (PI * lo_hz / fs).tan();
    let w2 = k * (PI * hi_hz / fs).tan();
    let bw = w2 - w1;
    let w0 = (w1 * w2).sqrt();

    // Analog Butterworth prototype poles on the unit circle, left half-plane.
    let prototype: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let theta = PI * (2.0 * i as f64 + order as f64 + 1.0) / (2.0 * order as f64);
            (theta.cos(), theta.sin())
        })
        .collect();

    // Lowpass-to-bandpass: each prototype pole p yields the two roots of
    // s^2 - (bw p) s + w0^2 = 0.
    let mut analog_poles: Vec<(f64, f64)> = Vec::with_capacity(2 * order);
    for &(pre, pim) in &prototype {
        let (tre, tim) = (0.5 * bw * pre, 0.5 * bw * pim);
        // disc = t^2 - w0^2
        let dre = tre * tre - tim * tim - w0 * w0;
        let dim = 2.0 * tre * tim;
        let (sre, sim) = complex_sqrt(dre, dim);
        analog_poles.push((tre + sre, tim + sim));
        analog_poles.push((tre - sre, tim - sim));
    }

    // Bilinear transform z = (k + s) / (k - s).
    let digital_poles: Vec<(f64, f64)> = analog_poles
        .iter()
        .map(|&(re, im)| complex_div(k + re, im, k - re, -im))
        .collect();

    // Pair conjugates into real biquads: take poles in the upper half plane
    // (or real ones in pairs) and join each with its conjugate.
    let tol = 1e-9;
    let mut upper: Vec<(f64, f64)> = digital_poles
        .iter()
        .copied()
        .filter(|&(_, im)| im > tol)
        .collect();
    let mut real: Vec<f64> = digital_poles
        .iter()
        .copied()
        .filter(|&(_, im)| im.abs() <= tol)
        .map(|(re, _)| re)
        .collect();
    upper.sort_by(|a, b| a.partial_cmp(b).unwrap());
    real.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut sections = Vec::with_capacity(order);
    for &(re, im) in &upper {
        sections.push(Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0, // zeros at z = +1 and z = -1
            a1: -2.0 * re,
            a2: re * re + im * im,
        });
    }
    for pair in real.chunks(2) {
        match *pair {
            [p, q] => sections.push(Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -(p + q),
                a2: p * q,
            }),
            [p] => sections.push(Biquad {
                b0: 1.0,
                b1: -1.0,
                b2: 0.0,
                a1: -p,
                a2: 0.0,
            }),
            _ => unreachable!(),
        }
    }

    // Normalize each section to unity gain at the (prewarped) band center.
    let center_w = 2.0 * (w0 / k).atan();
    for s in &mut sections {
        let g = s.gain_at(center_w);
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::UnstableFilter("zero gain at band center".into()));
        }
        s.b0 /= g;
        s.b1 /= g;
        s.b2 /= g;
    }

    let filter = SosFilter {
        sections,
        order,
        lowest_freq_hz: lo_hz,
        sample_rate_hz,
    };
    filter.check_stability()?;
    Ok(filter)
}

fn complex_sqrt(re: f64, im: f64) -> (f64, f64) {
    let r = re.hypot(im);
    let s_re = ((r + re) / 2.0).sqrt();
    let s_im = ((r - re) / 2.0).sqrt() * if im < 0.0 { -1.0 } else { 1.0 };
    (s_re, s_im)
}

fn complex_div(are: f64, aim: f64, bre: f64, bim: f64) -> (f64, f64) {
    let d = bre * bre + bim * bim;
    ((are * bre + aim * bim) / d, (aim * bre - are * bim) / d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: f64, seconds: f64) -> Vec<f64> {
        let n = (rate * seconds) as usize;
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate).sin())
            .collect()
    }

    fn central_rms(x: &[f64], skip: usize) -> f64 {
        let body = &x[skip..x.len() - skip];
        (body.iter().map(|v| v * v).sum::<f64>() / body.len() as f64).sqrt()
    }

    #[test]
    fn notch_kills_center_keeps_neighbors() {
        let rate = 200.0;
        let filt = design_notch(50.0, 30.0, rate).unwrap();

        let at_center = filt.filtfilt(&sine(50.0, rate, 10.0));
        let center_rms = central_rms(&at_center, rate as usize);
        let input_rms = 1.0 / 2.0_f64.sqrt();
        let attenuation_db = 20.0 * (input_rms / center_rms.max(1e-300)).log10();
        assert!(attenuation_db >= 40.0, "notch attenuation {attenuation_db} dB");

        let at_ten = filt.filtfilt(&sine(10.0, rate, 10.0));
        let ten_rms = central_rms(&at_ten, rate as usize);
        let change_db = 20.0 * (ten_rms / input_rms).log10();
        assert!(change_db.abs() <= 1.0, "10 Hz change {change_db} dB");
    }

    #[test]
    fn notch_zero_in_zero_out() {
        let filt = design_notch(50.0, 30.0, 200.0).unwrap();
        let out = filt.filtfilt(&vec![0.0; 1000]);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    /// Closed-form magnitude of an order-n Butterworth bandpass evaluated at
    /// the prewarped analog frequency matching digital frequency `f_hz`. The
    /// bilinear transform preserves magnitude exactly under this mapping, so
    /// the designed filter must agree to rounding error.
    fn butterworth_bp_oracle(f_hz: f64, lo: f64, hi: f64, n: u32, rate: f64) -> f64 {
        let k = 2.0 * rate;
        let w1 = k * (PI * lo / rate).tan();
        let w2 = k * (PI * hi / rate).tan();
        let w = k * (PI * f_hz / rate).tan();
        let w_lp = (w * w - w1 * w2) / ((w2 - w1) * w);
        1.0 / (1.0 + w_lp.powi(2 * n as i32)).sqrt()
    }

    #[test]
    fn bandpass_matches_analytic_response() {
        let rate = 200.0;
        let filt = design_butterworth_bandpass(0.5, 45.0, 4, rate).unwrap();
        for &f in &[0.1, 0.25, 0.5, 1.0, 3.0, 10.0, 20.0, 30.0, 40.0, 45.0, 50.0, 60.0, 80.0, 95.0]
        {
            let expect = butterworth_bp_oracle(f, 0.5, 45.0, 4, rate);
            let got = filt.gain_at_hz(f);
            assert!(
                (got - expect).abs() <= 1e-6 * expect.max(1e-12),
                "{f} Hz: got {got}, oracle {expect}"
            );
        }
        // Corner sanity: half-power points and a flat middle.
        assert!((filt.gain_at_hz(0.5) - 1.0 / 2.0_f64.sqrt()).abs() < 1e-6);
        assert!((filt.gain_at_hz(45.0) - 1.0 / 2.0_f64.sqrt()).abs() < 1e-6);
        assert!(filt.gain_at_hz(10.0) > 0.98);
        assert!(filt.gain_at_hz(60.0) < 0.2);
        assert!(filt.gain_at_hz(0.1) < 0.01);
    }

    #[test]
    fn bandpass_time_domain_attenuation() {
        let rate = 200.0;
        let filt = design_butterworth_bandpass(0.5, 45.0, 4, rate).unwrap();
        let skip = rate as usize; // 1 s margins
        let input_rms = 1.0 / 2.0_f64.sqrt();

        let drift = filt.filtfilt(&sine(0.1, rate, 40.0));
        let drift_db = 20.0 * (input_rms / central_rms(&drift, skip).max(1e-300)).log10();
        assert!(drift_db >= 20.0, "0.1 Hz attenuation {drift_db} dB");

        let mid = filt.filtfilt(&sine(10.0, rate, 40.0));
        let mid_db = 20.0 * (central_rms(&mid, skip) / input_rms).log10();
        assert!(mid_db.abs() <= 1.0, "10 Hz change {mid_db} dB");

        let hum = filt.filtfilt(&sine(60.0, rate, 40.0));
        let hum_db = 20.0 * (input_rms / central_rms(&hum, skip).max(1e-300)).log10();
        assert!(hum_db >= 20.0, "60 Hz attenuation {hum_db} dB");
    }

    #[test]
    fn filtfilt_is_zero_phase() {
        let rate = 200.0;
        let filt = design_butterworth_bandpass(0.5, 45.0, 4, rate).unwrap();
        // Two incommensurate tones so the cross-correlation peak at lag 0 is
        // unique inside the search window (a lone 10 Hz tone repeats every
        // 20 samples and would alias lag +-20 onto lag 0).
        let a = sine(7.0, rate, 10.0);
        let b = sine(10.0, rate, 10.0);
        let x: Vec<f64> = a.iter().zip(&b).map(|(&u, &v)| u + v).collect();
        let y = filt.filtfilt(&x);
        let mut best = (0i64, f64::NEG_INFINITY);
        for lag in -20i64..=20 {
            let mut acc = 0.0;
            for i in 400..(x.len() as i64 - 400) {
                acc += x[i as usize] * y[(i + lag) as usize];
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        assert_eq!(best.0, 0);
    }

    #[test]
    fn filters_are_linear() {
        let rate = 200.0;
        let filt = design_butterworth_bandpass(0.5, 45.0, 4, rate).unwrap();
        let x = sine(7.0, rate, 5.0);
        let y = sine(23.0, rate, 5.0);
        let combined: Vec<f64> = x
            .iter()
            .zip(&y)
            .map(|(&a, &b)| 2.5 * a - 1.25 * b)
            .collect();
        let fx = filt.filtfilt(&x);
        let fy = filt.filtfilt(&y);
        let fc = filt.filtfilt(&combined);
        for i in 0..x.len() {
            let expect = 2.5 * fx[i] - 1.25 * fy[i];
            assert!((fc[i] - expect).abs() < 1e-6, "index {i}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(design_notch(120.0, 30.0, 200.0).is_err());
        assert!(design_butterworth_bandpass(45.0, 0.5, 4, 200.0).is_err());
        assert!(design_butterworth_bandpass(0.5, 120.0, 4, 200.0).is_err());
    }
}
