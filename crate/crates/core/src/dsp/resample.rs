//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const KAISER_BETA: f64 = 5.0;
const MAX_RATIO_DENOMINATOR: u64 = 1024;

/// Resample `x` from `source_hz` to `target_hz`.
///
/// The rate pair must reduce to a rational factor with denominator at most
/// 1024, otherwise `InvalidRate`. Output length is floor(n * target / source).
/// Edges are handled by replicating the first/last sample, so a constant
/// signal resamples to exactly the same constant.
pub fn resample(x: &[f64], source_hz: f64, target_hz: f64) -> Result<Vec<f64>> {
    let (up, down) = rational_ratio(source_hz, target_hz)?;
    if up == down {
        return Ok(x.to_vec());
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }

    let n = x.len();
    let n_out = ((n as u128 * up as u128) / down as u128) as usize;

    let max_rate = up.max(down);
    let half_len = 10 * max_rate;
    let taps = build_kernel(up, max_rate, half_len);

    let half = half_len; // group delay of the (2*half_len+1)-tap kernel
    let clamp = |idx: i64| -> f64 {
        let i = idx.clamp(0, n as i64 - 1) as usize;
        x[i]
    };

    let mut out = Vec::with_capacity(n_out);
    for t in 0..n_out {
        let offset = t as i64 * down as i64 + half as i64;
        // Taps j with (offset - j) divisible by `up` hit real input samples.
        let phase = (offset.rem_euclid(up as i64)) as usize;
        let mut acc = 0.0;
        let mut j = phase;
        while j < taps.len() {
            let src = (offset - j as i64) / up as i64;
            acc += taps[j] * clamp(src);
            j += up;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Kaiser-windowed sinc, normalized per polyphase branch so every branch
/// sums to exactly 1 (unity DC gain regardless of phase).
fn build_kernel(up: usize, max_rate: usize, half_len: usize) -> Vec<f64> {
    let len = 2 * half_len + 1;
    let cutoff = 1.0 / max_rate as f64; // relative to upsampled Nyquist
    let denom = bessel_i0(KAISER_BETA);
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let m = i as f64 - half_len as f64;
            let window_arg = 2.0 * i as f64 / (len - 1) as f64 - 1.0;
            let window = bessel_i0(KAISER_BETA * (1.0 - window_arg * window_arg).sqrt()) / denom;
            cutoff * sinc(cutoff * m) * window
        })
        .collect();

    for phase in 0..up {
        let sum: f64 = taps.iter().skip(phase).step_by(up).sum();
        if sum.abs() > f64::EPSILON {
            for tap in taps.iter_mut().skip(phase).step_by(up) {
                *tap /= sum;
            }
        }
    }
    taps
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

/// Reduce target/source to a small integer ratio (up, down).
fn rational_ratio(source_hz: f64, target_hz: f64) -> Result<(usize, usize)> {
    if !(source_hz > 0.0 && source_hz.is_finite() && target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::InvalidRate(format!(
            "rates must be positive and finite, got {source_hz} -> {target_hz}"
        )));
    }
    // Exact path for integer rates.
    if source_hz.fract() == 0.0 && target_hz.fract() == 0.0 {
        let s = source_hz as u64;
        let t = target_hz as u64;
        let g = gcd(s, t);
        let (up, down) = (t / g, s / g);
        if down > MAX_RATIO_DENOMINATOR || up > MAX_RATIO_DENOMINATOR {
            return Err(Error::InvalidRate(format!(
                "ratio {target_hz}/{source_hz} reduces to {up}/{down}, too fine to resample"
            )));
        }
        return Ok((up as usize, down as usize));
    }
    // Continued-fraction approximation for fractional rates.
    let ratio = target_hz / source_hz;
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut value = ratio;
    for _ in 0..64 {
        let a = value.floor();
        if a > u64::MAX as f64 {
            break;
        }
        let a_int = a as u64;
        let p2 = a_int.saturating_mul(p1).saturating_add(p0);
        let q2 = a_int.saturating_mul(q1).saturating_add(q0);
        if q2 > MAX_RATIO_DENOMINATOR || p2 > MAX_RATIO_DENOMINATOR {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let approx = p1 as f64 / q1 as f64;
        if (approx - ratio).abs() <= 1e-9 * ratio {
            return Ok((p1 as usize, q1 as usize));
        }
        let frac = value - a;
        if frac.abs() < 1e-12 {
            break;
        }
        value = 1.0 / frac;
    }
    if q1 > 0 && (p1 as f64 / q1 as f64 - ratio).abs() <= 1e-9 * ratio {
        return Ok((p1 as usize, q1 as usize));
    }
    Err(Error::InvalidRate(format!(
        "ratio {target_hz}/{source_hz} has no small rational form"
    )))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}
