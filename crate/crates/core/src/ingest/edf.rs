//! EDF (European Data Format) reader and writer.
//!
//! Layout: a 256-byte ASCII fixed header, then 256 bytes of header per
//! signal (stored field-major), then data records of interleaved 16-bit
//! little-endian two's-complement samples. Digital values map to physical
//! units by per-signal linear scaling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::Recording;

const FIXED_HEADER_LEN: usize = 256;
const PER_SIGNAL_HEADER_LEN: usize = 256;
const ANNOTATION_LABEL: &str = "EDF ANNOTATIONS";

/// Per-signal header block.
#[derive(Debug, Clone)]
pub struct EdfSignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl EdfSignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label.trim().to_uppercase() == ANNOTATION_LABEL
    }

    /// Physical units per digital step.
    pub fn scale(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn digital_to_physical(&self, digital: i16) -> f64 {
        (digital as f64 - self.digital_min as f64) * self.scale() + self.physical_min
    }
}

/// Parsed EDF header (fixed part plus one block per signal).
#[derive(Debug, Clone)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub record_count: usize,
    pub record_duration_s: f64,
    pub signals: Vec<EdfSignalHeader>,
}

impl EdfHeader {
    pub fn signal_count(&self) -> usize {
        self.signals.len()
    }

    fn record_len_bytes(&self) -> usize {
        self.signals
            .iter()
            .map(|s| s.samples_per_record * 2)
            .sum()
    }
}

fn ascii_field(bytes: &[u8], offset: usize, len: usize) -> Result<String> {
    let slice = bytes
        .get(offset..offset + len)
        .ok_or_else(|| Error::MalformedHeader(format!("header shorter than {} bytes", offset + len)))?;
    if !slice.is_ascii() {
        return Err(Error::MalformedHeader(format!(
            "non-ASCII bytes in header field at offset {offset}"
        )));
    }
    Ok(String::from_utf8_lossy(slice).trim().to_string())
}

fn parse_int(bytes: &[u8], offset: usize, len: usize, what: &str) -> Result<i64> {
    let text = ascii_field(bytes, offset, len)?;
    text.parse()
        .map_err(|_| Error::MalformedHeader(format!("{what}: non-numeric field {text:?}")))
}

fn parse_float(bytes: &[u8], offset: usize, len: usize, what: &str) -> Result<f64> {
    let text = ascii_field(bytes, offset, len)?;
    let value: f64 = text
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("{what}: non-numeric field {text:?}")))?;
    if !value.is_finite() {
        return Err(Error::MalformedHeader(format!("{what}: non-finite {text:?}")));
    }
    Ok(value)
}

/// Parse the fixed and per-signal headers from raw bytes.
pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, fixed header needs {FIXED_HEADER_LEN}",
            bytes.len()
        )));
    }
    let version = ascii_field(bytes, 0, 8)?;
    let patient_id = ascii_field(bytes, 8, 80)?;
    let recording_id = ascii_field(bytes, 88, 80)?;
    let header_bytes = parse_int(bytes, 184, 8, "header byte count")?;
    let record_count = parse_int(bytes, 236, 8, "record count")?;
    let record_duration_s = parse_float(bytes, 244, 8, "record duration")?;
    let signal_count = parse_int(bytes, 252, 4, "signal count")?;

    if signal_count <= 0 {
        return Err(Error::MalformedHeader(format!(
            "signal count {signal_count} must be positive"
        )));
    }
    if record_count < 0 {
        return Err(Error::MalformedHeader(format!(
            "record count {record_count} must be non-negative"
        )));
    }
    if record_duration_s <= 0.0 {
        return Err(Error::MalformedHeader(format!(
            "record duration {record_duration_s} must be positive"
        )));
    }
    let ns = signal_count as usize;
    let expected_header = FIXED_HEADER_LEN + ns * PER_SIGNAL_HEADER_LEN;
    if header_bytes as usize != expected_header {
        return Err(Error::MalformedHeader(format!(
            "header byte count {header_bytes} does not match {expected_header} for {ns} signals"
        )));
    }
    if bytes.len() < expected_header {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, header needs {expected_header}",
            bytes.len()
        )));
    }

    // Signal header fields are stored field-major: all labels, then all
    // transducers, and so on.
    let base = FIXED_HEADER_LEN;
    let field = |field_offset: usize, width: usize, i: usize| field_offset + i * width + base;

    let labels_off = 0;
    let transducer_off = labels_off + ns * 16;
    let dim_off = transducer_off + ns * 80;
    let phys_min_off = dim_off + ns * 8;
    let phys_max_off = phys_min_off + ns * 8;
    let dig_min_off = phys_max_off + ns * 8;
    let dig_max_off = dig_min_off + ns * 8;
    let prefilter_off = dig_max_off + ns * 8;
    let spr_off = prefilter_off + ns * 80;

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = ascii_field(bytes, field(labels_off, 16, i), 16)?;
        let transducer = ascii_field(bytes, field(transducer_off, 80, i), 80)?;
        let physical_dimension = ascii_field(bytes, field(dim_off, 8, i), 8)?;
        let physical_min = parse_float(bytes, field(phys_min_off, 8, i), 8, "physical min")?;
        let physical_max = parse_float(bytes, field(phys_max_off, 8, i), 8, "physical max")?;
        let digital_min = parse_int(bytes, field(dig_min_off, 8, i), 8, "digital min")? as i32;
        let digital_max = parse_int(bytes, field(dig_max_off, 8, i), 8, "digital max")? as i32;
        let prefiltering = ascii_field(bytes, field(prefilter_off, 80, i), 80)?;
        let samples_per_record = parse_int(bytes, field(spr_off, 8, i), 8, "samples per record")?;

        if digital_max <= digital_min {
            return Err(Error::InconsistentSignal {
                signal: i,
                dig_min: digital_min,
                dig_max: digital_max,
            });
        }
        if samples_per_record <= 0 {
            return Err(Error::MalformedHeader(format!(
                "signal {i}: samples per record {samples_per_record} must be positive"
            )));
        }
        let header = EdfSignalHeader {
            label,
            transducer,
            physical_dimension,
            physical_min,
            physical_max,
            digital_min,
            digital_max,
            prefiltering,
            samples_per_record: samples_per_record as usize,
        };
        if !header.scale().is_finite() {
            return Err(Error::MalformedHeader(format!(
                "signal {i}: non-finite physical scaling"
            )));
        }
        signals.push(header);
    }

    Ok(EdfHeader {
        version,
        patient_id,
        recording_id,
        record_count: record_count as usize,
        record_duration_s,
        signals,
    })
}

/// Read an EDF file into a [`Recording`]. Annotation signals are dropped;
/// remaining signals must share one sampling rate. Samples are converted
/// to physical units; bytes past the declared records are ignored.
pub fn read_edf(path: &Path) -> Result<Recording> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let header = parse_header(&bytes)?;

    let header_len = FIXED_HEADER_LEN + header.signal_count() * PER_SIGNAL_HEADER_LEN;
    let record_len = header.record_len_bytes();
    let expected = header.record_count * record_len;
    let available = bytes.len().saturating_sub(header_len);
    if available < expected {
        return Err(Error::TruncatedData {
            expected,
            found: available,
        });
    }

    let kept: Vec<usize> = (0..header.signal_count())
        .filter(|&i| !header.signals[i].is_annotation())
        .collect();
    if kept.is_empty() {
        return Err(Error::MalformedHeader(
            "no data signals after dropping annotations".into(),
        ));
    }
    let spr = header.signals[kept[0]].samples_per_record;
    if kept.iter().any(|&i| header.signals[i].samples_per_record != spr) {
        return Err(Error::MalformedHeader(
            "data signals have mixed sampling rates".into(),
        ));
    }
    let sample_rate_hz = spr as f64 / header.record_duration_s;

    let total = spr * header.record_count;
    let mut samples: Vec<Vec<f64>> = kept.iter().map(|_| Vec::with_capacity(total)).collect();

    // Byte offset of each signal inside one record.
    let mut signal_offsets = Vec::with_capacity(header.signal_count());
    let mut acc = 0usize;
    for sig in &header.signals {
        signal_offsets.push(acc);
        acc += sig.samples_per_record * 2;
    }

    for record in 0..header.record_count {
        let record_base = header_len + record * record_len;
        for (out, &sig_idx) in kept.iter().enumerate() {
            let sig = &header.signals[sig_idx];
            let mut offset = record_base + signal_offsets[sig_idx];
            for _ in 0..sig.samples_per_record {
                let digital = i16::from_le_bytes([bytes[offset], bytes[offset + 1]]);
                samples[out].push(sig.digital_to_physical(digital));
                offset += 2;
            }
        }
    }

    let labels = kept
        .iter()
        .map(|&i| header.signals[i].label.clone())
        .collect();
    Recording::new(
        labels,
        sample_rate_hz,
        samples,
        header.patient_id.clone(),
        header.recording_id.clone(),
    )
}

/// Format a float into at most `width` ASCII characters, preferring the
/// highest decimal precision that fits.
fn ascii_float(value: f64, width: usize) -> String {
    for precision in (0..=6).rev() {
        let s = format!("{value:.precision$}");
        if s.len() <= width {
            return s;
        }
    }
    format!("{value:.0}")
}

fn pad(mut s: String, width: usize) -> String {
    s.truncate(width);
    while s.len() < width {
        s.push(' ');
    }
    s
}

/// Write a recording as EDF. Per-channel physical ranges are taken from the
/// data; digital range is the full i16 span, so the round trip through
/// [`read_edf`] is exact to within one quantization step.
///
/// Records are one second long when the sample count divides evenly by the
/// rate, otherwise the whole recording becomes a single record.
pub fn write_edf(rec: &Recording, path: &Path) -> Result<()> {
    if rec.channel_labels.is_empty() || rec.samples.is_empty() {
        return Err(Error::EmptyInput("recording has no channels".into()));
    }
    let n = rec.sample_count();
    let rate = rec.sample_rate_hz;
    let per_second = rate.round() as usize;
    let whole_seconds =
        per_second > 0 && (rate - per_second as f64).abs() < 1e-9 && n.is_multiple_of(per_second);
    let (record_count, samples_per_record, record_duration) = if whole_seconds {
        (n / per_second, per_second, 1.0)
    } else {
        (1, n, n as f64 / rate)
    };

    let ns = rec.channel_count();
    let dig_min: i32 = -32768;
    let dig_max: i32 = 32767;

    // Physical range per channel, reparsed from its 8-char ASCII form so the
    // scaling written to the header is exactly the scaling used to quantize.
    struct ChannelScale {
        phys_min_text: String,
        phys_max_text: String,
        phys_min: f64,
        phys_max: f64,
    }
    let mut scales = Vec::with_capacity(ns);
    for ch in &rec.samples {
        let lo = ch.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidSpec("non-finite sample value".into()));
        }
        if hi - lo < 1e-9 {
            hi = lo + 1.0;
        }
        let phys_min_text = ascii_float(lo, 8);
        let phys_max_text = ascii_float(hi, 8);
        let phys_min: f64 = phys_min_text.parse().expect("own float format parses");
        let phys_max: f64 = phys_max_text.parse().expect("own float format parses");
        // ASCII rounding may pull the bounds inside the data range; widen by
        // one printable step if so.
        let phys_min = if phys_min > lo { phys_min - 0.01 } else { phys_min };
        let phys_max = if phys_max < hi { phys_max + 0.01 } else { phys_max };
        scales.push(ChannelScale {
            phys_min_text: ascii_float(phys_min, 8),
            phys_max_text: ascii_float(phys_max, 8),
            phys_min: ascii_float(phys_min, 8).parse().unwrap(),
            phys_max: ascii_float(phys_max, 8).parse().unwrap(),
        });
    }

    let header_bytes = FIXED_HEADER_LEN + ns * PER_SIGNAL_HEADER_LEN;
    let mut out = Vec::with_capacity(header_bytes + record_count * samples_per_record * ns * 2);

    let mut push = |text: String, width: usize| {
        out.extend_from_slice(pad(text, width).as_bytes());
    };
    push("0".into(), 8);
    push(rec.subject_id.clone(), 80);
    push(rec.dataset_id.clone(), 80);
    push("01.01.00".into(), 8);
    push("00.00.00".into(), 8);
    push(header_bytes.to_string(), 8);
    push(String::new(), 44);
    push(record_count.to_string(), 8);
    push(ascii_float(record_duration, 8), 8);
    push(ns.to_string(), 4);

    for label in &rec.channel_labels {
        push(label.clone(), 16);
    }
    for _ in 0..ns {
        push(String::new(), 80); // transducer
    }
    for _ in 0..ns {
        push("uV".into(), 8);
    }
    for scale in &scales {
        push(scale.phys_min_text.clone(), 8);
    }
    for scale in &scales {
        push(scale.phys_max_text.clone(), 8);
    }
    for _ in 0..ns {
        push(dig_min.to_string(), 8);
    }
    for _ in 0..ns {
        push(dig_max.to_string(), 8);
    }
    for _ in 0..ns {
        push(String::new(), 80); // prefiltering
    }
    for _ in 0..ns {
        push(samples_per_record.to_string(), 8);
    }
    for _ in 0..ns {
        push(String::new(), 32); // reserved
    }
    debug_assert_eq!(out.len(), header_bytes);

    let dig_span = (dig_max - dig_min) as f64;
    for record in 0..record_count {
        for (ch, scale) in rec.samples.iter().zip(&scales) {
            let step = (scale.phys_max - scale.phys_min) / dig_span;
            for t in 0..samples_per_record {
                let x = ch[record * samples_per_record + t];
                let digital = ((x - scale.phys_min) / step).round() as i64 + dig_min as i64;
                let digital = digital.clamp(dig_min as i64, dig_max as i64) as i16;
                out.extend_from_slice(&digital.to_le_bytes());
            }
        }
    }

    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_recording() -> Recording {
        let t: Vec<f64> = (0..512).map(|i| i as f64 / 256.0).collect();
        Recording::new(
            vec!["C3".into(), "C4".into()],
            256.0,
            vec![
                t.iter().map(|&x| 50.0 * (x * 20.0).sin()).collect(),
                t.iter().map(|&x| 10.0 * (x * 3.0).cos() - 5.0).collect(),
            ],
            "subj01",
            "unit",
        )
        .unwrap()
    }

    #[test]
    fn identity_scaling() {
        let sig = EdfSignalHeader {
            label: "C3".into(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: -32768.0,
            physical_max: 32767.0,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record: 10,
        };
        assert_eq!(sig.digital_to_physical(100), 100.0);
        assert_eq!(sig.digital_to_physical(-32768), -32768.0);
    }

    #[test]
    fn scaled_conversion() {
        // Classic 0.01 uV/bit layout: digital 100 -> 1.0 uV.
        let sig = EdfSignalHeader {
            label: "C3".into(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: -327.68,
            physical_max: 327.67,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record: 10,
        };
        assert!((sig.digital_to_physical(100) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.edf");
        let rec = sample_recording();
        write_edf(&rec, &path).unwrap();
        let back = read_edf(&path).unwrap();

        assert_eq!(back.channel_labels, rec.channel_labels);
        assert_eq!(back.sample_count(), rec.sample_count());
        assert!((back.sample_rate_hz - rec.sample_rate_hz).abs() < 1e-9);
        for (a, b) in rec.samples.iter().zip(&back.samples) {
            let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let step = (hi - lo).max(1.0) / 65535.0 * 1.001;
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= step, "{x} vs {y} exceeds step {step}");
            }
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.edf");
        write_edf(&sample_recording(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        let err = read_edf(&path).unwrap_err();
        assert!(matches!(err, Error::TruncatedData { .. }));
    }

    #[test]
    fn trailing_garbage_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let clean = dir.path().join("clean.edf");
        let tailed = dir.path().join("tailed.edf");
        write_edf(&sample_recording(), &clean).unwrap();
        let mut bytes = std::fs::read(&clean).unwrap();
        let parsed_clean = read_edf(&clean).unwrap();
        bytes.extend_from_slice(b"GARBAGE BYTES AFTER RECORDS");
        std::fs::write(&tailed, bytes).unwrap();
        let parsed_tailed = read_edf(&tailed).unwrap();
        assert_eq!(parsed_clean.samples, parsed_tailed.samples);
    }

    #[test]
    fn inconsistent_digital_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.edf");
        write_edf(&sample_recording(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // dig_min fields live after labels/transducer/dim/phys ranges.
        let ns = 2;
        let dig_min_off = 256 + ns * (16 + 80 + 8 + 8 + 8);
        bytes[dig_min_off..dig_min_off + 8].copy_from_slice(b"32767   ");
        std::fs::write(&path, bytes).unwrap();
        let err = read_edf(&path).unwrap_err();
        assert!(matches!(err, Error::InconsistentSignal { signal: 0, .. }));
    }

    #[test]
    fn non_numeric_header_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad2.edf");
        write_edf(&sample_recording(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[236..244].copy_from_slice(b"oops    "); // record count
        std::fs::write(&path, bytes).unwrap();
        let err = read_edf(&path).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }

    #[test]
    fn annotation_signals_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annot.edf");
        let rec = Recording::new(
            vec!["C3".into(), "EDF Annotations".into()],
            128.0,
            vec![vec![1.0; 128], vec![0.0; 128]],
            "s",
            "d",
        );
        // Recording::new normalizes labels for uniqueness; annotation label
        // survives since it normalizes to "EDF ANNOTATIONS".
        let rec = rec.unwrap();
        write_edf(&rec, &path).unwrap();
        let back = read_edf(&path).unwrap();
        assert_eq!(back.channel_labels, vec!["C3"]);
    }
}
