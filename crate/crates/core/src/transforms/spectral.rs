//! FFT and STFT magnitude features with abs + log1p normalization.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

use super::{FeatureData, FeatureKind, FeatureTensor};

/// One-sided magnitude spectrum, length `floor(n/2) + 1`.
pub fn magnitude_spectrum(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// One-sided FFT magnitude of the whole signal, log1p-normalized.
pub fn fft_magnitude(signal: &[f64], source_level: u8) -> Result<FeatureTensor> {
    if signal.is_empty() {
        return Err(Error::data("fft_magnitude on empty signal"));
    }
    let mags = magnitude_spectrum(signal);
    let tensor = FeatureTensor {
        kind: FeatureKind::FftMag,
        data: FeatureData::Vector(mags),
        source_level,
        normalized: false,
    };
    Ok(log1p_normalize(tensor))
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()))
        .collect()
}

/// Hann-windowed STFT magnitude, `floor((n - window_len)/hop) + 1` frames by
/// `window_len/2 + 1` bins, log1p-normalized.
pub fn stft_magnitude(
    signal: &[f64],
    window_len: usize,
    hop: usize,
    source_level: u8,
) -> Result<FeatureTensor> {
    if window_len == 0 || window_len > signal.len() {
        return Err(Error::data(format!(
            "window_len {window_len} out of range for signal of {}",
            signal.len()
        )));
    }
    if hop == 0 || hop > window_len {
        return Err(Error::data(format!(
            "hop {hop} must satisfy 0 < hop <= window_len {window_len}"
        )));
    }
    let n_frames = (signal.len() - window_len) / hop + 1;
    let n_bins = window_len / 2 + 1;
    let window = hann(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let mut data = Vec::with_capacity(n_frames * n_bins);
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    for f in 0..n_frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(signal[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend(buf[..n_bins].iter().map(|c| c.norm()));
    }
    let tensor = FeatureTensor {
        kind: FeatureKind::StftMag,
        data: FeatureData::Matrix {
            rows: n_frames,
            cols: n_bins,
            data,
        },
        source_level,
        normalized: false,
    };
    Ok(log1p_normalize(tensor))
}

/// Elementwise `ln(1 + |v|)`; marks the tensor normalized.
pub fn log1p_normalize(mut t: FeatureTensor) -> FeatureTensor {
    let apply = |values: &mut [f64]| {
        for v in values.iter_mut() {
            *v = v.abs().ln_1p();
        }
    };
    match &mut t.data {
        FeatureData::Vector(v) => apply(v),
        FeatureData::Matrix { data, .. } => apply(data),
    }
    t.normalized = true;
    t
}
