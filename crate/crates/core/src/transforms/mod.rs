//! Feature views of a recording: DWT coefficient waveforms, FFT magnitude,
//! and STFT magnitude.

pub mod dwt;
mod spectral;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dwt::{coeff_len, dwt_decompose, idwt_reconstruct, CoefficientSet, Wavelet};
pub use spectral::{fft_magnitude, log1p_normalize, magnitude_spectrum, stft_magnitude};

/// Default STFT analysis window (32 ms at 8 kHz).
pub const STFT_WINDOW: usize = 256;
/// Default STFT hop (50% overlap).
pub const STFT_HOP: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Waveform,
    FftMag,
    StftMag,
}

/// Model-ready feature payload.
#[derive(Debug, Clone)]
pub enum FeatureData {
    Vector(Vec<f64>),
    /// Row-major frames-by-bins matrix.
    Matrix {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
}

impl FeatureData {
    pub fn len(&self) -> usize {
        match self {
            FeatureData::Vector(v) => v.len(),
            FeatureData::Matrix { data, .. } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f64] {
        match self {
            FeatureData::Vector(v) => v,
            FeatureData::Matrix { data, .. } => data,
        }
    }
}

/// One feature view with its normalization provenance.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    pub kind: FeatureKind,
    pub data: FeatureData,
    /// 0 for the raw signal, 1..=3 for w_L1..w_L3.
    pub source_level: u8,
    pub normalized: bool,
}

/// Feature view selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Waveform,
    Fft,
    Stft,
}

impl View {
    pub fn name(self) -> &'static str {
        match self {
            View::Waveform => "waveform",
            View::Fft => "fft",
            View::Stft => "stft",
        }
    }
}

/// Fixed dense-model input width for each DWT level, given the level-0
/// segment width. Level k halves the width k times.
pub fn dense_width(segment_len: usize, level: u8) -> usize {
    segment_len >> level
}

/// Truncate or zero-pad to exactly `len`.
pub fn fit_length(mut v: Vec<f64>, len: usize) -> Vec<f64> {
    v.truncate(len);
    while v.len() < len {
        v.push(0.0);
    }
    v
}

/// The level-k low-pass signal of `signal`, fitted to the fixed per-level
/// width. Level 0 returns the signal itself (fitted).
pub fn level_signal(signal: &[f64], level: u8, wavelet: Wavelet) -> Result<Vec<f64>> {
    if level > 3 {
        return Err(Error::config(format!("level must be 0..=3, got {level}")));
    }
    let width = dense_width(signal.len(), level);
    if level == 0 {
        return Ok(signal.to_vec());
    }
    let coeffs = dwt_decompose(signal, level as usize, wavelet)?;
    Ok(fit_length(coeffs.low(level as usize).to_vec(), width))
}

/// Build the (level, view) feature of a preprocessed or noise-mixed signal.
///
/// FFT and STFT views are abs + log1p normalized; the waveform view is the
/// raw (coefficient) amplitude.
pub fn make_feature(signal: &[f64], level: u8, view: View, wavelet: Wavelet) -> Result<FeatureTensor> {
    let level_sig = level_signal(signal, level, wavelet)?;
    match view {
        View::Waveform => Ok(FeatureTensor {
            kind: FeatureKind::Waveform,
            data: FeatureData::Vector(level_sig),
            source_level: level,
            normalized: false,
        }),
        View::Fft => fft_magnitude(&level_sig, level),
        View::Stft => stft_magnitude(&level_sig, STFT_WINDOW, STFT_HOP, level),
    }
}

/// Model input width of the (level, view) combination for a given segment
/// length, without computing any transform.
pub fn feature_shape(segment_len: usize, level: u8, view: View) -> (usize, Option<usize>) {
    let w = dense_width(segment_len, level);
    match view {
        View::Waveform => (w, None),
        View::Fft => (w / 2 + 1, None),
        View::Stft => {
            let frames = (w - STFT_WINDOW) / STFT_HOP + 1;
            (frames, Some(STFT_WINDOW / 2 + 1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_widths_follow_halving_contract() {
        let signal = vec![0.5; 16000];
        for (level, expect) in [(0u8, 16000usize), (1, 8000), (2, 4000), (3, 2000)] {
            let sig = level_signal(&signal, level, Wavelet::Bior31).unwrap();
            assert_eq!(sig.len(), expect);
        }
    }

    #[test]
    fn feature_shapes_match_computed_features() {
        let mut rng = crate::seeding::stream_rng(5, "transforms-test", &[]);
        use rand::Rng;
        let signal: Vec<f64> = (0..16000).map(|_| rng.random_range(-1.0..1.0)).collect();
        for level in 0..=3u8 {
            for view in [View::Waveform, View::Fft, View::Stft] {
                let t = make_feature(&signal, level, view, Wavelet::Bior31).unwrap();
                let (a, b) = feature_shape(16000, level, view);
                match (&t.data, b) {
                    (FeatureData::Vector(v), None) => assert_eq!(v.len(), a),
                    (FeatureData::Matrix { rows, cols, .. }, Some(bins)) => {
                        assert_eq!(*rows, a);
                        assert_eq!(*cols, bins);
                    }
                    _ => panic!("shape kind mismatch"),
                }
            }
        }
    }

    #[test]
    fn normalized_views_are_non_negative() {
        let signal: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.01).sin()).collect();
        for view in [View::Fft, View::Stft] {
            let t = make_feature(&signal, 1, view, Wavelet::Bior31).unwrap();
            assert!(t.normalized);
            assert!(t.data.values().iter().all(|&v| v >= 0.0));
        }
        let t = make_feature(&signal, 1, View::Waveform, Wavelet::Bior31).unwrap();
        assert!(!t.normalized);
    }
}
