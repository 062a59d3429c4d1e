//! Noise synthesis and SNR mixing.
//!
//! Seven noise types (five colored, two synthetic babble variants) are mixed
//! into each clean recording at two SNR levels, giving 14 variants per
//! recording. Every noise stream is derived deterministically from
//! `(seed, patient, site, kind, snr)`, so parallel generation order cannot
//! change results.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::signal_io::{Recording, Site, PIPELINE_SAMPLE_RATE_HZ};

/// Default mixing volumes, as signal-to-noise ratios in dB.
pub const DEFAULT_SNR_LEVELS_DB: [f64; 2] = [5.0, 15.0];

/// Noise kinds; the count per recording is `7 kinds x 2 SNRs = 14`.
pub const NOISE_KINDS: [NoiseKind; 7] = [
    NoiseKind::White,
    NoiseKind::Blue,
    NoiseKind::Violet,
    NoiseKind::Brown,
    NoiseKind::Pink,
    NoiseKind::Babble1,
    NoiseKind::Babble2,
];

/// Number of variants each clean recording expands to.
pub const VARIANTS_PER_RECORDING: usize = NOISE_KINDS.len() * DEFAULT_SNR_LEVELS_DB.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    White,
    Blue,
    Violet,
    Brown,
    Pink,
    Babble1,
    Babble2,
}

impl NoiseKind {
    /// PSD exponent alpha with PSD proportional to f^alpha; babble has none.
    pub fn spectral_exponent(self) -> Option<f64> {
        match self {
            NoiseKind::White => Some(0.0),
            NoiseKind::Blue => Some(1.0),
            NoiseKind::Violet => Some(2.0),
            NoiseKind::Brown => Some(-2.0),
            NoiseKind::Pink => Some(-1.0),
            NoiseKind::Babble1 | NoiseKind::Babble2 => None,
        }
    }

    pub fn index(self) -> u64 {
        NOISE_KINDS.iter().position(|&k| k == self).unwrap() as u64
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Blue => "blue",
            NoiseKind::Violet => "violet",
            NoiseKind::Brown => "brown",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble1 => "babble1",
            NoiseKind::Babble2 => "babble2",
        }
    }
}

/// Recipe for one deterministic noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    /// Materialize the stream at the given length.
    pub fn generate(&self, length: usize) -> Result<Vec<f64>> {
        match self.kind {
            NoiseKind::Babble1 => gen_babble(length, self.seed, 1),
            NoiseKind::Babble2 => gen_babble(length, self.seed, 2),
            _ => gen_colored_noise(self.kind, length, self.seed),
        }
    }
}

/// One noise-mixed recording.
#[derive(Debug, Clone)]
pub struct NoisyVariant {
    pub patient_id: String,
    pub site: Site,
    pub noise: NoiseSpec,
    pub snr_db: f64,
    /// Index into the two-level SNR schedule (0 or 1).
    pub snr_index: u8,
    /// Gain applied to the unit-RMS noise before adding.
    pub noise_scale: f64,
    pub samples: Vec<f64>,
}

fn white_base(length: usize, seed: u64, domain: &str, parts: &[u64]) -> Vec<f64> {
    let mut rng = seeding::stream_rng(seed, domain, parts);
    (0..length)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

fn rms(samples: &[f64]) -> f64 {
    (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt()
}

fn normalize_rms(samples: &mut [f64]) -> Result<()> {
    let r = rms(samples);
    if r <= 0.0 {
        return Err(Error::numeric("zero-power noise stream"));
    }
    for v in samples.iter_mut() {
        *v /= r;
    }
    Ok(())
}

/// Shape a white base in the frequency domain with per-bin amplitude
/// factors, returning the real time-domain signal.
fn spectral_shape(base: &[f64], factor: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = base.len();
    let fs = PIPELINE_SAMPLE_RATE_HZ as f64;
    let mut buf: Vec<Complex<f64>> = base.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        // two-sided symmetric frequency of bin k
        let f = (k.min(n - k)) as f64 * fs / n as f64;
        *c *= factor(f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Colored noise by spectral shaping: white Gaussian base, per-bin gain
/// f^(alpha/2), unit-RMS output. The DC bin is zeroed (required for the
/// negative exponents, harmless otherwise).
pub fn gen_colored_noise(kind: NoiseKind, length: usize, seed: u64) -> Result<Vec<f64>> {
    let alpha = kind.spectral_exponent().ok_or_else(|| {
        Error::config(format!(
            "gen_colored_noise needs a colored kind, got {}",
            kind.name()
        ))
    })?;
    if length == 0 {
        return Err(Error::data("noise length must be positive"));
    }
    let base = white_base(length, seed, "noise-colored", &[kind.index(), length as u64]);
    let mut shaped = if alpha == 0.0 {
        base
    } else {
        spectral_shape(&base, |f| if f <= 0.0 { 0.0 } else { f.powf(alpha / 2.0) })
    };
    normalize_rms(&mut shaped)?;
    Ok(shaped)
}

/// Synthetic babble: amplitude-modulated band-limited streams with
/// formant-like centers, summed and normalized to unit RMS.
///
/// Variant 1 sums 8 streams, variant 2 sums 16.
pub fn gen_babble(length: usize, seed: u64, variant: u8) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::data("noise length must be positive"));
    }
    let n_streams = match variant {
        1 => 8,
        2 => 16,
        other => {
            return Err(Error::config(format!(
                "babble variant must be 1 or 2, got {other}"
            )))
        }
    };
    let fs = PIPELINE_SAMPLE_RATE_HZ as f64;
    let mut mix = vec![0.0; length];
    for s in 0..n_streams {
        let mut rng = seeding::stream_rng(seed, "noise-babble", &[variant as u64, s, length as u64]);
        // log-uniform formant-like center, proportional bandwidth
        let center = 300.0 * (3000.0f64 / 300.0).powf(rng.random_range(0.0..1.0));
        let sigma = 0.15 * center;
        let mod_rate: f64 = rng.random_range(2.0..8.0);
        let mod_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let base: Vec<f64> = (0..length).map(|_| StandardNormal.sample(&mut rng)).collect();
        let band = spectral_shape(&base, |f| {
            if f <= 0.0 {
                0.0
            } else {
                (-(f - center) * (f - center) / (2.0 * sigma * sigma)).exp()
            }
        });
        for (i, v) in band.iter().enumerate() {
            let t = i as f64 / fs;
            let env = 0.5 * (1.0 - (std::f64::consts::TAU * mod_rate * t + mod_phase).cos());
            mix[i] += v * env;
        }
    }
    normalize_rms(&mut mix)?;
    Ok(mix)
}

/// Mean signal power.
fn power(samples: &[f64]) -> f64 {
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64
}

/// Scale `noise` so the clean/noise power ratio hits `snr_db`, then add.
///
/// The output is deliberately not re-normalized or clipped: the clean target
/// must stay sample-aligned with the mixture for the noisy-to-clean
/// objective.
pub fn mix_at_snr(
    clean: &Recording,
    noise: &[f64],
    spec: NoiseSpec,
    snr_db: f64,
    snr_index: u8,
) -> Result<NoisyVariant> {
    let n = clean.samples.len();
    if noise.len() < n {
        return Err(Error::data(format!(
            "noise shorter than clean signal ({} < {n})",
            noise.len()
        )));
    }
    let p_clean = power(&clean.samples);
    let p_noise = power(&noise[..n]);
    if p_clean <= 0.0 {
        return Err(Error::data("zero-power clean signal"));
    }
    if p_noise <= 0.0 {
        return Err(Error::data("zero-power noise"));
    }
    let target_noise_power = p_clean / 10f64.powf(snr_db / 10.0);
    let scale = (target_noise_power / p_noise).sqrt();
    let samples: Vec<f64> = clean
        .samples
        .iter()
        .zip(noise)
        .map(|(&c, &w)| c + scale * w)
        .collect();
    Ok(NoisyVariant {
        patient_id: clean.patient_id.clone(),
        site: clean.site,
        noise: spec,
        snr_db,
        snr_index,
        noise_scale: scale,
        samples,
    })
}

/// Expand every recording into its 14 noisy variants.
///
/// The per-variant noise seed is derived from
/// `(seed, patient, site, kind, snr index)`, making the result a pure
/// function of `(recordings, snr_levels, seed)`.
pub fn expand_cohort(
    recordings: &[Recording],
    snr_levels_db: [f64; 2],
    seed: u64,
) -> Result<Vec<NoisyVariant>> {
    let mut out = Vec::with_capacity(recordings.len() * VARIANTS_PER_RECORDING);
    for rec in recordings {
        out.extend(expand_recording(rec, snr_levels_db, seed)?);
    }
    Ok(out)
}

/// The 14 variants of a single recording (streaming-friendly form).
pub fn expand_recording(
    rec: &Recording,
    snr_levels_db: [f64; 2],
    seed: u64,
) -> Result<Vec<NoisyVariant>> {
    let mut out = Vec::with_capacity(VARIANTS_PER_RECORDING);
    let patient_part = seeding::part_from_str(&rec.patient_id);
    for kind in NOISE_KINDS {
        for (snr_index, &snr_db) in snr_levels_db.iter().enumerate() {
            let noise_seed = seeding::derive_seed(
                seed,
                "augment",
                &[patient_part, rec.site.index() as u64, kind.index(), snr_index as u64],
            );
            let spec = NoiseSpec {
                kind,
                seed: noise_seed,
            };
            let noise = spec.generate(rec.samples.len())?;
            out.push(mix_at_snr(rec, &noise, spec, snr_db, snr_index as u8)?);
        }
    }
    Ok(out)
}

/// Write variants as WAV files plus an index CSV (for inspection; WAV
/// quantization clips, the in-memory path does not).
pub fn materialize(variants: &[NoisyVariant], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let index_path = dir.join("index.csv");
    let mut wtr = csv::Writer::from_path(&index_path)
        .map_err(|e| Error::format(format!("cannot write index: {e}")))?;
    wtr.write_record(["patient_id", "site", "kind", "snr_db", "path"])
        .map_err(|e| Error::format(e.to_string()))?;
    for v in variants {
        let name = format!(
            "{}_{}_{}_snr{}.wav",
            v.patient_id,
            v.site,
            v.noise.kind.name(),
            v.snr_index
        );
        let path = dir.join(&name);
        crate::signal_io::write_wav_file(&path, &v.samples, PIPELINE_SAMPLE_RATE_HZ)?;
        wtr.write_record([
            v.patient_id.as_str(),
            &v.site.to_string(),
            v.noise.kind.name(),
            &format!("{}", v.snr_db),
            &name,
        ])
        .map_err(|e| Error::format(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
