//! Synthetic AVF cohort with flow-class-dependent acoustics.
//!
//! Each patient gets a cardiac pulse train: a systolic burst per cycle plus
//! a continuous background bruit. The flow class controls the burst carrier
//! band (low flow sits high-pitched and narrowband, adequate flow broadband
//! low-pitched, high flow intense low-frequency), the site-3 recording is an
//! attenuated, low-passed, delayed copy of site 2. All acoustic parameters
//! live in the config so thresholds can be tuned without code changes.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::signal_io::{
    FlowClass, Gender, PatientRecord, Recording, Site, PIPELINE_SAMPLE_RATE_HZ,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemographicsConfig {
    pub male_rate: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Additive age shift per flow class (mild association).
    pub age_class_shift: [f64; 3],
    /// HTN probability per flow class.
    pub htn_rate: [f64; 3],
    /// DM probability per flow class.
    pub dm_rate: [f64; 3],
}

impl Default for DemographicsConfig {
    fn default() -> Self {
        DemographicsConfig {
            male_rate: 0.596,
            age_mean: 67.6,
            age_sd: 13.3,
            age_class_shift: [5.0, 0.0, -4.0],
            htn_rate: [0.80, 0.72, 0.66],
            dm_rate: [0.80, 0.62, 0.50],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Flow-class proportions (low, adequate, high); must sum to 1.
    pub class_proportions: [f64; 3],
    pub seed: u64,
    pub heart_rate_range_bpm: (f64, f64),
    /// Burst carrier band per class, Hz.
    pub pitch_bands_hz: [(f64, f64); 3],
    /// Systolic burst decay constant per class, ms.
    pub burst_decay_ms: [f64; 3],
    /// Continuous-bruit level per class (relative to unit burst).
    pub continuous_level: [f64; 3],
    /// Overall amplitude scale per class.
    pub amplitude_scale: [f64; 3],
    /// Flow-band limits for drawing the measured flow, ml/min.
    pub flow_ranges: [(f64, f64); 3],
    pub site3_gain: f64,
    /// One-pole low-pass coefficient for the site-3 spectral tilt (0..1).
    pub site3_tilt: f64,
    pub site3_delay_ms: (f64, f64),
    /// Sensor noise level inside the auscultation segment.
    pub sensor_noise: f64,
    /// Near-silence level in the lead/tail pads.
    pub pad_noise: f64,
    /// Active auscultation duration, seconds.
    pub duration_seconds: f64,
    /// Blank-gap pad on each side, seconds (min, max).
    pub pad_seconds: (f64, f64),
    pub demographics: DemographicsConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 171,
            class_proportions: [0.26316, 0.47953, 0.25731],
            seed: 0,
            heart_rate_range_bpm: (55.0, 95.0),
            pitch_bands_hz: [(550.0, 850.0), (180.0, 320.0), (80.0, 150.0)],
            burst_decay_ms: [40.0, 70.0, 110.0],
            continuous_level: [0.18, 0.26, 0.42],
            amplitude_scale: [1.0, 1.0, 1.6],
            flow_ranges: [(300.0, 749.0), (750.0, 1500.0), (1501.0, 2600.0)],
            site3_gain: 0.7,
            site3_tilt: 0.45,
            site3_delay_ms: (5.0, 15.0),
            sensor_noise: 0.006,
            pad_noise: 0.002,
            duration_seconds: 4.2,
            pad_seconds: (0.35, 0.55),
            demographics: DemographicsConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::config(format!(
                "class proportions sum to {sum}, expected 1"
            )));
        }
        for (lo, hi) in self.pitch_bands_hz {
            if !(20.0 < lo && lo < hi && hi < 4000.0) {
                return Err(Error::config(format!(
                    "pitch band ({lo}, {hi}) outside (20, 4000) Hz"
                )));
            }
        }
        if self.n_patients == 0 {
            return Err(Error::config("n_patients must be positive"));
        }
        Ok(())
    }

    /// Exact per-class patient counts by largest remainder.
    pub fn class_counts(&self) -> [usize; 3] {
        let n = self.n_patients;
        let mut counts = [0usize; 3];
        let mut fracs = [(0usize, 0.0f64); 3];
        let mut assigned = 0;
        for c in 0..3 {
            let exact = self.class_proportions[c] * n as f64;
            counts[c] = exact.floor() as usize;
            fracs[c] = (c, exact - exact.floor());
            assigned += counts[c];
        }
        fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut left = n - assigned;
        let mut i = 0;
        while left > 0 {
            counts[fracs[i % 3].0] += 1;
            left -= 1;
            i += 1;
        }
        counts
    }

    /// Deterministic (seed-shuffled) class of patient `idx`.
    fn class_of(&self, idx: usize) -> FlowClass {
        let counts = self.class_counts();
        let mut labels = Vec::with_capacity(self.n_patients);
        for (c, &count) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(count));
        }
        let mut rng = seeding::stream_rng(self.seed, "synth-class-order", &[]);
        for i in (1..labels.len()).rev() {
            let j = rng.random_range(0..=i);
            labels.swap(i, j);
        }
        match labels[idx] {
            0 => FlowClass::Low,
            1 => FlowClass::Adequate,
            _ => FlowClass::High,
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Deterministically generate one patient: record plus both recordings.
pub fn synth_patient(
    config: &SynthConfig,
    idx: usize,
) -> Result<(PatientRecord, Recording, Recording)> {
    config.validate()?;
    if idx >= config.n_patients {
        return Err(Error::config(format!(
            "patient index {idx} out of range for {}",
            config.n_patients
        )));
    }
    let class = config.class_of(idx);
    let cls = class.label();
    let mut rng = seeding::stream_rng(config.seed, "synth-patient", &[idx as u64]);
    let patient_id = format!("synth{idx:04}");

    // demographics (mild class association)
    let demo = &config.demographics;
    let gender = if rng.random_range(0.0..1.0) < demo.male_rate {
        Gender::Male
    } else {
        Gender::Female
    };
    let age_raw = demo.age_mean + demo.age_class_shift[cls] + demo.age_sd * gaussian(&mut rng);
    let age = age_raw.clamp(25.0, 95.0).round() as u32;
    let htn = rng.random_range(0.0..1.0) < demo.htn_rate[cls];
    let dm = rng.random_range(0.0..1.0) < demo.dm_rate[cls];
    let (flow_lo, flow_hi) = config.flow_ranges[cls];
    let blood_flow_ml_min = rng.random_range(flow_lo..flow_hi);

    let record = PatientRecord {
        patient_id: patient_id.clone(),
        gender,
        age,
        htn,
        dm,
        blood_flow_ml_min,
    };

    // acoustic draws
    let fs = PIPELINE_SAMPLE_RATE_HZ as f64;
    let (hr_lo, hr_hi) = config.heart_rate_range_bpm;
    let heart_rate = rng.random_range(hr_lo..hr_hi);
    let cycle_len = 60.0 / heart_rate;
    let (f_lo, f_hi) = config.pitch_bands_hz[cls];
    let carrier = rng.random_range(f_lo..f_hi);
    let decay = config.burst_decay_ms[cls] / 1000.0;
    let cont_level = config.continuous_level[cls];
    let amp = config.amplitude_scale[cls];

    let n_active = (config.duration_seconds * fs).round() as usize;
    let mut active = vec![0.0f64; n_active];

    // continuous bruit: slow random-walk phase around the carrier keeps the
    // band centered without per-sample FFT work
    let cont_freq = (carrier * 0.8).max(50.0);
    let mut phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut drift = 0.0f64;
    for (i, v) in active.iter_mut().enumerate() {
        let _ = i;
        drift += 0.002 * gaussian(&mut rng);
        drift *= 0.995;
        phase += std::f64::consts::TAU * cont_freq / fs * (1.0 + drift * 0.2);
        *v += cont_level * phase.sin();
    }

    // systolic bursts
    let mut t_cycle = rng.random_range(0.0..cycle_len * 0.5);
    while t_cycle < config.duration_seconds {
        let f_burst = carrier * (1.0 + 0.03 * gaussian(&mut rng));
        let a_burst = amp * (1.0 + 0.10 * gaussian(&mut rng));
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let phi2 = rng.random_range(0.0..std::f64::consts::TAU);
        let start = (t_cycle * fs) as usize;
        let burst_len = ((decay * 10.0) * fs) as usize;
        for k in 0..burst_len {
            let i = start + k;
            if i >= n_active {
                break;
            }
            let t = k as f64 / fs;
            // gamma-like attack/decay envelope, unit peak at t = 2*decay
            let env = (t / (2.0 * decay)).powi(2) * (2.0 - t / decay).exp();
            let tone = (std::f64::consts::TAU * f_burst * t + phi).sin()
                + 0.3 * (2.0 * std::f64::consts::TAU * f_burst * t + phi2).sin();
            active[i] += a_burst * env * tone;
        }
        t_cycle += cycle_len * (1.0 + 0.02 * gaussian(&mut rng));
    }

    // sensor noise over the active segment
    for v in active.iter_mut() {
        *v += config.sensor_noise * gaussian(&mut rng);
    }

    // assemble with near-silent pads, normalized to a 0.7 peak
    let (pad_lo, pad_hi) = config.pad_seconds;
    let lead = (rng.random_range(pad_lo..pad_hi) * fs).round() as usize;
    let tail = (rng.random_range(pad_lo..pad_hi) * fs).round() as usize;
    let mut site2_samples = Vec::with_capacity(lead + n_active + tail);
    for _ in 0..lead {
        site2_samples.push(config.pad_noise * gaussian(&mut rng));
    }
    site2_samples.extend_from_slice(&active);
    for _ in 0..tail {
        site2_samples.push(config.pad_noise * gaussian(&mut rng));
    }
    let peak = site2_samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    for v in site2_samples.iter_mut() {
        *v *= 0.7 / peak;
    }

    // site 3: delayed, attenuated, low-passed copy with its own sensor noise
    let (d_lo, d_hi) = config.site3_delay_ms;
    let delay = ((rng.random_range(d_lo..d_hi) / 1000.0) * fs).round() as usize;
    let a = config.site3_tilt;
    let mut site3_samples = vec![0.0f64; site2_samples.len()];
    let mut lp = 0.0f64;
    for i in 0..site2_samples.len() {
        let src = if i >= delay { site2_samples[i - delay] } else { 0.0 };
        lp = a * lp + (1.0 - a) * src;
        site3_samples[i] = config.site3_gain * lp
            + 0.5 * config.pad_noise * gaussian(&mut rng);
    }

    let site2 = Recording {
        samples: site2_samples,
        sample_rate_hz: PIPELINE_SAMPLE_RATE_HZ,
        site: Site::Arterial,
        patient_id: patient_id.clone(),
    };
    let site3 = Recording {
        samples: site3_samples,
        sample_rate_hz: PIPELINE_SAMPLE_RATE_HZ,
        site: Site::Venous,
        patient_id,
    };
    Ok((record, site2, site3))
}

/// Generate the whole cohort in memory.
pub fn generate_cohort(config: &SynthConfig) -> Result<Vec<(PatientRecord, Recording, Recording)>> {
    (0..config.n_patients)
        .map(|idx| synth_patient(config, idx))
        .collect()
}

/// Materialize the cohort exactly as `signal_io::load_cohort` consumes it:
/// WAV files plus a metadata CSV.
pub fn write_cohort(config: &SynthConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;
    let mut wtr = csv::Writer::from_path(dir.join("cohort.csv"))
        .map_err(|e| Error::format(format!("cannot write metadata: {e}")))?;
    wtr.write_record([
        "patient_id",
        "gender",
        "age",
        "htn",
        "dm",
        "blood_flow_ml_min",
        "audio_site2",
        "audio_site3",
    ])
    .map_err(|e| Error::format(e.to_string()))?;
    for idx in 0..config.n_patients {
        let (record, site2, site3) = synth_patient(config, idx)?;
        let f2 = format!("{}_site2.wav", record.patient_id);
        let f3 = format!("{}_site3.wav", record.patient_id);
        crate::signal_io::write_wav(&audio_dir.join(&f2), &site2)?;
        crate::signal_io::write_wav(&audio_dir.join(&f3), &site3)?;
        wtr.write_record([
            record.patient_id.as_str(),
            match record.gender {
                Gender::Male => "male",
                Gender::Female => "female",
            },
            &record.age.to_string(),
            if record.htn { "yes" } else { "no" },
            if record.dm { "yes" } else { "no" },
            &format!("{:.1}", record.blood_flow_ml_min),
            &f2,
            &f3,
        ])
        .map_err(|e| Error::format(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Spectral centroid of a signal (Hz), for oracle checks.
pub fn spectral_centroid(samples: &[f64], sample_rate_hz: u32) -> f64 {
    let mags = crate::transforms::magnitude_spectrum(samples);
    let n = samples.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        let f = k as f64 * sample_rate_hz as f64 / n;
        num += f * m;
        den += m;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::preprocess;

    #[test]
    fn determinism_and_count_law() {
        let config = SynthConfig {
            n_patients: 171,
            ..SynthConfig::default()
        };
        assert_eq!(config.class_counts(), [45, 82, 44]);
        let (a_rec, a2, a3) = synth_patient(&config, 17).unwrap();
        let (b_rec, b2, b3) = synth_patient(&config, 17).unwrap();
        assert_eq!(a_rec.patient_id, b_rec.patient_id);
        assert_eq!(a_rec.blood_flow_ml_min, b_rec.blood_flow_ml_min);
        assert_eq!(a2.samples, b2.samples);
        assert_eq!(a3.samples, b3.samples);
    }

    #[test]
    fn site3_energy_below_site2_for_every_patient() {
        let config = SynthConfig {
            n_patients: 40,
            ..SynthConfig::default()
        };
        for idx in 0..40 {
            let (_, s2, s3) = synth_patient(&config, idx).unwrap();
            let e2: f64 = s2.samples.iter().map(|v| v * v).sum();
            let e3: f64 = s3.samples.iter().map(|v| v * v).sum();
            assert!(e3 < e2, "patient {idx}: {e3} !< {e2}");
        }
    }

    #[test]
    fn recordings_survive_preprocessing_idempotently() {
        let config = SynthConfig {
            n_patients: 8,
            ..SynthConfig::default()
        };
        for idx in 0..8 {
            let (_, s2, _) = synth_patient(&config, idx).unwrap();
            let once = preprocess(&s2, 2.0).unwrap();
            assert_eq!(once.samples.len(), 16000);
            let twice = preprocess(&once, 2.0).unwrap();
            for (a, b) in once.samples.iter().zip(&twice.samples) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centroid_ordering_holds_for_most_patients() {
        let config = SynthConfig {
            n_patients: 200,
            seed: 5,
            ..SynthConfig::default()
        };
        let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); 3];
        for idx in 0..config.n_patients {
            let (record, s2, _) = synth_patient(&config, idx).unwrap();
            let pre = preprocess(&s2, 2.0).unwrap();
            let centroid = spectral_centroid(&pre.samples, pre.sample_rate_hz);
            by_class[record.flow_class().label()].push(centroid);
        }
        // pairwise ordering statistic (fraction of correctly ordered pairs)
        let ordered = |hi: &[f64], lo: &[f64]| {
            let mut wins = 0usize;
            let mut total = 0usize;
            for &a in hi {
                for &b in lo {
                    total += 1;
                    if a > b {
                        wins += 1;
                    }
                }
            }
            wins as f64 / total as f64
        };
        let low_vs_adequate = ordered(&by_class[0], &by_class[1]);
        let adequate_vs_high = ordered(&by_class[1], &by_class[2]);
        assert!(low_vs_adequate >= 0.9, "low>adequate: {low_vs_adequate}");
        assert!(adequate_vs_high >= 0.9, "adequate>high: {adequate_vs_high}");
    }

    #[test]
    fn oracle_features_linearly_separate_classes() {
        let config = SynthConfig {
            n_patients: 500,
            seed: 7,
            ..SynthConfig::default()
        };
        let mut feats: Vec<(f64, usize)> = Vec::new();
        for idx in 0..config.n_patients {
            let (record, s2, _) = synth_patient(&config, idx).unwrap();
            let pre = preprocess(&s2, 2.0).unwrap();
            let centroid = spectral_centroid(&pre.samples, pre.sample_rate_hz);
            feats.push((centroid, record.flow_class().label()));
        }
        // two centroid thresholds form a linear classifier; grid-search them
        let mut best = 0usize;
        for t1 in (50..400).step_by(5) {
            for t2 in (300..900).step_by(5) {
                if t2 <= t1 {
                    continue;
                }
                let correct = feats
                    .iter()
                    .filter(|&&(c, l)| {
                        let pred = if c < t1 as f64 {
                            2
                        } else if c < t2 as f64 {
                            1
                        } else {
                            0
                        };
                        pred == l
                    })
                    .count();
                best = best.max(correct);
            }
        }
        let acc = best as f64 / feats.len() as f64;
        assert!(acc >= 0.95, "separability floor violated: {acc}");
    }

    #[test]
    fn cohort_roundtrip_through_signal_io() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_patients: 4,
            ..SynthConfig::default()
        };
        write_cohort(&config, dir.path()).unwrap();
        let cohort =
            crate::signal_io::load_cohort(&dir.path().join("cohort.csv"), &dir.path().join("audio"))
                .unwrap();
        assert_eq!(cohort.patients.len(), 4);
        assert!(cohort.exclusions.is_empty());
        for p in &cohort.patients {
            assert_eq!(p.site2.sample_rate_hz, PIPELINE_SAMPLE_RATE_HZ);
            assert!(p.site2.duration_seconds() > 4.0);
        }
    }
}
