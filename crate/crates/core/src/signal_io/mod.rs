//! Audio and cohort metadata I/O plus waveform preprocessing.
//!
//! Preprocessing applies three steps to a raw recording: silence trimming at
//! the edges, peak-amplitude normalization, and extraction of a centered
//! fixed-length segment.

mod wav;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use wav::{read_wav as read_wav_file, write_wav as write_wav_file, WavData};

/// Pipeline sample rate. Cohort inputs must already be at this rate.
pub const PIPELINE_SAMPLE_RATE_HZ: u32 = 8000;

/// Moving-RMS window used by the silence trimmer (50 ms).
pub const TRIM_RMS_WINDOW_SECONDS: f64 = 0.050;

/// Edge regions where moving RMS falls below this fraction of the peak
/// moving RMS are treated as blank gaps.
pub const TRIM_RMS_THRESHOLD: f64 = 0.02;

/// Auscultation position along the fistula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Site {
    Anastomosis = 1,
    Arterial = 2,
    Venous = 3,
}

impl Site {
    pub fn index(self) -> u8 {
        self as u8
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Site::Anastomosis => write!(f, "site1"),
            Site::Arterial => write!(f, "site2"),
            Site::Venous => write!(f, "site3"),
        }
    }
}

/// One mono PCM waveform with its provenance.
#[derive(Debug, Clone)]
pub struct Recording {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub site: Site,
    pub patient_id: String,
}

impl Recording {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Blood-flow bands: below 750, 750-1500 inclusive, above 1500 ml/min.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlowClass {
    Low,
    Adequate,
    High,
}

impl FlowClass {
    /// Class index used as the downstream label (0, 1, 2).
    pub fn label(self) -> usize {
        match self {
            FlowClass::Low => 0,
            FlowClass::Adequate => 1,
            FlowClass::High => 2,
        }
    }

    pub fn from_flow(blood_flow_ml_min: f64) -> FlowClass {
        if blood_flow_ml_min < 750.0 {
            FlowClass::Low
        } else if blood_flow_ml_min <= 1500.0 {
            FlowClass::Adequate
        } else {
            FlowClass::High
        }
    }
}

impl std::fmt::Display for FlowClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlowClass::Low => write!(f, "low"),
            FlowClass::Adequate => write!(f, "adequate"),
            FlowClass::High => write!(f, "high"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

/// Demographics and flow measurement for one patient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub gender: Gender,
    pub age: u32,
    pub htn: bool,
    pub dm: bool,
    pub blood_flow_ml_min: f64,
}

impl PatientRecord {
    pub fn flow_class(&self) -> FlowClass {
        FlowClass::from_flow(self.blood_flow_ml_min)
    }
}

/// Read one WAV file into a tagged [`Recording`].
pub fn read_wav(path: &Path, site: Site, patient_id: &str) -> Result<Recording> {
    let wav = wav::read_wav(path)?;
    Ok(Recording {
        samples: wav.samples,
        sample_rate_hz: wav.sample_rate_hz,
        site,
        patient_id: patient_id.to_string(),
    })
}

/// Write a recording as 16-bit mono PCM.
pub fn write_wav(path: &Path, rec: &Recording) -> Result<()> {
    wav::write_wav(path, &rec.samples, rec.sample_rate_hz)
}

/// Moving RMS over windows of `window` samples; one value per window start.
fn moving_rms(samples: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1).min(samples.len());
    let n_out = samples.len() - window + 1;
    let mut sq_sum: f64 = samples[..window].iter().map(|v| v * v).sum();
    let mut out = Vec::with_capacity(n_out);
    out.push((sq_sum / window as f64).max(0.0).sqrt());
    for i in 1..n_out {
        sq_sum += samples[i + window - 1] * samples[i + window - 1];
        sq_sum -= samples[i - 1] * samples[i - 1];
        out.push((sq_sum / window as f64).max(0.0).sqrt());
    }
    out
}

/// Trim blank edges, normalize amplitude, and cut the centered segment.
///
/// Steps: (1) drop leading/trailing regions whose 50 ms moving RMS is below
/// 2% of the peak moving RMS; (2) divide by the peak absolute amplitude;
/// (3) extract a centered window of exactly `segment_seconds`. The window is
/// re-normalized after extraction so the output invariant
/// `max(|samples|) == 1.0` holds even when the global peak fell outside the
/// centered window.
pub fn preprocess(rec: &Recording, segment_seconds: f64) -> Result<Recording> {
    if !(segment_seconds > 0.0) {
        return Err(Error::config("segment_seconds must be positive"));
    }
    let n = rec.samples.len();
    if n == 0 {
        return Err(Error::data("empty recording"));
    }

    let window = ((TRIM_RMS_WINDOW_SECONDS * rec.sample_rate_hz as f64).round() as usize).max(1);
    let rms = moving_rms(&rec.samples, window);
    let peak_rms = rms.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak_rms <= 0.0 {
        return Err(Error::data(format!(
            "all-silent recording {} ({})",
            rec.patient_id, rec.site
        )));
    }
    let threshold = TRIM_RMS_THRESHOLD * peak_rms;
    let first = rms.iter().position(|&v| v >= threshold).unwrap();
    let last = rms.iter().rposition(|&v| v >= threshold).unwrap();
    let start = first;
    let end = (last + window.min(n)).min(n);
    let trimmed = &rec.samples[start..end];

    let peak = trimmed.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak <= 0.0 {
        return Err(Error::data("trimmed recording is all-zero"));
    }

    let seg_len = (segment_seconds * rec.sample_rate_hz as f64).round() as usize;
    if trimmed.len() < seg_len {
        return Err(Error::data(format!(
            "recording {} ({}) has {:.3} s usable audio; {:.3} s segment requested",
            rec.patient_id,
            rec.site,
            trimmed.len() as f64 / rec.sample_rate_hz as f64,
            segment_seconds
        )));
    }
    let offset = (trimmed.len() - seg_len) / 2;
    let segment = &trimmed[offset..offset + seg_len];
    let seg_peak = segment.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if seg_peak <= 0.0 {
        return Err(Error::data("centered segment is all-zero"));
    }
    let samples = segment.iter().map(|v| v / seg_peak).collect();

    Ok(Recording {
        samples,
        sample_rate_hz: rec.sample_rate_hz,
        site: rec.site,
        patient_id: rec.patient_id.clone(),
    })
}

/// One cohort patient with both puncture-site recordings present.
#[derive(Debug, Clone)]
pub struct CohortPatient {
    pub record: PatientRecord,
    pub site2: Recording,
    pub site3: Recording,
}

/// A patient dropped during loading, with the reason.
#[derive(Debug, Clone)]
pub struct Exclusion {
    pub patient_id: String,
    pub reason: String,
}

/// Loaded cohort plus the exclusion log.
#[derive(Debug)]
pub struct Cohort {
    pub patients: Vec<CohortPatient>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Deserialize)]
struct MetadataRow {
    patient_id: String,
    gender: String,
    age: String,
    htn: String,
    dm: String,
    blood_flow_ml_min: String,
    audio_site2: String,
    audio_site3: String,
}

fn parse_bool(field: &str, value: &str, line: u64) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "yes" | "true" | "1" => Ok(true),
        "no" | "false" | "0" => Ok(false),
        other => Err(Error::format(format!(
            "line {line}: invalid {field} value {other:?} (expected yes/no)"
        ))),
    }
}

/// Load the cohort metadata CSV and both site recordings per patient.
///
/// Patients missing the site-2 or site-3 recording or the flow label are
/// excluded (logged, not fatal). Malformed rows are hard errors naming the
/// line. An empty cohort after exclusion is fatal.
pub fn load_cohort(metadata_path: &Path, audio_dir: &Path) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(metadata_path)
        .map_err(|e| Error::format(format!("cannot read {}: {e}", metadata_path.display())))?;

    let mut patients = Vec::new();
    let mut exclusions = Vec::new();
    let mut seen = BTreeSet::new();

    for row in reader.deserialize::<MetadataRow>() {
        let row = row.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_else(|| "?".into());
            Error::format(format!("line {line}: malformed metadata row: {e}"))
        })?;
        // csv positions point at the record start; recompute for messages
        let line = (patients.len() + exclusions.len() + 2) as u64;

        if row.patient_id.is_empty() {
            return Err(Error::format(format!("line {line}: empty patient_id")));
        }
        if !seen.insert(row.patient_id.clone()) {
            return Err(Error::format(format!(
                "line {line}: duplicate patient_id {:?}",
                row.patient_id
            )));
        }

        // malformed fields are hard errors; only missing flow labels or
        // missing recordings downgrade to exclusions
        let gender = match row.gender.to_ascii_lowercase().as_str() {
            "male" | "m" => Gender::Male,
            "female" | "f" => Gender::Female,
            other => {
                return Err(Error::format(format!(
                    "line {line}: invalid gender {other:?}"
                )))
            }
        };
        let age: u32 = row.age.parse().map_err(|_| {
            Error::format(format!("line {line}: invalid age {:?}", row.age))
        })?;
        let htn = parse_bool("htn", &row.htn, line)?;
        let dm = parse_bool("dm", &row.dm, line)?;
        let blood_flow_ml_min: Option<f64> = if row.blood_flow_ml_min.is_empty() {
            None
        } else {
            let f: f64 = row.blood_flow_ml_min.parse().map_err(|_| {
                Error::format(format!(
                    "line {line}: invalid blood_flow_ml_min {:?}",
                    row.blood_flow_ml_min
                ))
            })?;
            if !(f >= 0.0) {
                return Err(Error::format(format!(
                    "line {line}: blood_flow_ml_min must be non-negative"
                )));
            }
            Some(f)
        };

        let Some(blood_flow_ml_min) = blood_flow_ml_min else {
            exclusions.push(Exclusion {
                patient_id: row.patient_id,
                reason: "missing blood-flow label".into(),
            });
            continue;
        };
        let site2_path = (!row.audio_site2.is_empty()).then(|| audio_dir.join(&row.audio_site2));
        let site3_path = (!row.audio_site3.is_empty()).then(|| audio_dir.join(&row.audio_site3));
        let missing_site = match (&site2_path, &site3_path) {
            (None, _) => Some("site-2"),
            (_, None) => Some("site-3"),
            (Some(p2), _) if !p2.is_file() => Some("site-2"),
            (_, Some(p3)) if !p3.is_file() => Some("site-3"),
            _ => None,
        };
        if let Some(which) = missing_site {
            exclusions.push(Exclusion {
                patient_id: row.patient_id,
                reason: format!("missing {which} recording"),
            });
            continue;
        }

        let record = PatientRecord {
            patient_id: row.patient_id.clone(),
            gender,
            age,
            htn,
            dm,
            blood_flow_ml_min,
        };
        let site2 = read_wav(&site2_path.unwrap(), Site::Arterial, &row.patient_id)?;
        let site3 = read_wav(&site3_path.unwrap(), Site::Venous, &row.patient_id)?;
        for rec in [&site2, &site3] {
            if rec.sample_rate_hz != PIPELINE_SAMPLE_RATE_HZ {
                return Err(Error::data(format!(
                    "recording {} ({}) has sample rate {} Hz; pipeline requires {} Hz",
                    rec.patient_id, rec.site, rec.sample_rate_hz, PIPELINE_SAMPLE_RATE_HZ
                )));
            }
        }
        patients.push(CohortPatient {
            record,
            site2,
            site3,
        });
    }

    if patients.is_empty() {
        return Err(Error::data(format!(
            "empty cohort after exclusion ({} rows excluded)",
            exclusions.len()
        )));
    }
    Ok(Cohort {
        patients,
        exclusions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone_recording(
        lead: usize,
        body: usize,
        tail: usize,
        amp: f64,
        floor: f64,
    ) -> Recording {
        let fs = PIPELINE_SAMPLE_RATE_HZ as f64;
        let mut samples = vec![0.0; lead];
        for i in 0..body {
            let t = i as f64 / fs;
            let tone = amp * (2.0 * std::f64::consts::PI * 220.0 * t).sin();
            let hum = floor * (2.0 * std::f64::consts::PI * 97.0 * t).sin();
            samples.push(tone + hum);
        }
        samples.extend(std::iter::repeat(0.0).take(tail));
        Recording {
            samples,
            sample_rate_hz: PIPELINE_SAMPLE_RATE_HZ,
            site: Site::Arterial,
            patient_id: "p0".into(),
        }
    }

    #[test]
    fn trims_padding_and_normalizes() {
        // 1 s zero padding around a 3 s tone, 2 s segment requested
        let rec = tone_recording(8000, 24000, 8000, 0.25, 0.02);
        let out = preprocess(&rec, 2.0).unwrap();
        assert_eq!(out.samples.len(), 16000);
        let peak = out.peak();
        assert!((peak - 1.0).abs() < 1e-12, "peak {peak}");
    }

    #[test]
    fn normalizes_quarter_peak_to_unit() {
        let rec = tone_recording(0, 24000, 0, 0.25, 0.02);
        let out = preprocess(&rec, 2.0).unwrap();
        assert!((out.peak() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_too_short_usable_audio() {
        // 2.5 s usable audio but 3 s segment requested
        let rec = tone_recording(4000, 20000, 4000, 0.5, 0.02);
        let err = preprocess(&rec, 3.0).unwrap_err().to_string();
        assert!(err.contains("usable audio"), "{err}");
    }

    #[test]
    fn rejects_all_silent_input() {
        let rec = Recording {
            samples: vec![0.0; 16000],
            sample_rate_hz: PIPELINE_SAMPLE_RATE_HZ,
            site: Site::Arterial,
            patient_id: "p0".into(),
        };
        assert!(preprocess(&rec, 1.0).is_err());
    }

    #[test]
    fn preprocess_is_idempotent_on_continuously_active_signals() {
        // the hum keeps moving RMS above the trim threshold everywhere
        let rec = tone_recording(3000, 30000, 3000, 0.8, 0.1);
        let once = preprocess(&rec, 2.0).unwrap();
        let twice = preprocess(&once, 2.0).unwrap();
        assert_eq!(once.samples.len(), twice.samples.len());
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_class_boundaries() {
        assert_eq!(FlowClass::from_flow(749.999), FlowClass::Low);
        assert_eq!(FlowClass::from_flow(750.0), FlowClass::Adequate);
        assert_eq!(FlowClass::from_flow(1500.0), FlowClass::Adequate);
        assert_eq!(FlowClass::from_flow(1500.5), FlowClass::High);
        // class changes only at the two boundaries
        let mut prev = FlowClass::from_flow(0.0);
        let mut changes = Vec::new();
        for i in 1..40000 {
            let f = i as f64 * 0.1;
            let c = FlowClass::from_flow(f);
            if c != prev {
                changes.push(f);
                prev = c;
            }
        }
        assert_eq!(changes.len(), 2);
        assert!((changes[0] - 750.0).abs() < 0.11);
        assert!((changes[1] - 1500.1).abs() < 0.11);
    }

    #[test]
    fn cohort_excludes_incomplete_patients() {
        let dir = tempfile::tempdir().unwrap();
        let audio = dir.path().join("audio");
        std::fs::create_dir(&audio).unwrap();
        for name in ["a2.wav", "a3.wav", "b2.wav", "c2.wav", "c3.wav"] {
            let rec = tone_recording(0, 8000, 0, 0.5, 0.02);
            write_wav(&audio.join(name), &rec).unwrap();
        }
        let meta = dir.path().join("cohort.csv");
        std::fs::write(
            &meta,
            "patient_id,gender,age,htn,dm,blood_flow_ml_min,audio_site2,audio_site3\n\
             a,male,60,yes,no,800,a2.wav,a3.wav\n\
             b,female,70,no,no,500,b2.wav,\n\
             c,male,65,yes,yes,1600,c2.wav,c3.wav\n",
        )
        .unwrap();
        let cohort = load_cohort(&meta, &audio).unwrap();
        assert_eq!(cohort.patients.len(), 2);
        assert_eq!(cohort.exclusions.len(), 1);
        assert_eq!(cohort.exclusions[0].patient_id, "b");
        assert_eq!(cohort.patients[0].record.flow_class(), FlowClass::Adequate);
        assert_eq!(cohort.patients[1].record.flow_class(), FlowClass::High);
    }

    #[test]
    fn cohort_rejects_malformed_rows_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let meta = dir.path().join("cohort.csv");
        std::fs::write(
            &meta,
            "patient_id,gender,age,htn,dm,blood_flow_ml_min,audio_site2,audio_site3\n\
             a,male,sixty,yes,no,800,a2.wav,a3.wav\n",
        )
        .unwrap();
        let err = load_cohort(&meta, dir.path()).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }
}
