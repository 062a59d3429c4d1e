//! End-to-end orchestration: cohort preparation, pretraining datasets,
//! latent extraction, experiment assembly, presets, and report rendering.
//!
//! Flow (one experiment cell): preprocess the cohort, split patients 80/20,
//! pretrain the autoencoder on site-2 features of the training patients,
//! encode the test patients' features at both sites, combine sites, then
//! run the ten-run downstream protocol on the resulting latents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{self, NoiseKind, DEFAULT_SNR_LEVELS_DB};
use crate::downstream::{
    run_experiment, ClassifierKind, ExperimentConfig, ExperimentData, GbtConfig, MetricReport,
    Sample, SvmConfig,
};
use crate::error::{Error, Result};
use crate::latent::{
    combine_sites, extract_latents, CombineOp, FeatureItem, LatentVector, SiteTag, VariantTag,
};
use crate::nnet::{
    load_checkpoint, save_checkpoint, train, Autoencoder, ConvAe, DenseAe, TrainConfig, TrainData,
    TrainScheme, CONV_FILTERS, DENSE_WIDTHS, LEAKY_SLOPE,
};
use crate::seeding;
use crate::signal_io::{preprocess, PatientRecord, Recording, Site};
use crate::synthdata;
use crate::transforms::{make_feature, FeatureData, View, Wavelet};

/// Pipeline-wide knobs shared by every stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub segment_seconds: f64,
    pub wavelet: Wavelet,
    pub snr_levels_db: [f64; 2],
    /// Patient fraction used to pretrain the autoencoder.
    pub pretrain_fraction: f64,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub master_seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            segment_seconds: 2.0,
            wavelet: Wavelet::Bior31,
            snr_levels_db: DEFAULT_SNR_LEVELS_DB,
            pretrain_fraction: 0.8,
            pretrain_epochs: 6,
            batch_size: 32,
            learning_rate: 1e-3,
            master_seed: 0,
        }
    }
}

/// Which feature view feeds the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub level: u8,
    pub view: View,
}

impl FeatureSpec {
    pub fn key(&self) -> String {
        format!("l{}-{}", self.level, self.view.name())
    }
}

/// A preprocessed cohort patient.
#[derive(Debug, Clone)]
pub struct PreparedPatient {
    pub record: PatientRecord,
    pub site2: Recording,
    pub site3: Recording,
}

/// Preprocess both sites of every patient to the fixed segment.
pub fn prepare_cohort(
    raw: &[(PatientRecord, Recording, Recording)],
    segment_seconds: f64,
) -> Result<Vec<PreparedPatient>> {
    raw.iter()
        .map(|(record, s2, s3)| {
            Ok(PreparedPatient {
                record: record.clone(),
                site2: preprocess(s2, segment_seconds)?,
                site3: preprocess(s3, segment_seconds)?,
            })
        })
        .collect()
}

/// 80/20 split by patient; returns (train, test) indices into `patients`.
pub fn pretrain_split(
    n_patients: usize,
    fraction: f64,
    master_seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    use rand::Rng;
    let mut order: Vec<usize> = (0..n_patients).collect();
    let mut rng = seeding::stream_rng(master_seed, "pretrain-split", &[]);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((n_patients as f64 * fraction).round() as usize).clamp(1, n_patients - 1);
    let train = order[..n_train].to_vec();
    let test = order[n_train..].to_vec();
    (train, test)
}

/// Flattened model-input values of one (possibly noise-mixed) signal.
///
/// STFT matrices transpose to channel-major (bins as channels).
pub fn feature_values(
    samples: &[f64],
    spec: FeatureSpec,
    wavelet: Wavelet,
) -> Result<Vec<f32>> {
    let tensor = make_feature(samples, spec.level, spec.view, wavelet)?;
    Ok(match tensor.data {
        FeatureData::Vector(v) => v.into_iter().map(|x| x as f32).collect(),
        FeatureData::Matrix { rows, cols, data } => {
            // (frames x bins) -> channel-major (bins x frames)
            let mut out = vec![0.0f32; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    out[c * rows + r] = data[r * cols + c] as f32;
                }
            }
            out
        }
    })
}

/// Model-input geometry of one feature spec: dense width or (channels, time).
pub fn feature_geometry(segment_len: usize, spec: FeatureSpec) -> (usize, Option<(usize, usize)>) {
    let (a, b) = crate::transforms::feature_shape(segment_len, spec.level, spec.view);
    match b {
        None => (a, None),
        Some(bins) => (a * bins, Some((bins, a))),
    }
}

/// Fresh autoencoder with the architecture implied by the feature spec.
pub fn build_model(
    segment_len: usize,
    spec: FeatureSpec,
    master_seed: u64,
) -> Autoencoder<f32> {
    let init_seed = seeding::derive_seed(master_seed, "model-init", &[spec.level as u64]);
    match feature_geometry(segment_len, spec) {
        (width, None) => Autoencoder::Dense(DenseAe::new(
            width,
            &DENSE_WIDTHS,
            LEAKY_SLOPE,
            init_seed,
        )),
        (_, Some((channels, time))) => {
            Autoencoder::Conv(ConvAe::new(channels, time, &CONV_FILTERS, init_seed))
        }
    }
}

/// Assemble the pretraining dataset from site-2 recordings of the training
/// patients under the given scheme.
pub fn build_pretrain_data(
    patients: &[PreparedPatient],
    train_idx: &[usize],
    spec: FeatureSpec,
    scheme: TrainScheme,
    settings: &PipelineSettings,
) -> Result<TrainData<f32>> {
    let mut clean_rows: Vec<Vec<f32>> = Vec::new();
    let mut noisy_rows: Vec<Vec<f32>> = Vec::new();
    let mut target_map: Vec<usize> = Vec::new();

    for &idx in train_idx {
        let rec = &patients[idx].site2;
        let clean_feat = feature_values(&rec.samples, spec, settings.wavelet)?;
        let clean_row = clean_rows.len();
        clean_rows.push(clean_feat);
        if scheme != TrainScheme::CleanToClean {
            for variant in
                augment::expand_recording(rec, settings.snr_levels_db, settings.master_seed)?
            {
                noisy_rows.push(feature_values(&variant.samples, spec, settings.wavelet)?);
                target_map.push(clean_row);
            }
        }
    }

    let to_dense = |rows: Vec<Vec<f32>>| -> Array2<f32> {
        let n = rows.len();
        let w = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut arr = Array2::zeros((n, w));
        for (r, row) in rows.into_iter().enumerate() {
            for (c, v) in row.into_iter().enumerate() {
                arr[(r, c)] = v;
            }
        }
        arr
    };
    let segment_len = (settings.segment_seconds * 8000.0).round() as usize;
    let geometry = feature_geometry(segment_len, spec);

    let build = |rows: Vec<Vec<f32>>,
                 targets: Option<(Vec<Vec<f32>>, Vec<usize>)>|
     -> TrainData<f32> {
        match geometry {
            (_, None) => TrainData::Dense {
                inputs: to_dense(rows),
                targets: targets.map(|(t, m)| (to_dense(t), m)),
            },
            (_, Some((ch, t))) => {
                let to_conv = |rows: Vec<Vec<f32>>| -> Array3<f32> {
                    let n = rows.len();
                    let mut arr = Array3::zeros((n, ch, t));
                    for (r, row) in rows.into_iter().enumerate() {
                        for ci in 0..ch {
                            for ti in 0..t {
                                arr[(r, ci, ti)] = row[ci * t + ti];
                            }
                        }
                    }
                    arr
                };
                TrainData::Conv {
                    inputs: to_conv(rows),
                    targets: targets.map(|(tr, m)| (to_conv(tr), m)),
                }
            }
        }
    };

    Ok(match scheme {
        TrainScheme::CleanToClean => build(clean_rows, None),
        TrainScheme::NoisyToNoisy => build(noisy_rows, None),
        TrainScheme::NoisyToClean => build(noisy_rows, Some((clean_rows, target_map))),
    })
}

/// Pretrain a fresh model for (spec, scheme); returns model and loss curve.
pub fn pretrain(
    patients: &[PreparedPatient],
    train_idx: &[usize],
    spec: FeatureSpec,
    scheme: TrainScheme,
    settings: &PipelineSettings,
) -> Result<(Autoencoder<f32>, Vec<f64>)> {
    let segment_len = (settings.segment_seconds * 8000.0).round() as usize;
    let mut model = build_model(segment_len, spec, settings.master_seed);
    let data = build_pretrain_data(patients, train_idx, spec, scheme, settings)?;
    let config = TrainConfig {
        epochs: settings.pretrain_epochs,
        batch_size: settings.batch_size,
        adam: crate::nnet::AdamConfig {
            learning_rate: settings.learning_rate,
            ..Default::default()
        },
        seed: seeding::derive_seed(
            settings.master_seed,
            "pretrain",
            &[spec.level as u64, scheme as u64],
        ),
        parallel: false,
    };
    let curve = train(&mut model, &data, &config)?;
    Ok((model, curve))
}

/// Feature items of the test patients for latent extraction.
///
/// Clean-to-clean extracts clean features only (one per patient/site);
/// the noisy schemes extract all 14 variants per patient/site.
pub fn build_test_features(
    patients: &[PreparedPatient],
    test_idx: &[usize],
    spec: FeatureSpec,
    scheme: TrainScheme,
    settings: &PipelineSettings,
) -> Result<Vec<FeatureItem>> {
    let mut items = Vec::new();
    for &idx in test_idx {
        let p = &patients[idx];
        for rec in [&p.site2, &p.site3] {
            if scheme == TrainScheme::CleanToClean {
                items.push(FeatureItem {
                    patient_id: p.record.patient_id.clone(),
                    site: rec.site,
                    variant: VariantTag::Clean,
                    values: feature_values(&rec.samples, spec, settings.wavelet)?,
                });
            } else {
                for variant in
                    augment::expand_recording(rec, settings.snr_levels_db, settings.master_seed)?
                {
                    items.push(FeatureItem {
                        patient_id: p.record.patient_id.clone(),
                        site: rec.site,
                        variant: VariantTag::Noisy {
                            kind: variant.noise.kind,
                            snr_index: variant.snr_index,
                        },
                        values: feature_values(&variant.samples, spec, settings.wavelet)?,
                    });
                }
            }
        }
    }
    Ok(items)
}

/// Which latents enter the downstream task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteSelection {
    Site2,
    Site3,
    Subtract,
    Concat,
    Add,
}

impl SiteSelection {
    pub fn name(&self) -> &'static str {
        match self {
            SiteSelection::Site2 => "site2",
            SiteSelection::Site3 => "site3",
            SiteSelection::Subtract => "site2-3",
            SiteSelection::Concat => "site2cat3",
            SiteSelection::Add => "site2plus3",
        }
    }

    fn combine_op(&self) -> Option<CombineOp> {
        match self {
            SiteSelection::Site2 | SiteSelection::Site3 => None,
            SiteSelection::Subtract => Some(CombineOp::Subtract),
            SiteSelection::Concat => Some(CombineOp::Concat),
            SiteSelection::Add => Some(CombineOp::Add),
        }
    }
}

/// Downstream prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    FlowClass,
    Gender,
    Htn,
    Dm,
}

impl Target {
    pub fn name(&self) -> &'static str {
        match self {
            Target::FlowClass => "flow-class",
            Target::Gender => "gender",
            Target::Htn => "htn",
            Target::Dm => "dm",
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Target::FlowClass => 3,
            _ => 2,
        }
    }

    pub fn label(&self, record: &PatientRecord) -> usize {
        match self {
            Target::FlowClass => record.flow_class().label(),
            Target::Gender => match record.gender {
                crate::signal_io::Gender::Male => 0,
                crate::signal_io::Gender::Female => 1,
            },
            Target::Htn => usize::from(record.htn),
            Target::Dm => usize::from(record.dm),
        }
    }
}

/// Apply the site selection to per-site latents and attach labels.
pub fn build_experiment_data(
    latents: &[LatentVector],
    records: &BTreeMap<String, PatientRecord>,
    selection: SiteSelection,
    target: Target,
) -> Result<ExperimentData> {
    let mut samples = Vec::new();
    match selection.combine_op() {
        None => {
            let want = match selection {
                SiteSelection::Site2 => Site::Arterial,
                SiteSelection::Site3 => Site::Venous,
                _ => unreachable!(),
            };
            for l in latents {
                if l.provenance.site == SiteTag::Single(want) {
                    let record = records.get(&l.provenance.patient_id).ok_or_else(|| {
                        Error::data(format!("no record for {}", l.provenance.patient_id))
                    })?;
                    samples.push(Sample {
                        patient_id: l.provenance.patient_id.clone(),
                        label: target.label(record),
                        features: l.values.clone(),
                    });
                }
            }
        }
        Some(op) => {
            // index (patient, variant) -> per-site latents
            let mut pairs: BTreeMap<(String, String), [Option<&LatentVector>; 2]> =
                BTreeMap::new();
            for l in latents {
                let slot = match l.provenance.site {
                    SiteTag::Single(Site::Arterial) => 0,
                    SiteTag::Single(Site::Venous) => 1,
                    _ => continue,
                };
                let key = (l.provenance.patient_id.clone(), l.provenance.variant.label());
                pairs.entry(key).or_default()[slot] = Some(l);
            }
            for ((patient_id, variant), pair) in pairs {
                let (Some(l2), Some(l3)) = (pair[0], pair[1]) else {
                    return Err(Error::data(format!(
                        "unpaired latent for {patient_id} variant {variant}"
                    )));
                };
                let combined = combine_sites(l2, l3, op)?;
                let record = records
                    .get(&patient_id)
                    .ok_or_else(|| Error::data(format!("no record for {patient_id}")))?;
                samples.push(Sample {
                    patient_id,
                    label: target.label(record),
                    features: combined.values,
                });
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::data("no latents matched the site selection"));
    }
    Ok(ExperimentData {
        samples,
        n_classes: target.n_classes(),
        records: records.clone(),
    })
}

/// One cell of the experiment matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellConfig {
    pub feature: FeatureSpec,
    pub scheme: TrainScheme,
    pub site: SiteSelection,
    pub target: Target,
    pub classifier: ClassifierKind,
    pub condensed_dim: Option<usize>,
    pub fuse_demographics: bool,
}

impl CellConfig {
    pub fn baseline(feature: FeatureSpec, scheme: TrainScheme) -> CellConfig {
        CellConfig {
            feature,
            scheme,
            site: SiteSelection::Subtract,
            target: Target::FlowClass,
            classifier: ClassifierKind::Svm(SvmConfig::default()),
            condensed_dim: None,
            fuse_demographics: false,
        }
    }

    /// Stable identifier for caching and report files.
    pub fn key(&self) -> String {
        let mut key = format!(
            "{}_{}_{}_{}_{}",
            self.feature.key(),
            self.scheme.name(),
            self.site.name(),
            self.target.name(),
            self.classifier.name()
        );
        if let Some(d) = self.condensed_dim {
            key.push_str(&format!("_dim{d}"));
        }
        if self.fuse_demographics {
            key.push_str("_fused");
        }
        key
    }
}

/// SHA-256 hex of a canonical JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Runs matrix cells against one prepared cohort with checkpoint caching.
pub struct MatrixRunner {
    pub settings: PipelineSettings,
    pub workdir: PathBuf,
    patients: Vec<PreparedPatient>,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    records: BTreeMap<String, PatientRecord>,
    /// (feature, scheme) -> model cache.
    models: BTreeMap<String, Autoencoder<f32>>,
    /// (feature, scheme) -> extracted test latents cache.
    latents: BTreeMap<String, Vec<LatentVector>>,
    settings_hash: String,
}

/// Per-cell result with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub report: MetricReport,
}

impl MatrixRunner {
    pub fn new(
        raw: &[(PatientRecord, Recording, Recording)],
        settings: PipelineSettings,
        workdir: &Path,
    ) -> Result<MatrixRunner> {
        let patients = prepare_cohort(raw, settings.segment_seconds)?;
        let (train_idx, test_idx) = pretrain_split(
            patients.len(),
            settings.pretrain_fraction,
            settings.master_seed,
        );
        let records = patients
            .iter()
            .map(|p| (p.record.patient_id.clone(), p.record.clone()))
            .collect();
        std::fs::create_dir_all(workdir.join("checkpoints"))?;
        std::fs::create_dir_all(workdir.join("reports"))?;
        let settings_hash = config_hash(&settings);
        Ok(MatrixRunner {
            settings,
            workdir: workdir.to_path_buf(),
            patients,
            train_idx,
            test_idx,
            records,
            models: BTreeMap::new(),
            latents: BTreeMap::new(),
            settings_hash,
        })
    }

    pub fn from_cohort_dir(
        dir: &Path,
        settings: PipelineSettings,
        workdir: &Path,
    ) -> Result<MatrixRunner> {
        let cohort = crate::signal_io::load_cohort(&dir.join("cohort.csv"), &dir.join("audio"))?;
        let raw: Vec<(PatientRecord, Recording, Recording)> = cohort
            .patients
            .into_iter()
            .map(|p| (p.record, p.site2, p.site3))
            .collect();
        MatrixRunner::new(&raw, settings, workdir)
    }

    pub fn test_patient_count(&self) -> usize {
        self.test_idx.len()
    }

    fn model_key(&self, spec: FeatureSpec, scheme: TrainScheme) -> String {
        format!(
            "{}_{}_{}",
            &self.settings_hash[..12],
            spec.key(),
            scheme.name()
        )
    }

    /// Pretrained model for (spec, scheme), loading or training on demand.
    pub fn model(&mut self, spec: FeatureSpec, scheme: TrainScheme) -> Result<&Autoencoder<f32>> {
        let key = self.model_key(spec, scheme);
        if !self.models.contains_key(&key) {
            let path = self.workdir.join("checkpoints").join(format!("{key}.ckpt"));
            let model = if path.is_file() {
                load_checkpoint(&path)?.0
            } else {
                let (model, curve) = pretrain(
                    &self.patients,
                    &self.train_idx,
                    spec,
                    scheme,
                    &self.settings,
                )?;
                save_checkpoint(
                    &path,
                    &model,
                    serde_json::json!({
                        "settings": self.settings,
                        "feature": spec,
                        "scheme": scheme.name(),
                    }),
                )?;
                std::fs::write(
                    self.workdir
                        .join("checkpoints")
                        .join(format!("{key}.loss.json")),
                    serde_json::to_vec_pretty(&curve)?,
                )?;
                model
            };
            self.models.insert(key.clone(), model);
        }
        Ok(self.models.get(&key).unwrap())
    }

    /// Test-patient latents for (spec, scheme), cached.
    pub fn test_latents(
        &mut self,
        spec: FeatureSpec,
        scheme: TrainScheme,
    ) -> Result<&[LatentVector]> {
        let key = self.model_key(spec, scheme);
        if !self.latents.contains_key(&key) {
            self.model(spec, scheme)?;
            let items = build_test_features(
                &self.patients,
                &self.test_idx,
                spec,
                scheme,
                &self.settings,
            )?;
            let model = self.models.get(&key).unwrap();
            let latents = extract_latents(model, &items, spec.level, scheme)?;
            self.latents.insert(key.clone(), latents);
        }
        Ok(self.latents.get(&key).unwrap())
    }

    /// Run one cell end to end and persist its report JSON.
    pub fn run_cell(&mut self, cell: &CellConfig) -> Result<CellReport> {
        let latents = self.test_latents(cell.feature, cell.scheme)?.to_vec();
        let data = build_experiment_data(&latents, &self.records, cell.site, cell.target)?;
        let exp_config = ExperimentConfig {
            classifier: cell.classifier,
            n_runs: crate::downstream::DEFAULT_RUNS,
            train_fraction: crate::downstream::TRAIN_FRACTION,
            master_seed: seeding::derive_seed(
                self.settings.master_seed,
                "cell",
                &[seeding::part_from_str(&cell.key())],
            ),
            condensed_dim: cell.condensed_dim,
            fuse_demographics: cell.fuse_demographics,
        };
        let report = run_experiment(&data, &exp_config)?;
        let cell_report = CellReport {
            cell: cell.key(),
            config_hash: config_hash(&(&self.settings, cell)),
            master_seed: self.settings.master_seed,
            report,
        };
        let path = self
            .workdir
            .join("reports")
            .join(format!("{}.json", cell.key()));
        std::fs::write(&path, serde_json::to_vec_pretty(&cell_report)?)?;
        Ok(cell_report)
    }
}

/// Named experiment presets mirroring the result-table layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Table2,
    Table3,
    Table5b,
    Table5c,
    Table5d,
    Table5e,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Preset> {
        match name {
            "table2" => Ok(Preset::Table2),
            "table3" => Ok(Preset::Table3),
            "table5b" => Ok(Preset::Table5b),
            "table5c" => Ok(Preset::Table5c),
            "table5d" => Ok(Preset::Table5d),
            "table5e" => Ok(Preset::Table5e),
            other => Err(Error::config(format!(
                "unknown preset {other:?} (expected table2, table3, table5b..table5e)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Table2 => "table2",
            Preset::Table3 => "table3",
            Preset::Table5b => "table5b",
            Preset::Table5c => "table5c",
            Preset::Table5d => "table5d",
            Preset::Table5e => "table5e",
        }
    }

    pub fn all() -> [Preset; 6] {
        [
            Preset::Table2,
            Preset::Table3,
            Preset::Table5b,
            Preset::Table5c,
            Preset::Table5d,
            Preset::Table5e,
        ]
    }

    /// The preset's sections: (section label, columns of (label, cell)).
    pub fn sections(&self) -> Vec<(String, Vec<(String, CellConfig)>)> {
        let levels = [0u8, 1, 2, 3];
        let level_label = |level: u8| -> String {
            if level == 0 {
                "original".to_string()
            } else {
                format!("w_L{level}")
            }
        };
        let waveform = |level| FeatureSpec {
            level,
            view: View::Waveform,
        };
        let wl1 = waveform(1);
        match self {
            Preset::Table2 => [
                ("AE waveform (clean to clean)", TrainScheme::CleanToClean),
                ("AE waveform (noisy to noisy)", TrainScheme::NoisyToNoisy),
                ("DAE waveform (noisy to clean)", TrainScheme::NoisyToClean),
            ]
            .into_iter()
            .map(|(label, scheme)| {
                (
                    label.to_string(),
                    levels
                        .iter()
                        .map(|&level| {
                            (
                                level_label(level),
                                CellConfig::baseline(waveform(level), scheme),
                            )
                        })
                        .collect(),
                )
            })
            .collect(),
            Preset::Table3 => [
                ("DAE + waveform", View::Waveform),
                ("DAE + FFT", View::Fft),
                ("DAE + STFT", View::Stft),
            ]
            .into_iter()
            .map(|(label, view)| {
                (
                    label.to_string(),
                    levels
                        .iter()
                        .map(|&level| {
                            (
                                level_label(level),
                                CellConfig::baseline(
                                    FeatureSpec { level, view },
                                    TrainScheme::NoisyToClean,
                                ),
                            )
                        })
                        .collect(),
                )
            })
            .collect(),
            Preset::Table5b => vec![(
                "single and multiple sites (w_L1)".to_string(),
                [
                    ("site 2", SiteSelection::Site2),
                    ("site 3", SiteSelection::Site3),
                    ("site 2-3", SiteSelection::Subtract),
                ]
                .into_iter()
                .map(|(label, site)| {
                    let mut cell = CellConfig::baseline(wl1, TrainScheme::NoisyToClean);
                    cell.site = site;
                    (label.to_string(), cell)
                })
                .collect(),
            )],
            Preset::Table5c => vec![(
                "patient information targets (w_L1, site 2-3)".to_string(),
                [
                    ("gender", Target::Gender),
                    ("htn", Target::Htn),
                    ("dm", Target::Dm),
                ]
                .into_iter()
                .map(|(label, target)| {
                    let mut cell = CellConfig::baseline(wl1, TrainScheme::NoisyToClean);
                    cell.target = target;
                    (label.to_string(), cell)
                })
                .collect(),
            )],
            Preset::Table5d => vec![(
                "PCA condensation (w_L1, site 2-3)".to_string(),
                [5usize, 4, 2]
                    .into_iter()
                    .map(|dim| {
                        let mut cell = CellConfig::baseline(wl1, TrainScheme::NoisyToClean);
                        cell.condensed_dim = Some(dim);
                        (format!("dim = {dim}"), cell)
                    })
                    .collect(),
            )],
            Preset::Table5e => vec![(
                "dim-2 latent + demographics (w_L1, site 2-3)".to_string(),
                [
                    ("SVM", ClassifierKind::Svm(SvmConfig::default())),
                    ("KNN", ClassifierKind::Knn { k: 3 }),
                    ("GBT", ClassifierKind::Gbt(GbtConfig::default())),
                ]
                .into_iter()
                .map(|(label, classifier)| {
                    let mut cell = CellConfig::baseline(wl1, TrainScheme::NoisyToClean);
                    cell.classifier = classifier;
                    cell.condensed_dim = Some(2);
                    cell.fuse_demographics = true;
                    (label.to_string(), cell)
                })
                .collect(),
            )],
        }
    }
}

/// Status manifest entry of one matrix cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStatus {
    pub cell: String,
    pub status: String,
}

/// Full preset run: every cell executed (never silently skipped), manifest
/// and markdown written under the workdir.
pub fn run_preset(runner: &mut MatrixRunner, preset: Preset) -> Result<Vec<CellStatus>> {
    let mut manifest = Vec::new();
    let mut rendered = String::new();
    rendered.push_str(&format!("## {}\n\n", preset.name()));
    for (section, columns) in preset.sections() {
        let mut reports = Vec::new();
        for (label, cell) in &columns {
            match runner.run_cell(cell) {
                Ok(report) => {
                    manifest.push(CellStatus {
                        cell: cell.key(),
                        status: "ok".into(),
                    });
                    reports.push((label.clone(), report));
                }
                Err(e) => {
                    manifest.push(CellStatus {
                        cell: cell.key(),
                        status: format!("failed: {e}"),
                    });
                    return Err(Error::Numeric(format!(
                        "cell {} of preset {} failed: {e}",
                        cell.key(),
                        preset.name()
                    )));
                }
            }
        }
        rendered.push_str(&render_section(&section, &reports));
    }
    rendered.push_str(&format!("\n> {}\n", crate::downstream::MACRO_OVR_NOTE));
    std::fs::write(
        runner.workdir.join(format!("{}.md", preset.name())),
        rendered,
    )?;
    std::fs::write(
        runner
            .workdir
            .join(format!("{}.manifest.json", preset.name())),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Markdown metric table in the fixed row order.
pub fn render_section(section: &str, reports: &[(String, CellReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("### {section}\n\n"));
    out.push_str("| Metric |");
    for (label, _) in reports {
        out.push_str(&format!(" {label} |"));
    }
    out.push_str("\n|---|");
    for _ in reports {
        out.push_str("---|");
    }
    out.push('\n');
    let rows: [(&str, fn(&MetricReport) -> f64); 7] = [
        ("AUROC", |r| r.auroc),
        ("Accuracy", |r| r.accuracy),
        ("Sensitivity", |r| r.sensitivity),
        ("Specificity", |r| r.specificity),
        ("Precision", |r| r.precision),
        ("F1", |r| r.f1),
        ("Avg.", |r| r.avg),
    ];
    for (name, get) in rows {
        out.push_str(&format!("| {name} |"));
        for (_, report) in reports {
            out.push_str(&format!(" {:.3} |", get(&report.report)));
        }
        out.push('\n');
    }
    out.push('\n');
    out
}

/// Build a synthetic cohort in memory with the given patient count.
pub fn synthetic_cohort(
    n_patients: usize,
    seed: u64,
) -> Result<Vec<(PatientRecord, Recording, Recording)>> {
    let config = synthdata::SynthConfig {
        n_patients,
        seed,
        ..Default::default()
    };
    synthdata::generate_cohort(&config)
}

/// The 14 noise kinds x SNR variants as (kind, snr order) labels.
pub fn variant_labels(snr_levels_db: [f64; 2]) -> Vec<(NoiseKind, u8, f64)> {
    let mut labels = Vec::new();
    for kind in augment::NOISE_KINDS {
        for (i, &snr) in snr_levels_db.iter().enumerate() {
            labels.push((kind, i as u8, snr));
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_settings() -> PipelineSettings {
        PipelineSettings {
            pretrain_epochs: 1,
            master_seed: 11,
            ..Default::default()
        }
    }

    fn tiny_cohort(n: usize) -> Vec<(PatientRecord, Recording, Recording)> {
        synthetic_cohort(n, 5).unwrap()
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let (train, test) = pretrain_split(171, 0.8, 3);
        assert_eq!(train.len(), 137);
        assert_eq!(test.len(), 34);
        let mut all: Vec<usize> = train.iter().chain(test.iter()).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..171).collect::<Vec<_>>());
    }

    #[test]
    fn feature_geometry_matches_values() {
        let cohort = tiny_cohort(2);
        let prepared = prepare_cohort(&cohort, 2.0).unwrap();
        for (level, view) in [
            (0u8, View::Waveform),
            (1, View::Waveform),
            (2, View::Fft),
            (1, View::Stft),
        ] {
            let spec = FeatureSpec { level, view };
            let values =
                feature_values(&prepared[0].site2.samples, spec, Wavelet::Bior31).unwrap();
            let (flat, _) = feature_geometry(16000, spec);
            assert_eq!(values.len(), flat, "{spec:?}");
        }
    }

    #[test]
    fn pretrain_data_counts_follow_scheme() {
        let cohort = tiny_cohort(3);
        let prepared = prepare_cohort(&cohort, 2.0).unwrap();
        let settings = tiny_settings();
        let spec = FeatureSpec {
            level: 3,
            view: View::Waveform,
        };
        let train_idx = vec![0, 1];
        let clean =
            build_pretrain_data(&prepared, &train_idx, spec, TrainScheme::CleanToClean, &settings)
                .unwrap();
        assert_eq!(clean.len(), 2);
        let noisy =
            build_pretrain_data(&prepared, &train_idx, spec, TrainScheme::NoisyToNoisy, &settings)
                .unwrap();
        assert_eq!(noisy.len(), 28);
        let n2c =
            build_pretrain_data(&prepared, &train_idx, spec, TrainScheme::NoisyToClean, &settings)
                .unwrap();
        assert_eq!(n2c.len(), 28);
        match n2c {
            TrainData::Dense {
                targets: Some((rows, map)),
                ..
            } => {
                assert_eq!(rows.nrows(), 2);
                assert_eq!(map.len(), 28);
                assert!(map.iter().all(|&m| m < 2));
            }
            _ => panic!("expected dense mapped targets"),
        }
    }

    #[test]
    fn cell_keys_are_stable_and_unique_per_preset() {
        use std::collections::BTreeSet;
        for preset in Preset::all() {
            let mut seen = BTreeSet::new();
            for (_, columns) in preset.sections() {
                for (_, cell) in columns {
                    assert!(seen.insert(cell.key()), "duplicate cell {}", cell.key());
                }
            }
        }
        let table2: usize = Preset::Table2.sections().iter().map(|s| s.1.len()).sum();
        assert_eq!(table2, 12);
        assert_eq!(Preset::Table5d.sections()[0].1.len(), 3);
        assert_eq!(Preset::Table5e.sections()[0].1.len(), 3);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = tiny_settings();
        let b = tiny_settings();
        assert_eq!(config_hash(&a), config_hash(&b));
        let mut c = tiny_settings();
        c.master_seed += 1;
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn end_to_end_tiny_cell_runs() {
        // small end-to-end: 24 patients, w_L3 waveform, 1 epoch
        let dir = tempfile::tempdir().unwrap();
        let cohort = tiny_cohort(24);
        let mut settings = tiny_settings();
        settings.pretrain_fraction = 0.5;
        let mut runner = MatrixRunner::new(&cohort, settings, dir.path()).unwrap();
        let cell = CellConfig::baseline(
            FeatureSpec {
                level: 3,
                view: View::Waveform,
            },
            TrainScheme::NoisyToClean,
        );
        let report = runner.run_cell(&cell).unwrap();
        assert_eq!(report.report.n_runs, 10);
        assert!(dir
            .path()
            .join("reports")
            .join(format!("{}.json", cell.key()))
            .is_file());
        // checkpoint written and reloadable
        let ckpts: Vec<_> = std::fs::read_dir(dir.path().join("checkpoints"))
            .unwrap()
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().to_string())
            .filter(|n| n.ends_with(".ckpt"))
            .collect();
        assert_eq!(ckpts.len(), 1);
    }
}
