//! Downstream classification: balanced sampling, patient-level splits, the
//! three classifiers, and the ten-run averaged experiment protocol.

mod gbt;
mod knn;
mod metrics;
mod svm;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{fuse_demographics, pca_fit, LatentVector, Provenance};
use crate::seeding;
use crate::signal_io::PatientRecord;

pub use gbt::{gbt_fit, GbtConfig, GbtModel};
pub use knn::knn_predict;
pub use metrics::{compute_metrics, MetricOutcome, MetricRun};
pub use svm::{svm_fit, Multiclass, SvmConfig, SvmModel, KKT_TOLERANCE};

/// Default downstream train fraction of the patient split.
pub const TRAIN_FRACTION: f64 = 0.7;
/// Runs averaged per experiment.
pub const DEFAULT_RUNS: usize = 10;

/// One feature vector with its patient identity and label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub patient_id: String,
    pub label: usize,
    pub features: Vec<f64>,
}

/// Everything one experiment needs: vectors, labels, and (for fusion)
/// patient records.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    pub records: BTreeMap<String, PatientRecord>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassifierKind {
    Svm(SvmConfig),
    Knn { k: usize },
    Gbt(GbtConfig),
}

impl ClassifierKind {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::Svm(_) => "svm",
            ClassifierKind::Knn { .. } => "knn",
            ClassifierKind::Gbt(_) => "gbt",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub classifier: ClassifierKind,
    pub n_runs: usize,
    pub train_fraction: f64,
    pub master_seed: u64,
    /// Condense vectors with per-run PCA fitted on the training split.
    pub condensed_dim: Option<usize>,
    /// Append encoded demographics after condensation.
    pub fuse_demographics: bool,
}

impl ExperimentConfig {
    pub fn new(classifier: ClassifierKind, master_seed: u64) -> Self {
        ExperimentConfig {
            classifier,
            n_runs: DEFAULT_RUNS,
            train_fraction: TRAIN_FRACTION,
            master_seed,
            condensed_dim: None,
            fuse_demographics: false,
        }
    }
}

/// Ten-run averaged metric table plus per-run values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub avg: f64,
    pub n_runs: usize,
    pub per_run: Vec<MetricRun>,
    pub warnings: Vec<String>,
    /// Averaging convention note, repeated in every rendered footer.
    pub note: String,
}

pub const MACRO_OVR_NOTE: &str =
    "AUROC, sensitivity, specificity, precision, and F1 are macro-averaged one-vs-rest; \
     accuracy is plain.";

impl MetricReport {
    pub fn from_runs(per_run: Vec<MetricRun>, warnings: Vec<String>) -> MetricReport {
        let n = per_run.len();
        let mean = |f: fn(&MetricRun) -> f64| per_run.iter().map(f).sum::<f64>() / n as f64;
        let auroc = mean(|r| r.auroc);
        let accuracy = mean(|r| r.accuracy);
        let sensitivity = mean(|r| r.sensitivity);
        let specificity = mean(|r| r.specificity);
        let precision = mean(|r| r.precision);
        let f1 = mean(|r| r.f1);
        let avg = (auroc + accuracy + sensitivity + specificity + precision + f1) / 6.0;
        MetricReport {
            auroc,
            accuracy,
            sensitivity,
            specificity,
            precision,
            f1,
            avg,
            n_runs: n,
            per_run,
            warnings,
            note: MACRO_OVR_NOTE.to_string(),
        }
    }
}

/// Down-sample every class to the minority-class patient count.
///
/// Deterministic per seed; patients are sorted before the seeded shuffle so
/// input order cannot leak through.
pub fn balanced_sample(
    patients: &[(String, usize)],
    n_classes: usize,
    seed: u64,
) -> Result<Vec<(String, usize)>> {
    let mut by_class: Vec<Vec<&(String, usize)>> = vec![Vec::new(); n_classes];
    for p in patients {
        if p.1 >= n_classes {
            return Err(Error::data(format!(
                "label {} out of range for {n_classes} classes",
                p.1
            )));
        }
        by_class[p.1].push(p);
    }
    let min_count = by_class.iter().map(|c| c.len()).min().unwrap_or(0);
    if min_count == 0 {
        let missing = by_class.iter().position(|c| c.is_empty()).unwrap();
        return Err(Error::data(format!("class {missing} is empty")));
    }
    let mut out = Vec::with_capacity(min_count * n_classes);
    for (cls, members) in by_class.iter().enumerate() {
        let mut members: Vec<&(String, usize)> = members.clone();
        members.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = seeding::stream_rng(seed, "balanced-sample", &[cls as u64]);
        fisher_yates(&mut members, &mut rng);
        out.extend(members[..min_count].iter().map(|&p| p.clone()));
    }
    Ok(out)
}

fn fisher_yates<T>(items: &mut [T], rng: &mut impl rand::Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Split balanced patients into train/test by class, keeping at least one
/// patient on each side whenever a class has two or more.
fn split_patients(
    balanced: &[(String, usize)],
    n_classes: usize,
    train_fraction: f64,
    seed: u64,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    for cls in 0..n_classes {
        let mut members: Vec<&(String, usize)> =
            balanced.iter().filter(|p| p.1 == cls).collect();
        members.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = seeding::stream_rng(seed, "downstream-split", &[cls as u64]);
        fisher_yates(&mut members, &mut rng);
        let n = members.len();
        let n_train = if n <= 1 {
            n
        } else {
            ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1)
        };
        for (i, p) in members.iter().enumerate() {
            if i < n_train {
                train.insert(p.0.clone());
            } else {
                test.insert(p.0.clone());
            }
        }
    }
    (train, test)
}

fn fit_predict(
    kind: &ClassifierKind,
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    n_classes: usize,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    match kind {
        ClassifierKind::Svm(cfg) => {
            let model = svm_fit(train_x, train_y, cfg)?;
            let mut preds = Vec::with_capacity(test_x.len());
            let mut scores = Vec::with_capacity(test_x.len());
            for x in test_x {
                let (cls, s) = model.predict(x);
                let mut full = vec![f64::NEG_INFINITY; n_classes];
                for (i, &c) in model.classes().iter().enumerate() {
                    full[c] = s[i];
                }
                preds.push(cls);
                scores.push(full);
            }
            Ok((preds, scores))
        }
        ClassifierKind::Knn { k } => {
            let mut preds = Vec::with_capacity(test_x.len());
            let mut scores = Vec::with_capacity(test_x.len());
            for x in test_x {
                let (cls, s) = knn_predict(train_x, train_y, x, *k, n_classes)?;
                preds.push(cls);
                scores.push(s);
            }
            Ok((preds, scores))
        }
        ClassifierKind::Gbt(cfg) => {
            let model = gbt_fit(train_x, train_y, cfg)?;
            let mut preds = Vec::with_capacity(test_x.len());
            let mut scores = Vec::with_capacity(test_x.len());
            for x in test_x {
                let (cls, probs) = model.predict(x);
                let mut full = vec![0.0; n_classes];
                for (c, &p) in probs.iter().enumerate() {
                    if c < n_classes {
                        full[c] = p;
                    }
                }
                preds.push(cls.min(n_classes - 1));
                scores.push(full);
            }
            Ok((preds, scores))
        }
    }
}

fn stage_err(stage: &str, run_seed: u64, e: Error) -> Error {
    Error::Numeric(format!("stage {stage} failed (run seed {run_seed}): {e}"))
}

/// Ten seeded iterations of balanced-sample, split, fit, evaluate.
///
/// Per run: balanced sampling and the 70/30 split operate on patients (all
/// variants of a patient stay on one side); PCA, when configured, is fitted
/// on the run's training vectors only; metrics are averaged at the end.
pub fn run_experiment(data: &ExperimentData, config: &ExperimentConfig) -> Result<MetricReport> {
    if config.n_runs == 0 {
        return Err(Error::config("n_runs must be positive"));
    }
    if !(0.0..1.0).contains(&config.train_fraction) || config.train_fraction <= 0.0 {
        return Err(Error::config("train_fraction must be in (0,1)"));
    }
    // unique patients with consistent labels
    let mut patient_labels: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &data.samples {
        if let Some(&prev) = patient_labels.get(s.patient_id.as_str()) {
            if prev != s.label {
                return Err(Error::data(format!(
                    "patient {} has inconsistent labels",
                    s.patient_id
                )));
            }
        } else {
            patient_labels.insert(&s.patient_id, s.label);
        }
    }
    let patients: Vec<(String, usize)> = patient_labels
        .iter()
        .map(|(id, &l)| (id.to_string(), l))
        .collect();

    let mut per_run = Vec::with_capacity(config.n_runs);
    let mut warnings = Vec::new();
    for run in 0..config.n_runs {
        let run_seed = seeding::derive_seed(config.master_seed, "downstream-run", &[run as u64]);
        let balanced = balanced_sample(&patients, data.n_classes, run_seed)
            .map_err(|e| stage_err("balanced_sample", run_seed, e))?;
        let (train_ids, test_ids) =
            split_patients(&balanced, data.n_classes, config.train_fraction, run_seed);

        // split discipline: no patient on both sides
        if train_ids.intersection(&test_ids).next().is_some() {
            return Err(Error::numeric(format!(
                "patient split leak in run {run} (seed {run_seed})"
            )));
        }

        let gather = |ids: &BTreeSet<String>| -> (Vec<Vec<f64>>, Vec<usize>, Vec<&Sample>) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut refs = Vec::new();
            for s in &data.samples {
                if ids.contains(&s.patient_id) {
                    xs.push(s.features.clone());
                    ys.push(s.label);
                    refs.push(s);
                }
            }
            (xs, ys, refs)
        };
        let (mut train_x, train_y, train_refs) = gather(&train_ids);
        let (mut test_x, test_y, test_refs) = gather(&test_ids);
        if train_x.is_empty() || test_x.is_empty() {
            return Err(Error::data(format!(
                "empty train or test split in run {run} (seed {run_seed})"
            )));
        }

        if let Some(dim) = config.condensed_dim {
            let flat = ndarray::Array2::from_shape_fn((train_x.len(), train_x[0].len()), |(r, c)| {
                train_x[r][c]
            });
            let pca = pca_fit(&flat, dim).map_err(|e| stage_err("pca_fit", run_seed, e))?;
            let project = |xs: &mut Vec<Vec<f64>>| -> Result<()> {
                for x in xs.iter_mut() {
                    *x = pca.transform(x)?;
                }
                Ok(())
            };
            project(&mut train_x).map_err(|e| stage_err("pca_transform", run_seed, e))?;
            project(&mut test_x).map_err(|e| stage_err("pca_transform", run_seed, e))?;
        }

        if config.fuse_demographics {
            let fuse_all = |xs: &mut Vec<Vec<f64>>, refs: &[&Sample]| -> Result<()> {
                for (x, s) in xs.iter_mut().zip(refs) {
                    let record = data.records.get(&s.patient_id).ok_or_else(|| {
                        Error::data(format!("missing demographics for {}", s.patient_id))
                    })?;
                    let lv = LatentVector {
                        values: x.clone(),
                        provenance: dummy_provenance(&s.patient_id),
                    };
                    *x = fuse_demographics(&lv, record).values;
                }
                Ok(())
            };
            fuse_all(&mut train_x, &train_refs)
                .map_err(|e| stage_err("fuse_demographics", run_seed, e))?;
            fuse_all(&mut test_x, &test_refs)
                .map_err(|e| stage_err("fuse_demographics", run_seed, e))?;
        }

        let (preds, scores) =
            fit_predict(&config.classifier, &train_x, &train_y, &test_x, data.n_classes)
                .map_err(|e| stage_err(config.classifier.name(), run_seed, e))?;
        let outcome = compute_metrics(&test_y, &preds, &scores, data.n_classes)
            .map_err(|e| stage_err("compute_metrics", run_seed, e))?;
        for w in outcome.warnings {
            warnings.push(format!("run {run}: {w}"));
        }
        per_run.push(outcome.run);
    }
    Ok(MetricReport::from_runs(per_run, warnings))
}

fn dummy_provenance(patient_id: &str) -> Provenance {
    use crate::latent::{SiteTag, VariantTag};
    use crate::nnet::TrainScheme;
    use crate::signal_io::Site;
    Provenance {
        patient_id: patient_id.to_string(),
        site: SiteTag::Single(Site::Arterial),
        level: 0,
        scheme: TrainScheme::NoisyToClean,
        variant: VariantTag::Clean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::Gender;

    fn patients(counts: [usize; 3]) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (cls, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push((format!("c{cls}p{i:03}"), cls));
            }
        }
        out
    }

    #[test]
    fn balanced_sample_matches_minority_count() {
        let pts = patients([45, 82, 44]);
        let balanced = balanced_sample(&pts, 3, 9).unwrap();
        let mut counts = [0usize; 3];
        for (_, l) in &balanced {
            counts[*l] += 1;
        }
        assert_eq!(counts, [44, 44, 44]);
        // without replacement: all distinct
        let ids: BTreeSet<&String> = balanced.iter().map(|(id, _)| id).collect();
        assert_eq!(ids.len(), balanced.len());
    }

    #[test]
    fn balanced_sample_keeps_already_balanced_multiset() {
        let pts = patients([5, 5, 5]);
        let balanced = balanced_sample(&pts, 3, 1).unwrap();
        let mut in_ids: Vec<&String> = pts.iter().map(|(id, _)| id).collect();
        let mut out_ids: Vec<&String> = balanced.iter().map(|(id, _)| id).collect();
        in_ids.sort();
        out_ids.sort();
        assert_eq!(in_ids, out_ids);
    }

    #[test]
    fn balanced_sample_is_deterministic_and_rejects_empty_class() {
        let pts = patients([6, 9, 7]);
        let a = balanced_sample(&pts, 3, 42).unwrap();
        let b = balanced_sample(&pts, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = balanced_sample(&pts, 3, 43).unwrap();
        assert_ne!(a, c);

        let two_class = patients([4, 4, 0]);
        let err = balanced_sample(&two_class, 3, 1).unwrap_err().to_string();
        assert!(err.contains("class 2"), "{err}");
    }

    fn synthetic_experiment_data(
        per_class: usize,
        separation: f64,
        seed: u64,
    ) -> ExperimentData {
        use rand::Rng;
        let mut rng = seeding::stream_rng(seed, "downstream-test-data", &[]);
        let mut samples = Vec::new();
        let mut records = BTreeMap::new();
        for cls in 0..3usize {
            for i in 0..per_class {
                let id = format!("c{cls}p{i:03}");
                // a few vectors per patient, like the variant expansion
                for _ in 0..3 {
                    samples.push(Sample {
                        patient_id: id.clone(),
                        label: cls,
                        features: vec![
                            cls as f64 * separation + rng.random_range(-0.5..0.5),
                            rng.random_range(-0.5..0.5),
                        ],
                    });
                }
                records.insert(
                    id.clone(),
                    PatientRecord {
                        patient_id: id.clone(),
                        gender: if i % 2 == 0 { Gender::Male } else { Gender::Female },
                        age: 60 + (cls * 5) as u32,
                        htn: i % 3 == 0,
                        dm: cls == 0,
                        blood_flow_ml_min: 500.0 + cls as f64 * 600.0,
                    },
                );
            }
        }
        ExperimentData {
            samples,
            n_classes: 3,
            records,
        }
    }

    #[test]
    fn run_experiment_honors_n_runs_and_is_deterministic() {
        let data = synthetic_experiment_data(8, 4.0, 3);
        let config = ExperimentConfig::new(ClassifierKind::Svm(SvmConfig::default()), 77);
        let report = run_experiment(&data, &config).unwrap();
        assert_eq!(report.n_runs, 10);
        assert_eq!(report.per_run.len(), 10);
        // separable data classifies well
        assert!(report.accuracy > 0.9, "accuracy {}", report.accuracy);

        let again = run_experiment(&data, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn degenerate_identical_features_sit_at_chance() {
        use rand::Rng;
        let mut rng = seeding::stream_rng(5, "downstream-test", &[]);
        let mut samples = Vec::new();
        for cls in 0..3usize {
            for i in 0..10 {
                let _ = &mut rng;
                samples.push(Sample {
                    patient_id: format!("c{cls}p{i:03}"),
                    label: cls,
                    features: vec![1.0, 1.0],
                });
            }
        }
        let data = ExperimentData {
            samples,
            n_classes: 3,
            records: BTreeMap::new(),
        };
        let config = ExperimentConfig::new(ClassifierKind::Svm(SvmConfig::default()), 11);
        let report = run_experiment(&data, &config).unwrap();
        assert!(
            (report.accuracy - 1.0 / 3.0).abs() < 0.1,
            "chance-level accuracy expected, got {}",
            report.accuracy
        );
    }

    #[test]
    fn pca_and_fusion_paths_run() {
        let data = synthetic_experiment_data(10, 3.0, 9);
        let mut config = ExperimentConfig::new(ClassifierKind::Gbt(GbtConfig::default()), 13);
        config.condensed_dim = Some(1);
        config.fuse_demographics = true;
        let report = run_experiment(&data, &config).unwrap();
        assert_eq!(report.n_runs, 10);
        assert!(report.accuracy > 0.5);
    }

    #[test]
    fn knn_classifier_path_runs() {
        let data = synthetic_experiment_data(8, 4.0, 15);
        let config = ExperimentConfig::new(ClassifierKind::Knn { k: 3 }, 17);
        let report = run_experiment(&data, &config).unwrap();
        assert!(report.accuracy > 0.9);
        assert!(report.avg <= 1.0 && report.avg >= 0.0);
    }
}
