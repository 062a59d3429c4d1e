//! Full-scale pilot of the scheme-ordering and condensation experiments.
//!
//! Prints the ten-run metric summaries that the acceptance thresholds are
//! calibrated against.

use bruitflow::downstream::{ClassifierKind, GbtConfig, SvmConfig};
use bruitflow::nnet::TrainScheme;
use bruitflow::pipeline::{
    synthetic_cohort, CellConfig, FeatureSpec, MatrixRunner, PipelineSettings,
};
use bruitflow::transforms::View;

fn main() {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4);
    let n_patients: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(171);

    let dir = std::env::temp_dir().join(format!("bruitflow-pilot-e{epochs}-n{n_patients}"));
    std::fs::create_dir_all(&dir).unwrap();
    eprintln!("workdir: {}", dir.display());

    let cohort = synthetic_cohort(n_patients, 42).unwrap();
    let settings = PipelineSettings {
        pretrain_epochs: epochs,
        master_seed: 42,
        ..Default::default()
    };
    let mut runner = MatrixRunner::new(&cohort, settings, &dir).unwrap();
    eprintln!("test patients: {}", runner.test_patient_count());

    let wl1 = FeatureSpec {
        level: 1,
        view: View::Waveform,
    };

    // criterion 5: scheme ordering
    let mut avgs = Vec::new();
    for scheme in [
        TrainScheme::CleanToClean,
        TrainScheme::NoisyToNoisy,
        TrainScheme::NoisyToClean,
    ] {
        let t0 = std::time::Instant::now();
        let cell = CellConfig::baseline(wl1, scheme);
        let report = runner.run_cell(&cell).unwrap();
        eprintln!(
            "{:>16}: avg {:.3} acc {:.3} auroc {:.3} ({:.0}s)",
            scheme.name(),
            report.report.avg,
            report.report.accuracy,
            report.report.auroc,
            t0.elapsed().as_secs_f64()
        );
        avgs.push((scheme.name(), report.report.avg, report.report.accuracy));
    }

    // criterion 7: condensation trend + fused recovery
    let mut accs = Vec::new();
    for dim in [None, Some(5usize), Some(2usize)] {
        let mut cell = CellConfig::baseline(wl1, TrainScheme::NoisyToClean);
        cell.condensed_dim = dim;
        let report = runner.run_cell(&cell).unwrap();
        eprintln!(
            "dim {:?}: acc {:.3} avg {:.3}",
            dim, report.report.accuracy, report.report.avg
        );
        accs.push(report.report.accuracy);
    }
    let mut fused = CellConfig::baseline(wl1, TrainScheme::NoisyToClean);
    fused.condensed_dim = Some(2);
    fused.fuse_demographics = true;
    fused.classifier = ClassifierKind::Gbt(GbtConfig::default());
    let report = runner.run_cell(&fused).unwrap();
    eprintln!(
        "dim2+demo GBT: acc {:.3} avg {:.3}",
        report.report.accuracy, report.report.avg
    );

    // svm-only dim2 fused, for contrast
    let mut fused_svm = fused.clone();
    fused_svm.classifier = ClassifierKind::Svm(SvmConfig::default());
    let r = runner.run_cell(&fused_svm).unwrap();
    eprintln!("dim2+demo SVM: acc {:.3} avg {:.3}", r.report.accuracy, r.report.avg);

    println!("schemes: {avgs:?}");
    println!("dims 100/5/2 accuracy: {accs:?}");
    println!("fused gbt accuracy: {:.3}", report.report.accuracy);
}
