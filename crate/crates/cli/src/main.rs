//! Batch runner for the auscultation representation-learning pipeline.
//!
//! Progress goes to stderr; all data artifacts land in the given output or
//! work directories. Exit codes: 0 ok, 2 config error, 3 data error,
//! 4 numeric failure.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bruitflow::downstream::{ClassifierKind, GbtConfig, SvmConfig};
use bruitflow::error::Error as CoreError;
use bruitflow::latent::dump_latents_csv;
use bruitflow::nnet::TrainScheme;
use bruitflow::pipeline::{
    config_hash, run_preset, CellConfig, FeatureSpec, MatrixRunner, PipelineSettings, Preset,
    SiteSelection, Target,
};
use bruitflow::signal_io;
use bruitflow::synthdata;
use bruitflow::transforms::View;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "bruitflow", version, about = "Auscultation representation-learning pipeline")]
struct Cli {
    /// TOML configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CellArgs {
    /// DWT level of the feature (0 = raw signal).
    #[arg(long, default_value_t = 1)]
    level: u8,
    /// Feature view: waveform, fft, or stft.
    #[arg(long, default_value = "waveform")]
    view: String,
    /// Training scheme: clean-to-clean, noisy-to-noisy, noisy-to-clean.
    #[arg(long, default_value = "noisy-to-clean")]
    scheme: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (WAV files + metadata CSV).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_patients: Option<usize>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Apply trimming, normalization, and segmentation to a cohort.
    Preprocess {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Materialize the 14 noisy variants per recording plus an index CSV.
    Augment {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Pretrain one autoencoder and store its checkpoint and loss curve.
    Pretrain {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        #[command(flatten)]
        cell: CellArgs,
    },
    /// Extract test-split latents to CSV.
    Extract {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one downstream configuration (ten runs).
    TrainDownstream {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        #[command(flatten)]
        cell: CellArgs,
        /// site2, site3, site2-3, concat, or add.
        #[arg(long, default_value = "site2-3")]
        site: String,
        /// flow-class, gender, htn, or dm.
        #[arg(long, default_value = "flow-class")]
        target: String,
        /// svm, knn, or gbt.
        #[arg(long, default_value = "svm")]
        classifier: String,
        /// Condense latents to this dimension with per-run PCA.
        #[arg(long)]
        condense: Option<usize>,
        /// Append encoded demographics after condensation.
        #[arg(long)]
        fuse: bool,
    },
    /// Run a named experiment preset (or all of them).
    RunMatrix {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        /// table2, table3, table5b, table5c, table5d, table5e, or all.
        #[arg(long, default_value = "all")]
        preset: String,
    },
    /// Concatenate preset summaries in the workdir into one report.
    Report {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            let code = match e.downcast_ref::<CoreError>() {
                Some(CoreError::Config(_)) => 2,
                Some(CoreError::Numeric(_)) => 4,
                Some(_) => 3,
                None => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn parse_view(s: &str) -> anyhow::Result<View> {
    match s {
        "waveform" => Ok(View::Waveform),
        "fft" => Ok(View::Fft),
        "stft" => Ok(View::Stft),
        other => Err(CoreError::config(format!("unknown view {other:?}")).into()),
    }
}

fn parse_scheme(s: &str) -> anyhow::Result<TrainScheme> {
    match s {
        "clean-to-clean" => Ok(TrainScheme::CleanToClean),
        "noisy-to-noisy" => Ok(TrainScheme::NoisyToNoisy),
        "noisy-to-clean" => Ok(TrainScheme::NoisyToClean),
        other => Err(CoreError::config(format!("unknown scheme {other:?}")).into()),
    }
}

fn parse_site(s: &str) -> anyhow::Result<SiteSelection> {
    match s {
        "site2" => Ok(SiteSelection::Site2),
        "site3" => Ok(SiteSelection::Site3),
        "site2-3" | "subtract" => Ok(SiteSelection::Subtract),
        "concat" => Ok(SiteSelection::Concat),
        "add" => Ok(SiteSelection::Add),
        other => Err(CoreError::config(format!("unknown site selection {other:?}")).into()),
    }
}

fn parse_target(s: &str) -> anyhow::Result<Target> {
    match s {
        "flow-class" => Ok(Target::FlowClass),
        "gender" => Ok(Target::Gender),
        "htn" => Ok(Target::Htn),
        "dm" => Ok(Target::Dm),
        other => Err(CoreError::config(format!("unknown target {other:?}")).into()),
    }
}

fn parse_classifier(s: &str) -> anyhow::Result<ClassifierKind> {
    match s {
        "svm" => Ok(ClassifierKind::Svm(SvmConfig::default())),
        "knn" => Ok(ClassifierKind::Knn { k: 3 }),
        "gbt" | "lightgbm" => Ok(ClassifierKind::Gbt(GbtConfig::default())),
        other => Err(CoreError::config(format!("unknown classifier {other:?}")).into()),
    }
}

fn cell_spec(args: &CellArgs) -> anyhow::Result<(FeatureSpec, TrainScheme)> {
    if args.level > 3 {
        return Err(CoreError::config(format!("level must be 0..=3, got {}", args.level)).into());
    }
    Ok((
        FeatureSpec {
            level: args.level,
            view: parse_view(&args.view)?,
        },
        parse_scheme(&args.scheme)?,
    ))
}

fn ensure_empty_or_force(dir: &PathBuf, force: bool) -> anyhow::Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(CoreError::config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            ))
            .into());
        }
    }
    Ok(())
}

fn load_file_config(path: &Option<PathBuf>) -> anyhow::Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file_config = load_file_config(&cli.config)?;
    let settings = file_config.settings(cli.seed)?;
    log::info!("config hash {}", &config_hash(&settings)[..16]);

    match cli.command {
        Command::Synth {
            out,
            n_patients,
            force,
        } => {
            ensure_empty_or_force(&out, force)?;
            let mut synth = file_config.synth_config(&settings);
            if let Some(n) = n_patients {
                synth.n_patients = n;
            }
            log::info!(
                "generating {} patients (seed {}) into {}",
                synth.n_patients,
                synth.seed,
                out.display()
            );
            synthdata::write_cohort(&synth, &out)?;
            let counts = synth.class_counts();
            log::info!(
                "class counts: low {}, adequate {}, high {}",
                counts[0],
                counts[1],
                counts[2]
            );
            Ok(())
        }
        Command::Preprocess { cohort, out, force } => {
            ensure_empty_or_force(&out, force)?;
            let loaded = signal_io::load_cohort(&cohort.join("cohort.csv"), &cohort.join("audio"))?;
            for excl in &loaded.exclusions {
                log::warn!("excluded {}: {}", excl.patient_id, excl.reason);
            }
            std::fs::create_dir_all(out.join("audio"))?;
            let mut wtr = csv::WriterBuilder::new()
                .from_path(out.join("cohort.csv"))
                .map_err(|e| CoreError::format(e.to_string()))?;
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
            .map_err(|e| CoreError::format(e.to_string()))?;
            for p in &loaded.patients {
                let s2 = signal_io::preprocess(&p.site2, settings.segment_seconds)?;
                let s3 = signal_io::preprocess(&p.site3, settings.segment_seconds)?;
                let f2 = format!("{}_site2.wav", p.record.patient_id);
                let f3 = format!("{}_site3.wav", p.record.patient_id);
                signal_io::write_wav(&out.join("audio").join(&f2), &s2)?;
                signal_io::write_wav(&out.join("audio").join(&f3), &s3)?;
                wtr.write_record([
                    p.record.patient_id.as_str(),
                    match p.record.gender {
                        signal_io::Gender::Male => "male",
                        signal_io::Gender::Female => "female",
                    },
                    &p.record.age.to_string(),
                    if p.record.htn { "yes" } else { "no" },
                    if p.record.dm { "yes" } else { "no" },
                    &format!("{:.1}", p.record.blood_flow_ml_min),
                    &f2,
                    &f3,
                ])
                .map_err(|e| CoreError::format(e.to_string()))?;
            }
            wtr.flush()?;
            log::info!("preprocessed {} patients", loaded.patients.len());
            Ok(())
        }
        Command::Augment { cohort, out, force } => {
            ensure_empty_or_force(&out, force)?;
            let loaded = signal_io::load_cohort(&cohort.join("cohort.csv"), &cohort.join("audio"))?;
            let mut recordings = Vec::new();
            for p in &loaded.patients {
                recordings.push(signal_io::preprocess(&p.site2, settings.segment_seconds)?);
                recordings.push(signal_io::preprocess(&p.site3, settings.segment_seconds)?);
            }
            let variants = bruitflow::augment::expand_cohort(
                &recordings,
                settings.snr_levels_db,
                settings.master_seed,
            )?;
            log::info!(
                "expanded {} recordings into {} variants",
                recordings.len(),
                variants.len()
            );
            bruitflow::augment::materialize(&variants, &out)?;
            Ok(())
        }
        Command::Pretrain {
            cohort,
            workdir,
            cell,
        } => {
            let (spec, scheme) = cell_spec(&cell)?;
            let mut runner = MatrixRunner::from_cohort_dir(&cohort, settings, &workdir)?;
            log::info!("pretraining {} {}", spec.key(), scheme.name());
            runner.model(spec, scheme)?;
            log::info!(
                "checkpoint stored under {}",
                workdir.join("checkpoints").display()
            );
            Ok(())
        }
        Command::Extract {
            cohort,
            workdir,
            cell,
            out,
        } => {
            let (spec, scheme) = cell_spec(&cell)?;
            let mut runner = MatrixRunner::from_cohort_dir(&cohort, settings, &workdir)?;
            let latents = runner.test_latents(spec, scheme)?;
            dump_latents_csv(latents, &out)?;
            log::info!("wrote {} latents to {}", latents.len(), out.display());
            Ok(())
        }
        Command::TrainDownstream {
            cohort,
            workdir,
            cell,
            site,
            target,
            classifier,
            condense,
            fuse,
        } => {
            let (feature, scheme) = cell_spec(&cell)?;
            let cell = CellConfig {
                feature,
                scheme,
                site: parse_site(&site)?,
                target: parse_target(&target)?,
                classifier: parse_classifier(&classifier)?,
                condensed_dim: condense,
                fuse_demographics: fuse,
            };
            let mut runner = MatrixRunner::from_cohort_dir(&cohort, settings, &workdir)?;
            let report = runner.run_cell(&cell)?;
            let section =
                bruitflow::pipeline::render_section(&cell.key(), &[("result".into(), report)]);
            println!("{section}");
            Ok(())
        }
        Command::RunMatrix {
            cohort,
            workdir,
            preset,
        } => {
            let presets: Vec<Preset> = if preset == "all" {
                Preset::all().to_vec()
            } else {
                vec![Preset::from_name(&preset)?]
            };
            let mut runner = MatrixRunner::from_cohort_dir(&cohort, settings, &workdir)?;
            for p in presets {
                log::info!("running preset {}", p.name());
                let manifest = run_preset(&mut runner, p)?;
                for entry in &manifest {
                    log::info!("  {}: {}", entry.cell, entry.status);
                }
            }
            Ok(())
        }
        Command::Report { workdir, out } => {
            let mut combined = String::new();
            for preset in Preset::all() {
                let path = workdir.join(format!("{}.md", preset.name()));
                if path.is_file() {
                    combined.push_str(&std::fs::read_to_string(&path)?);
                    combined.push('\n');
                } else {
                    combined.push_str(&format!("## {} (not run)\n\n", preset.name()));
                }
            }
            match out {
                Some(path) => {
                    std::fs::write(&path, &combined)?;
                    log::info!("report written to {}", path.display());
                }
                None => print!("{combined}"),
            }
            Ok(())
        }
    }
}
