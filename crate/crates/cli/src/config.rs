//! TOML configuration with command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use bruitflow::pipeline::PipelineSettings;
use bruitflow::synthdata::SynthConfig;
use bruitflow::transforms::Wavelet;

/// Serialized configuration tree. Every field is optional in the file and
/// falls back to the library default; command-line flags override both.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub master_seed: Option<u64>,
    pub segment_seconds: Option<f64>,
    pub wavelet: Option<String>,
    pub snr_levels_db: Option<[f64; 2]>,
    pub pretrain_fraction: Option<f64>,
    pub pretrain_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_patients: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: FileConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("config parse error in {}: {e}", path.display()))?;
        Ok(config)
    }

    /// Effective pipeline settings after applying file values and the
    /// optional seed override from the command line.
    pub fn settings(&self, seed_override: Option<u64>) -> anyhow::Result<PipelineSettings> {
        let mut s = PipelineSettings::default();
        if let Some(v) = self.master_seed {
            s.master_seed = v;
        }
        if let Some(v) = seed_override {
            s.master_seed = v;
        }
        if let Some(v) = self.segment_seconds {
            if !(v > 0.0) {
                anyhow::bail!("segment_seconds must be positive");
            }
            s.segment_seconds = v;
        }
        if let Some(name) = &self.wavelet {
            s.wavelet = Wavelet::from_name(name).map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        if let Some(v) = self.snr_levels_db {
            s.snr_levels_db = v;
        }
        if let Some(v) = self.pretrain_fraction {
            if !(0.0 < v && v < 1.0) {
                anyhow::bail!("pretrain_fraction must be in (0,1)");
            }
            s.pretrain_fraction = v;
        }
        if let Some(v) = self.pretrain_epochs {
            s.pretrain_epochs = v;
        }
        if let Some(v) = self.batch_size {
            if v == 0 {
                anyhow::bail!("batch_size must be positive");
            }
            s.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            if !(v > 0.0) {
                anyhow::bail!("learning_rate must be positive");
            }
            s.learning_rate = v;
        }
        Ok(s)
    }

    /// Synthetic-cohort config under these settings.
    pub fn synth_config(&self, settings: &PipelineSettings) -> SynthConfig {
        let mut c = SynthConfig {
            seed: self.synth.seed.unwrap_or(settings.master_seed),
            ..SynthConfig::default()
        };
        if let Some(n) = self.synth.n_patients {
            c.n_patients = n;
        }
        c
    }
}
