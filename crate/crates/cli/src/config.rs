//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use csi_mtl::channel_gen::{validate_cell, ArrayConfig, SubregionConfig};
use csi_mtl::deployment::{DeployMode, TrainConfig};
use csi_mtl::models::{ArchSpec, Family, Ratio};
use csi_mtl::pipeline::SweepTemplate;
use csi_mtl::scenario::{desk_cell, full_cell, CORRELATION_DISTANCE};
use csi_nn::Activation;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Three regions sized for a desktop run.
    Desk,
    /// Five regions, 50,000 samples each.
    Full,
    /// The regions listed under `cell.regions`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub layout: Layout,
    /// Desk layout only.
    pub samples_per_task: usize,
    pub regions: Vec<SubregionConfig>,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            layout: Layout::Desk,
            samples_per_task: 2000,
            regions: Vec::new(),
        }
    }
}

impl CellConfig {
    pub fn regions(&self) -> Result<Vec<SubregionConfig>> {
        match self.layout {
            Layout::Desk => Ok(desk_cell(self.samples_per_task)),
            Layout::Full => Ok(full_cell()?),
            Layout::Custom => Ok(self.regions.clone()),
        }
    }
}

/// Which entries count as zero when measuring NMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmseDomain {
    /// Errors relative to the complex channel (entries measured from the
    /// normalized image of zero).
    Raw,
    /// Errors relative to the normalized tensor as the network sees it.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bins: usize,
    pub coverage: f64,
    /// Samples per task entering the correlation matrices.
    pub correlation_samples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bins: 32,
            coverage: 0.95,
            correlation_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Region diameters in meters.
    pub diameters: Vec<f64>,
    pub template: SweepTemplate,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            diameters: vec![2.0, 20.0, 80.0],
            template: SweepTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityConfig {
    pub families: Vec<Family>,
    pub ratios: Vec<Ratio>,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        ComplexityConfig {
            families: vec![Family::SimpleCnn, Family::CsiNet, Family::CsiNetWide(8), Family::CsiNetWide(16)],
            ratios: [4, 8, 16, 32, 64].iter().map(|&d| Ratio::new(1, d)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    /// Trained mode whose encoder produces the codes.
    pub mode: DeployMode,
    /// Cap on test samples per task; 0 keeps all.
    pub max_per_task: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            mode: DeployMode::StoM,
            max_per_task: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds data generation, splits and training.
    pub seed: u64,
    pub out: PathBuf,
    /// Retained delay bins.
    pub n_c: usize,
    /// Largest region diameter, meters.
    pub correlation_distance: f64,
    /// Also write the raw spatial-frequency channels.
    pub save_spatial_frequency: bool,
    pub modes: Vec<DeployMode>,
    pub nmse_domain: NmseDomain,
    pub array: ArrayConfig,
    pub cell: CellConfig,
    pub arch: ArchSpec,
    /// `train.seed` is replaced by the top-level seed.
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
    pub complexity: ComplexityConfig,
    pub embed: EmbedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut arch = ArchSpec::new(Family::SimpleCnn, Ratio::new(1, 16), 32, 32);
        arch.activation = Activation::leaky();
        ExperimentConfig {
            seed: 1,
            out: PathBuf::from("runs/desk"),
            n_c: 32,
            correlation_distance: CORRELATION_DISTANCE,
            save_spatial_frequency: false,
            modes: DeployMode::ALL.to_vec(),
            nmse_domain: NmseDomain::Raw,
            array: ArrayConfig::default(),
            cell: CellConfig::default(),
            arch,
            train: TrainConfig {
                lr: 3e-3,
                max_epochs: 80,
                gate_max_epochs: 30,
                batch_size: 32,
                patience: 20,
                gate_patience: 10,
                seed: 1,
                split: [0.85, 0.10, 0.05],
            },
            analysis: AnalysisConfig::default(),
            sweep: SweepConfig::default(),
            complexity: ComplexityConfig::default(),
            embed: EmbedConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.train.validate()?;
        if self.arch.n_tx != self.array.n_tx || self.arch.n_c != self.n_c {
            return Err(config_err(format!(
                "arch expects {}x{} inputs but the data are {}x{} (array.n_tx x n_c)",
                self.arch.n_tx, self.arch.n_c, self.array.n_tx, self.n_c
            )));
        }
        if self.n_c == 0 || self.n_c > self.array.n_subcarriers {
            return Err(config_err(format!("n_c must lie in 1..={}", self.array.n_subcarriers)));
        }
        self.arch.code_len()?;
        if self.modes.is_empty() {
            return Err(config_err("modes must name at least one of s2s, m2m, s2m"));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].contains(m) {
                return Err(config_err(format!("mode {m} is listed twice")));
            }
        }
        if self.cell.layout == Layout::Desk && self.cell.samples_per_task == 0 {
            return Err(config_err("cell.samples_per_task must be positive"));
        }
        if self.cell.layout != Layout::Custom && !self.cell.regions.is_empty() {
            return Err(config_err("cell.regions is only read with layout = \"custom\""));
        }
        let regions = self.cell.regions()?;
        validate_cell(&regions, &self.array, self.correlation_distance)?;
        if regions.iter().any(|r| r.sample_count > u32::MAX as usize) {
            return Err(config_err("a region holds more samples than the dataset format can count"));
        }
        if self.analysis.bins == 0 {
            return Err(config_err("analysis.bins must be positive"));
        }
        if !(self.analysis.coverage > 0.0 && self.analysis.coverage <= 1.0) {
            return Err(config_err("analysis.coverage must lie in (0, 1]"));
        }
        if self.analysis.correlation_samples == 0 {
            return Err(config_err("analysis.correlation_samples must be positive"));
        }
        if self.sweep.diameters.iter().any(|d| !(*d > 0.0)) {
            return Err(config_err("sweep.diameters must be positive"));
        }
        Ok(())
    }

    /// Hash of everything that determines the generated dataset.
    pub fn data_hash(&self) -> String {
        #[derive(Serialize)]
        struct DataKey<'a> {
            seed: u64,
            n_c: usize,
            correlation_distance: f64,
            array: &'a ArrayConfig,
            cell: &'a CellConfig,
            split: [f64; 3],
        }
        let key = DataKey {
            seed: self.seed,
            n_c: self.n_c,
            correlation_distance: self.correlation_distance,
            array: &self.array,
            cell: &self.cell,
            split: self.train.split,
        };
        sha256_hex(toml::to_string(&key).expect("data key serializes").as_bytes())
    }

    /// Hash of the whole configuration apart from the output directory.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        sha256_hex(c.to_toml().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
