use std::fs;
use std::path::{Path, PathBuf};

use mhenet::network::{Ablation, NetworkConfig};
use mhenet::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, Common, TrainArgs};

/// Where training samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset root; synthetic data when absent.
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub synthetic: usize,
    pub synthetic_val: usize,
    /// Seed of the synthetic generator; the run seed when absent.
    pub synthetic_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            val: None,
            synthetic: 64,
            synthetic_val: 16,
            synthetic_seed: None,
        }
    }
}

/// Fully resolved settings of a run: the optional TOML file with command-line
/// flags applied on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            out: PathBuf::from("runs/latest"),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::file(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Start from the file named by `--config`, or the defaults, and apply
    /// the shared flags.
    pub fn resolve(common: &Common) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(size) = common.size {
            cfg.network.input_size = size;
        }
        if let Some(c) = common.channels {
            cfg.network.channels = c;
        }
        if let Some(list) = &common.ablate {
            cfg.network.ablation = Ablation::parse_list(list)?;
        }
        if common.threads.is_some() {
            cfg.threads = common.threads;
        }
        if let Some(o) = &common.out {
            cfg.out = o.clone();
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn resolve_train(a: &TrainArgs) -> CliResult<Self> {
        let mut cfg = RunConfig::resolve(&a.common)?;
        let t = &mut cfg.train;
        if let Some(v) = a.epochs {
            t.epochs = v;
        }
        if let Some(v) = a.batch {
            t.batch = v;
        }
        if let Some(v) = a.lr {
            t.schedule.base = v;
        }
        if let Some(v) = a.lr_decay_every {
            t.schedule.every = v;
        }
        if let Some(v) = a.lr_decay_factor {
            t.schedule.divisor = v;
        }
        if a.max_steps.is_some() {
            t.max_steps = a.max_steps;
        }
        if a.no_augment {
            t.augment = false;
        }
        if a.data.is_some() {
            cfg.data.train = a.data.clone();
        }
        if a.val.is_some() {
            cfg.data.val = a.val.clone();
        }
        if let Some(n) = a.synthetic {
            cfg.data.synthetic = n;
        }
        cfg.network.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// One-line summary of the optimizer settings.
    pub fn summary(&self) -> String {
        let t = &self.train;
        format!(
            "lr={:e} batch={} epochs={} lr_decay=/{} every {} epochs seed={} size={}x{} channels={} ablate={}",
            t.schedule.base,
            t.batch,
            t.epochs,
            t.schedule.divisor,
            t.schedule.every,
            self.seed,
            self.network.input_size[0],
            self.network.input_size[1],
            self.network.channels,
            self.network.ablation.describe()
        )
    }
}
