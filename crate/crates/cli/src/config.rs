//! Run configuration: defaults, then the TOML file, then flags.

use std::path::Path;

use neurotree_core::khop::MAX_HOPS;
use neurotree_core::pipeline::TreeConfig;
use neurotree_core::{DynamicBackend, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_PROFILE_HOPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Largest hop in the convergence profile.
    pub k_max: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { k_max: DEFAULT_PROFILE_HOPS }
    }
}

/// Everything a subcommand may read. Sections mirror the core config types.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every section's seed when set.
    pub seed: Option<u64>,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub tree: TreeConfig,
    pub spectral: SpectralConfig,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<DynamicBackend>,
    pub lambda: Option<f64>,
    pub khops: Option<usize>,
    pub alpha: Option<f64>,
    pub levels: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.to_path_buf(), source })?;
                Self::parse(&text)
            }
        }
    }

    /// Applies flags; `--khops` sets the model hop count and, for the
    /// `spectral` profile, its largest hop.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed.or(self.seed) {
            self.seed = Some(seed);
            self.synth.seed = seed;
            self.train.seed = seed;
        }
        if let Some(b) = o.backend {
            self.train.backend = b;
        }
        if let Some(l) = o.lambda {
            self.train.lambda = l;
        }
        if let Some(k) = o.khops {
            if k > MAX_HOPS {
                return Err(CliError::Config(format!("--khops {k} exceeds {MAX_HOPS}")));
            }
            self.train.hops = k;
            self.spectral.k_max = k;
        }
        if let Some(a) = o.alpha {
            self.tree.path.alpha = a;
        }
        if let Some(l) = o.levels {
            self.tree.levels = l;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(b) = o.batch {
            self.train.batch_size = b;
        }
        if let Some(lr) = o.lr {
            self.train.learning_rate = lr;
        }
        self.train.validate().map_err(|e| CliError::Core(e.into()))?;
        self.tree.path.validate().map_err(|e| CliError::Core(e.into()))?;
        if self.spectral.k_max > MAX_HOPS {
            return Err(CliError::Config(format!("spectral.k_max {} exceeds {MAX_HOPS}", self.spectral.k_max)));
        }
        Ok(())
    }
}
