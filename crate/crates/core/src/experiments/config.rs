use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::empirical::EmpiricalConfig;
use crate::error::{Error, Result};
use crate::geometry::{AnalysisConfig, ProjectionOptions};
use crate::net::{NetSpec, Optimizer, TrainConfig};
use crate::synthdata::{SphereDatasetSpec, Subset};

/// Hidden part of the network; input and output widths follow the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden_widths: Vec<usize>,
    pub gain: f64,
    pub bias: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![512; 5],
            gain: 1.0,
            bias: false,
            seed: 0,
        }
    }
}

/// Which checkpoints and representations get a geometry analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSchedule {
    /// Explicit epochs; when empty, epoch 0, best, final and
    /// `log_spaced` intermediate epochs are used.
    pub epochs: Vec<usize>,
    pub log_spaced: usize,
    /// Activation layers (0 is the input); empty means the input and every
    /// hidden layer.
    pub layers: Vec<usize>,
    pub subsets: Vec<Subset>,
    pub p_sel: usize,
    pub m_sel: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub center_projection: bool,
    pub empirical: Option<EmpiricalConfig>,
    /// Epochs for the gradient report; empty means 0, best and final.
    pub grad_epochs: Vec<usize>,
}

impl Default for AnalysisSchedule {
    fn default() -> Self {
        Self {
            epochs: Vec::new(),
            log_spaced: 8,
            layers: Vec::new(),
            subsets: Subset::ALL.to_vec(),
            p_sel: 50,
            m_sel: 50,
            n_samples: 200,
            seed: 0,
            center_projection: true,
            empirical: None,
            grad_epochs: Vec::new(),
        }
    }
}

impl AnalysisSchedule {
    pub fn analysis_config(&self) -> AnalysisConfig {
        AnalysisConfig {
            n_samples: self.n_samples,
            seed: self.seed,
            global_centering: true,
            center_projection: self.center_projection.then(ProjectionOptions::default),
            empirical: self.empirical.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: SphereDatasetSpec,
    pub epsilon: f64,
    pub permutation_seed: u64,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisSchedule,
    /// Hidden-width multipliers for the width sweep.
    pub width_factors: Vec<f64>,
    /// Label noise used by the width sweep.
    pub width_epsilon: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Laptop-scale run: 50 classes of 20-spheres in 512 dimensions, half
    /// the labels permuted, five hidden layers of 512 units.
    pub fn desk() -> Self {
        Self {
            dataset: SphereDatasetSpec::desk(),
            epsilon: 0.5,
            permutation_seed: 1,
            net: NetConfig::default(),
            train: TrainConfig::default(),
            analysis: AnalysisSchedule::default(),
            width_factors: vec![1.0 / 16.0, 1.0 / 8.0, 0.25, 0.5, 1.0, 2.0, 4.0],
            width_epsilon: 0.1,
        }
    }

    /// The full-size synthetic configuration (100 classes, 1024 dimensions,
    /// five hidden layers of 1024 units).
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.dataset = SphereDatasetSpec::full();
        c.net.hidden_widths = vec![1024; 5];
        c
    }

    /// A minute-scale configuration for tests and smoke runs.
    pub fn small() -> Self {
        let mut c = Self::desk();
        c.dataset = SphereDatasetSpec {
            n_classes: 10,
            ambient_dim: 128,
            sphere_dim: 10,
            radius: 5.0,
            train_per_class: 100,
            test_per_class: 50,
            seed: 0,
        };
        c.net.hidden_widths = vec![256; 3];
        c.train = TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 100,
            max_epochs: 300,
            ..TrainConfig::default()
        };
        c.analysis.p_sel = 10;
        c.analysis.m_sel = 20;
        c.width_factors = vec![0.125, 0.25, 0.5, 1.0, 2.0, 4.0];
        c
    }

    /// 50 classes of 10-spheres in 128 dimensions, 256-wide layers and large
    /// Adam batches; a single-core run takes a couple of minutes.
    pub fn reduced() -> Self {
        let mut c = Self::desk();
        c.dataset.ambient_dim = 128;
        c.dataset.sphere_dim = 10;
        c.net.hidden_widths = vec![256; 5];
        c.train = TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 1024,
            max_epochs: 400,
            ..TrainConfig::default()
        };
        c.analysis.m_sel = 20;
        c.analysis.n_samples = 100;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "small" => Ok(Self::small()),
            "reduced" => Ok(Self::reduced()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (desk, full, small, reduced)"))),
        }
    }

    pub fn net_spec(&self) -> NetSpec {
        let mut layer_widths = vec![self.dataset.ambient_dim];
        layer_widths.extend(&self.net.hidden_widths);
        layer_widths.push(self.dataset.n_classes);
        NetSpec {
            layer_widths,
            gain: self.net.gain,
            bias: self.net.bias,
            seed: self.net.seed,
        }
    }

    /// Activation layers to analyze.
    pub fn analysis_layers(&self) -> Vec<usize> {
        if self.analysis.layers.is_empty() {
            (0..=self.net.hidden_widths.len()).collect()
        } else {
            self.analysis.layers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.net_spec().validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.width_epsilon) {
            return Err(Error::Config("epsilon must lie in [0, 1]".into()));
        }
        let a = &self.analysis;
        if a.p_sel < 2 || a.p_sel > self.dataset.n_classes {
            return Err(Error::Config(format!(
                "analysis.p_sel must be in 2..={}, got {}",
                self.dataset.n_classes, a.p_sel
            )));
        }
        if a.m_sel == 0 || a.n_samples == 0 {
            return Err(Error::Config("analysis.m_sel and analysis.n_samples must be >= 1".into()));
        }
        if let Some(&l) = self.analysis_layers().iter().find(|&&l| l > self.net.hidden_widths.len()) {
            return Err(Error::Config(format!("analysis layer {l} does not exist")));
        }
        if self.width_factors.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::Config("width factors must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Overrides every seed with values derived from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        use crate::rng::derive_seed;
        self.dataset.seed = derive_seed(seed, &[1]);
        self.permutation_seed = derive_seed(seed, &[2]);
        self.net.seed = derive_seed(seed, &[3]);
        self.train.seed = derive_seed(seed, &[4]);
        self.analysis.seed = derive_seed(seed, &[5]);
    }
}
