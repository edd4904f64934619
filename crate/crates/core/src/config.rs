//! Experiment configuration files (TOML).
//!
//! One master `seed` drives every random stream of an experiment; see
//! [`crate::seeds`] for how streams are separated.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{DatasetSpec, ExcitationSpec, NoiseSpec, PhParams, PhPlant, Plant, SurrogatePlant};
use crate::training::{ModelInitSpec, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantConfig {
    #[default]
    Surrogate,
    /// Parameter file is resolved relative to the config file.
    Ph { params_file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub excitation: Vec<ExcitationSpec>,
    pub trajectory_length: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise: NoiseSpec,
    pub sampling_time: f64,
    pub inner_steps: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            excitation: vec![ExcitationSpec {
                // seven levels evenly spaced over the surrogate's input range
                levels: (0..7).map(|i| -2.0 + 4.0 * i as f64 / 6.0).collect(),
                hold_min: 5,
                hold_max: 30,
            }],
            trajectory_length: 1250,
            n_train: 10,
            n_val: 3,
            n_test: 1,
            noise: NoiseSpec::default(),
            sampling_time: 10.0,
            inner_steps: 10,
        }
    }
}

impl DatasetConfig {
    pub fn to_spec(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            excitation: self.excitation.clone(),
            trajectory_length: self.trajectory_length,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            noise: self.noise.clone(),
            seed,
            sampling_time: self.sampling_time,
            inner_steps: self.inner_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub horizon: usize,
    pub pairs: usize,
    /// Initial states are uniform in `[-scale, scale]` (normalized units).
    pub init_scale: f64,
    pub excitation: ExcitationSpec,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            horizon: 200,
            pairs: 10,
            init_scale: 1.0,
            excitation: ExcitationSpec {
                levels: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
                hold_min: 5,
                hold_max: 30,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub plant: PlantConfig,
    pub dataset: DatasetConfig,
    pub model: ModelInitSpec,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    /// Extra margin for `certify`: requires `nu < -margin`.
    pub certify_margin: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            plant: PlantConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelInitSpec::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            certify_margin: 0.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))
    }

    /// Loads a config; relative plant parameter paths are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let PlantConfig::Ph { params_file } = &mut cfg.plant {
            if params_file.is_relative() {
                if let Some(dir) = path.parent() {
                    *params_file = dir.join(&*params_file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs always serialize")
    }

    /// Training config with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn build_plant(&self) -> Result<Box<dyn Plant>> {
        Ok(match &self.plant {
            PlantConfig::Surrogate => Box::new(SurrogatePlant),
            PlantConfig::Ph { params_file } => Box::new(PhPlant::new(PhParams::load(params_file)?)?),
        })
    }
}
