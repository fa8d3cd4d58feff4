//! Experiment configuration file shared by all subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spnas::data::{synth_classification, Dataset, SynthConfig};
use spnas::hypertune::{HypertuneConfig, SyntheticBackend};
use spnas::latency::{lutgen, LatencyTable, MonotonePolicy, RuntimeModel};
use spnas::nas::{RandomSearchConfig, SearchConfig, TrainConfig, VarianceConfig};
use spnas::space::{Architecture, SearchSpaceConfig};
use spnas::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// `classes` and `image_size` are taken from the search space.
    Synthetic(SynthConfig),
    Idx { images: PathBuf, labels: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

/// Every section is optional; missing ones take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub space: SearchSpaceConfig,
    pub data: DataSource,
    /// Seed of the dataset split (and of the synthetic generator).
    pub data_seed: u64,
    /// Used when no `--lut` is given: a synthetic table with this noise.
    pub lut_noise: Option<f64>,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub random: RandomSearchConfig,
    pub variance: VarianceConfig,
    pub hypertune: HypertuneConfig,
    pub synthetic_backend: SyntheticBackend,
}

pub const DEFAULT_LUT_NOISE: f64 = 0.1;

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

impl Experiment {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let exp: Experiment = match path {
            Some(p) => read_json(p)?,
            None => Experiment::default(),
        };
        exp.space.validate()?;
        Ok(exp)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let data = match &self.data {
            DataSource::Synthetic(s) => synth_classification(
                &SynthConfig {
                    classes: self.space.classes,
                    image_size: self.space.image_size,
                    ..*s
                },
                self.data_seed,
            )?,
            DataSource::Idx { images, labels } => Dataset::load_idx(images, labels, self.data_seed)?,
        };
        let [c, h, w] = data.image_shape();
        if c != self.space.in_channels || h != self.space.image_size || w != self.space.image_size {
            return Err(Error::Config(format!(
                "dataset images are {c}×{h}×{w} but the search space expects {}×{}×{}",
                self.space.in_channels, self.space.image_size, self.space.image_size
            )));
        }
        if data.classes != self.space.classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the search space has {}",
                data.classes, self.space.classes
            )));
        }
        Ok(data)
    }

    /// The table from `--lut`, or a synthetic one for the configured space.
    pub fn runtime_model(&self, lut: Option<&Path>) -> Result<RuntimeModel> {
        let table = match lut {
            Some(p) => LatencyTable::load(p, MonotonePolicy::Warn)?,
            None => lutgen(&self.space, 0, self.lut_noise.unwrap_or(DEFAULT_LUT_NOISE))?,
        };
        if table.num_layers() != self.space.num_layers() {
            return Err(Error::Config(format!(
                "latency table has {} layers but the search space has {}",
                table.num_layers(),
                self.space.num_layers()
            )));
        }
        Ok(RuntimeModel::new(table))
    }
}

pub fn load_arch(path: &Path) -> Result<Architecture> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Architecture::from_json(&text)
}
