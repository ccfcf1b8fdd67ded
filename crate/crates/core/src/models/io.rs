//! Saving and loading trained models as single-file checkpoints.
//!
//! The container holds every parameter tensor by name, the per-bin
//! normalization stats the model was trained with, and a config blob with
//! the model kind, its training configuration, and free-form run metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audio::{CorpusStats, MEL_BINS};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::models::sen::SenModel;
use crate::models::sn::SnModel;
use crate::models::train::PairModel;
use crate::models::TrainConfig;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sen,
    Sn,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sen" => Ok(ModelKind::Sen),
            "sn" => Ok(ModelKind::Sn),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// A trained model of either architecture.
#[derive(Debug, Clone)]
pub enum Model {
    Sen(SenModel<f32>),
    Sn(SnModel<f32>),
}

impl Model {
    /// Fresh architecture of the requested kind, initialized from the
    /// config's seed and architecture fields.
    pub fn init(kind: ModelKind, config: &TrainConfig) -> Result<Model> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        Ok(match kind {
            ModelKind::Sen => Model::Sen(SenModel::new(
                config.trunk_stride,
                config.kernel,
                config.pooling,
                &mut rng,
            )?),
            ModelKind::Sn => Model::Sn(SnModel::new(config.trunk_stride, &mut rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Sen(_) => ModelKind::Sen,
            Model::Sn(_) => ModelKind::Sn,
        }
    }

    pub fn prob(&self, xa: &Tensor<f32>, xb: &Tensor<f32>) -> Result<f64> {
        match self {
            Model::Sen(m) => m.prob(xa, xb),
            Model::Sn(m) => m.prob(xa, xb),
        }
    }

    /// Penultimate-dense-layer activations for a pair (1024-dim for both
    /// architectures).
    pub fn embedding(&self, xa: &Tensor<f32>, xb: &Tensor<f32>) -> Result<Vec<f32>> {
        match self {
            Model::Sen(m) => m.embedding(xa, xb),
            Model::Sn(m) => m.embedding(xa, xb),
        }
    }

    fn named_tensors(&self) -> (Vec<&'static str>, Vec<&Tensor<f32>>) {
        match self {
            Model::Sen(m) => (m.param_names(), m.param_tensors()),
            Model::Sn(m) => (m.param_names(), m.param_tensors()),
        }
    }
}

// The trainer accepts either architecture behind the enum.
impl PairModel<f32> for Model {
    fn loss_grads_flat(
        &self,
        xa: &Tensor<f32>,
        xb: &Tensor<f32>,
        label: usize,
    ) -> Result<(f64, Vec<Tensor<f32>>)> {
        match self {
            Model::Sen(m) => m.loss_grads_flat(xa, xb, label),
            Model::Sn(m) => m.loss_grads_flat(xa, xb, label),
        }
    }

    fn prob(&self, xa: &Tensor<f32>, xb: &Tensor<f32>) -> Result<f64> {
        Model::prob(self, xa, xb)
    }

    fn params(&self) -> Vec<&Tensor<f32>> {
        match self {
            Model::Sen(m) => m.param_tensors(),
            Model::Sn(m) => m.param_tensors(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        match self {
            Model::Sen(m) => m.param_tensors_mut(),
            Model::Sn(m) => m.param_tensors_mut(),
        }
    }
}

/// Checkpoint contents after loading.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: Model,
    pub stats: CorpusStats,
    pub config: TrainConfig,
    pub meta: serde_json::Value,
}

pub fn save_model(
    path: &Path,
    model: &Model,
    stats: &CorpusStats,
    config: &TrainConfig,
    meta: serde_json::Value,
) -> Result<()> {
    stats.validate()?;
    let blob = json!({
        "model": model.kind(),
        "train": config,
        "meta": meta,
    });
    let mut container = Container::new(blob);
    let (names, tensors) = model.named_tensors();
    for (name, t) in names.into_iter().zip(tensors) {
        container.insert(name, t.clone());
    }
    container.insert("norm.mean", Tensor::from_vec(&[MEL_BINS], stats.mean.clone())?);
    container.insert("norm.std", Tensor::from_vec(&[MEL_BINS], stats.std.clone())?);
    container.save(path)
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let container = Container::load(path)?;
    let kind: ModelKind = serde_json::from_value(
        container
            .config
            .get("model")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("config blob lacks a model kind".into()))?,
    )?;
    let config: TrainConfig = serde_json::from_value(
        container
            .config
            .get("train")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("config blob lacks a train config".into()))?,
    )?;
    config.validate()?;
    let meta = container.config.get("meta").cloned().unwrap_or(serde_json::Value::Null);

    // Build the architecture from the config, then overwrite every weight.
    // The seed only shapes the throwaway initialization.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut model = match kind {
        ModelKind::Sen => Model::Sen(SenModel::new(
            config.trunk_stride,
            config.kernel,
            config.pooling,
            &mut rng,
        )?),
        ModelKind::Sn => Model::Sn(SnModel::new(config.trunk_stride, &mut rng)?),
    };
    {
        let (names, mut slots): (Vec<&'static str>, Vec<&mut Tensor<f32>>) = match &mut model {
            Model::Sen(m) => (m.param_names(), m.param_tensors_mut()),
            Model::Sn(m) => (m.param_names(), m.param_tensors_mut()),
        };
        for (name, slot) in names.into_iter().zip(slots.iter_mut()) {
            let stored = container.require(name)?;
            if stored.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(stored.data());
        }
    }
    let stats = CorpusStats {
        mean: container.require("norm.mean")?.data().to_vec(),
        std: container.require("norm.std")?.data().to_vec(),
    };
    stats.validate()?;
    Ok(LoadedModel {
        model,
        stats,
        config,
        meta,
    })
}
