//! Order-verification models (similarity-matrix classifier and the pooled
//! baseline), their shared trunk, the training loop, and checkpoint glue.

pub mod io;
pub mod sen;
pub mod sim;
pub mod sn;
pub mod train;
pub mod trunk;
pub mod verify;

use serde::{Deserialize, Serialize};

pub use io::{load_model, save_model, LoadedModel, Model, ModelKind};
pub use sen::{SenGrads, SenModel, EMBED_DIM, MIN_SIM_SIDE};
pub use sim::{similarity, SimilarityKernel, NORM_FLOOR};
pub use sn::{SnGrads, SnModel};
pub use train::{train, EpochRecord, PairModel, TrainData, TrainItem, TrainOutcome};
pub use trunk::{SiameseTrunk, TRUNK_IN, TRUNK_OUT};

use crate::audio::MelSpectrogram;
use crate::corpus::NegativeClasses;
use crate::error::{Error, Result};
use crate::tensor::ops::GlobalPoolMode;
use crate::tensor::{Scalar, Tensor};

/// Everything that defines a training run. Defaults are the full model; each
/// published ablation is a single-field change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Halve the learning rate after this many epochs without a validation
    /// improvement.
    pub lr_halve_patience: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub negatives: NegativeClasses,
    pub kernel: SimilarityKernel,
    pub trunk_stride: usize,
    pub pooling: GlobalPoolMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            lr_halve_patience: 3,
            epochs: 30,
            batch_size: 16,
            momentum: 0.9,
            weight_decay: 1e-4,
            negatives: NegativeClasses::default(),
            kernel: SimilarityKernel::Cosine,
            trunk_stride: 1,
            pooling: GlobalPoolMode::Concat,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            // lr = 0 is still useful for no-op training tests; allow >= 0.
            if self.lr != 0.0 {
                return Err(Error::Config(format!("bad learning rate {}", self.lr)));
            }
        }
        if self.trunk_stride != 1 && self.trunk_stride != 2 {
            return Err(Error::Config(format!("trunk stride must be 1 or 2, got {}", self.trunk_stride)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("bad momentum {}", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!("bad weight decay {}", self.weight_decay)));
        }
        if !self.negatives.r2r1 && !self.negatives.r1r3 && !self.negatives.r3r1 {
            return Err(Error::Config("at least one negative pair class is required".into()));
        }
        Ok(())
    }

    /// The eight published configurations: the full model plus its seven
    /// one-field ablations.
    pub fn variants() -> Vec<(&'static str, TrainConfig)> {
        let base = TrainConfig::default();
        let mut v: Vec<(&'static str, TrainConfig)> = Vec::new();
        v.push(("full", base.clone()));
        v.push((
            "inner_product",
            TrainConfig { kernel: SimilarityKernel::InnerProduct, ..base.clone() },
        ));
        v.push(("stride_2", TrainConfig { trunk_stride: 2, ..base.clone() }));
        v.push(("pool_mean", TrainConfig { pooling: GlobalPoolMode::Mean, ..base.clone() }));
        v.push(("pool_max", TrainConfig { pooling: GlobalPoolMode::Max, ..base.clone() }));
        let only = |r2r1, r1r3, r3r1| NegativeClasses { r2r1, r1r3, r3r1 };
        v.push(("only_r2r1", TrainConfig { negatives: only(true, false, false), ..base.clone() }));
        v.push(("only_r1r3", TrainConfig { negatives: only(false, true, false), ..base.clone() }));
        v.push(("only_r3r1", TrainConfig { negatives: only(false, false, true), ..base }));
        v
    }
}

/// Normalized mel frames as a [frames, 128] model input.
pub fn mel_tensor<T: Scalar>(mel: &MelSpectrogram) -> Result<Tensor<T>> {
    if !mel.normalized {
        return Err(Error::Data("model inputs must be normalized mel spectrograms".into()));
    }
    let data = mel.data.iter().map(|v| T::from_f64(*v as f64)).collect();
    Tensor::from_vec(&[mel.frames, crate::audio::mel::MEL_BINS], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_the_full_model() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 16);
        assert!((cfg.momentum - 0.9).abs() < 1e-12);
        assert_eq!(cfg.kernel, SimilarityKernel::Cosine);
        assert_eq!(cfg.trunk_stride, 1);
        assert_eq!(cfg.pooling, GlobalPoolMode::Concat);
        assert!(cfg.negatives.r2r1 && cfg.negatives.r1r3 && cfg.negatives.r3r1);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn each_variant_changes_exactly_one_field() {
        let variants = TrainConfig::variants();
        assert_eq!(variants.len(), 8);
        let base = serde_json::to_value(TrainConfig::default()).unwrap();
        let base_map = base.as_object().unwrap();
        for (name, cfg) in &variants[1..] {
            cfg.validate().unwrap();
            let v = serde_json::to_value(cfg).unwrap();
            let changed = v
                .as_object()
                .unwrap()
                .iter()
                .filter(|(k, val)| base_map[*k] != **val)
                .count();
            assert_eq!(changed, 1, "variant {name} changed {changed} fields");
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = TrainConfig { trunk_stride: 2, seed: 9, ..TrainConfig::default() };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_json_fills_defaults_and_unknown_keys_fail() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"lr": 0.5}"#).unwrap();
        assert!((cfg.lr - 0.5).abs() < 1e-12);
        assert_eq!(cfg.epochs, TrainConfig::default().epochs);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lrx": 0.5}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut cfg = TrainConfig { trunk_stride: 3, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.trunk_stride = 1;
        cfg.negatives = NegativeClasses { r2r1: false, r1r3: false, r3r1: false };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mel_tensor_requires_normalization() {
        let mel = MelSpectrogram::new(vec![0.5; 128 * 4], 4, false).unwrap();
        assert!(mel_tensor::<f32>(&mel).is_err());
        let normed = MelSpectrogram::new(vec![0.5; 128 * 4], 4, true).unwrap();
        let t = mel_tensor::<f32>(&normed).unwrap();
        assert_eq!(t.shape(), &[4, 128]);
    }
}
