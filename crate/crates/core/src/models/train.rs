//! SGD training over labeled fragment pairs.
//!
//! Fragments in a batch can have different lengths, so each pair runs its own
//! forward/backward and the batch gradient is the accumulated mean. Pair
//! gradients are summed in item order, which keeps a fixed seed bitwise
//! reproducible regardless of worker-thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FragmentPair, PairClass};
use crate::error::{Error, Result};
use crate::models::sen::SenModel;
use crate::models::sn::SnModel;
use crate::models::TrainConfig;
use crate::tensor::optim::SgdMomentum;
use crate::tensor::{Scalar, Tensor};

/// One labeled pair, resolved to frame ranges inside a cached song.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainItem {
    pub song: usize,
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub label: usize,
    pub class: PairClass,
}

/// Songs as normalized [frames, 128] tensors plus the pairs drawn from them.
#[derive(Debug, Clone, Default)]
pub struct TrainData<T> {
    pub songs: Vec<Tensor<T>>,
    pub items: Vec<TrainItem>,
}

impl<T: Scalar> TrainData<T> {
    pub fn push_song(&mut self, song: Tensor<T>, pairs: &[FragmentPair]) {
        let idx = self.songs.len();
        self.songs.push(song);
        for p in pairs {
            self.items.push(TrainItem {
                song: idx,
                a: (p.a.frame_start, p.a.frame_end),
                b: (p.b.frame_start, p.b.frame_end),
                label: p.label as usize,
                class: p.class,
            });
        }
    }

    pub fn fragment(&self, song: usize, range: (usize, usize)) -> Result<Tensor<T>> {
        let s = self
            .songs
            .get(song)
            .ok_or_else(|| Error::Data(format!("song index {song} out of range")))?;
        let (start, end) = range;
        let width = s.dim(1);
        if start >= end || end > s.dim(0) {
            return Err(Error::Data(format!(
                "fragment frames {start}..{end} outside song of {} frames",
                s.dim(0)
            )));
        }
        Tensor::from_vec(&[end - start, width], s.data()[start * width..end * width].to_vec())
    }
}

/// What the trainer needs from a model; both architectures provide it.
pub trait PairModel<T: Scalar>: Clone + Send + Sync {
    /// Loss plus parameter gradients flattened in `param_tensors` order.
    fn loss_grads_flat(
        &self,
        xa: &Tensor<T>,
        xb: &Tensor<T>,
        label: usize,
    ) -> Result<(f64, Vec<Tensor<T>>)>;
    fn prob(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<f64>;
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
}

impl<T: Scalar> PairModel<T> for SenModel<T> {
    fn loss_grads_flat(
        &self,
        xa: &Tensor<T>,
        xb: &Tensor<T>,
        label: usize,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        let (loss, grads, _) = self.loss_and_grads(xa, xb, label)?;
        Ok((loss, grads.into_tensors()))
    }

    fn prob(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<f64> {
        SenModel::prob(self, xa, xb)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.param_tensors()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.param_tensors_mut()
    }
}

impl<T: Scalar> PairModel<T> for SnModel<T> {
    fn loss_grads_flat(
        &self,
        xa: &Tensor<T>,
        xb: &Tensor<T>,
        label: usize,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        let (loss, grads, _) = self.loss_and_grads(xa, xb, label)?;
        Ok((loss, grads.into_tensors()))
    }

    fn prob(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<f64> {
        SnModel::prob(self, xa, xb)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.param_tensors()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.param_tensors_mut()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pa: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Weights from the epoch with the best validation accuracy.
    pub model: M,
    pub best_val_pa: f64,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Fraction of pairs whose predicted class (p > 0.5) matches the label.
pub fn pair_accuracy<T: Scalar, M: PairModel<T>>(model: &M, data: &TrainData<T>) -> Result<f64> {
    if data.items.is_empty() {
        return Err(Error::Data("empty pair set".into()));
    }
    let correct: Result<Vec<bool>> = data
        .items
        .par_iter()
        .map(|it| {
            let xa = data.fragment(it.song, it.a)?;
            let xb = data.fragment(it.song, it.b)?;
            let p = model.prob(&xa, &xb)?;
            Ok(usize::from(p > 0.5) == it.label)
        })
        .collect();
    let correct = correct?;
    Ok(correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64)
}

pub fn train<T: Scalar, M: PairModel<T>>(
    mut model: M,
    cfg: &TrainConfig,
    data: &TrainData<T>,
    val: &TrainData<T>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if data.items.is_empty() || val.items.is_empty() {
        return Err(Error::Data("training and validation pair sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocities: Vec<Tensor<T>> =
        model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut lr = cfg.lr;
    let mut best: Option<(M, f64, usize)> = None;
    let mut stale_epochs = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..data.items.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Result<Vec<(f64, Vec<Tensor<T>>)>> = batch
                .par_iter()
                .map(|idx| {
                    let it = &data.items[*idx];
                    let xa = data.fragment(it.song, it.a)?;
                    let xb = data.fragment(it.song, it.b)?;
                    model.loss_grads_flat(&xa, &xb, it.label)
                })
                .collect();
            let results = results?;

            let mut grad_sum: Vec<Tensor<T>> =
                model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for (loss, grads) in &results {
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss {loss} in epoch {epoch}"
                    )));
                }
                loss_sum += loss;
                for (acc, g) in grad_sum.iter_mut().zip(grads) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + *v;
                    }
                }
            }
            let scale = T::from_f64(1.0 / results.len() as f64);
            for g in grad_sum.iter_mut() {
                for v in g.data_mut() {
                    *v = *v * scale;
                }
            }
            let opt = SgdMomentum {
                lr,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            };
            for ((param, grad), vel) in
                model.params_mut().into_iter().zip(&grad_sum).zip(velocities.iter_mut())
            {
                opt.step(param, grad, vel)?;
            }
        }

        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.items.len() as f64,
            val_pa: pair_accuracy(&model, val)?,
            lr,
        };
        on_epoch(&record);
        log.push(record.clone());

        let improved = best.as_ref().is_none_or(|(_, pa, _)| record.val_pa > *pa);
        if improved {
            best = Some((model.clone(), record.val_pa, epoch));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.lr_halve_patience {
                lr *= 0.5;
                stale_epochs = 0;
            }
        }
    }

    let (model, best_val_pa, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_val_pa,
        best_epoch,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::sim::SimilarityKernel;
    use crate::tensor::ops::GlobalPoolMode;
    use rand::Rng;

    // A small synthetic "song" with smooth frame-to-frame drift so that
    // consecutive fragments are recognizably continuous at the boundary.
    fn smooth_song(frames: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state: Vec<f32> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut data = Vec::with_capacity(frames * 128);
        for _ in 0..frames {
            for s in state.iter_mut() {
                *s = 0.9 * *s + 0.1 * rng.random_range(-1.0f32..1.0);
            }
            data.extend_from_slice(&state);
        }
        Tensor::from_vec(&[frames, 128], data).unwrap()
    }

    fn four_pair_data(seed: u64) -> TrainData<f32> {
        let mut data = TrainData::default();
        data.songs.push(smooth_song(160, seed));
        let frag = |i: usize| (i * 40, (i + 1) * 40);
        let item = |a: usize, b: usize, label: usize, class| TrainItem {
            song: 0,
            a: frag(a),
            b: frag(b),
            label,
            class,
        };
        data.items = vec![
            item(0, 1, 1, PairClass::R1R2),
            item(1, 0, 0, PairClass::R2R1),
            item(0, 2, 0, PairClass::R1R3),
            item(2, 3, 1, PairClass::R1R2),
        ];
        data
    }

    fn tiny_sen(seed: u64) -> SenModel<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SenModel::new(1, SimilarityKernel::Cosine, GlobalPoolMode::Concat, &mut rng).unwrap()
    }

    #[test]
    fn zero_lr_leaves_weights_untouched() {
        let data = four_pair_data(1);
        let model = tiny_sen(2);
        let before: Vec<Vec<u32>> = model
            .params()
            .iter()
            .map(|p| p.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let cfg = TrainConfig {
            lr: 0.0,
            weight_decay: 0.0,
            epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(model, &cfg, &data, &data, |_| {}).unwrap();
        let after: Vec<Vec<u32>> = out
            .model
            .params()
            .iter()
            .map(|p| p.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn four_pair_smoke_loss_strictly_decreases() {
        // Low-amplitude songs under the inner-product kernel keep early
        // gradient steps small, so the full-batch trajectory is monotone at
        // the default lr; unit-scale songs overshoot on the first step.
        let mut data = four_pair_data(2);
        for v in data.songs[0].data_mut() {
            *v *= 0.1;
        }
        let cfg = TrainConfig {
            epochs: 10,
            kernel: SimilarityKernel::InnerProduct,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model =
            SenModel::new(1, SimilarityKernel::InnerProduct, GlobalPoolMode::Concat, &mut rng)
                .unwrap();
        let out = train(model, &cfg, &data, &data, |_| {}).unwrap();
        assert_eq!(out.log.len(), 10);
        for w in out.log.windows(2) {
            assert!(
                w[1].train_loss < w[0].train_loss,
                "loss rose from {} to {} at epoch {}",
                w[0].train_loss,
                w[1].train_loss,
                w[1].epoch
            );
        }
        // The drop is substantive, not a numerical wobble.
        assert!(out.log[9].train_loss < out.log[0].train_loss - 0.1);
    }

    #[test]
    fn fixed_seed_reproduces_weights_bitwise() {
        let data = four_pair_data(5);
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let a = train(tiny_sen(6), &cfg, &data, &data, |_| {}).unwrap();
        let b = train(tiny_sen(6), &cfg, &data, &data, |_| {}).unwrap();
        for (pa, pb) in a.model.params().iter().zip(b.model.params()) {
            let ba: Vec<u32> = pa.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = pb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn empty_pair_sets_are_rejected() {
        let data = four_pair_data(7);
        let empty = TrainData::<f32>::default();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(train(tiny_sen(8), &cfg, &empty, &data, |_| {}).is_err());
        assert!(train(tiny_sen(8), &cfg, &data, &empty, |_| {}).is_err());
    }

    #[test]
    fn runaway_lr_reports_divergence() {
        let data = four_pair_data(9);
        let cfg = TrainConfig {
            lr: 50.0,
            epochs: 8,
            ..TrainConfig::default()
        };
        match train(tiny_sen(10), &cfg, &data, &data, |_| {}) {
            Err(Error::Diverged(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn lr_halves_after_patience_runs_out() {
        // Validation PA is constant when lr is 0 after epoch 1… instead use a
        // tiny lr so weights barely move and PA stays flat, then check the
        // schedule kicked in.
        let data = four_pair_data(11);
        let cfg = TrainConfig {
            lr: 1e-9,
            lr_halve_patience: 2,
            epochs: 6,
            ..TrainConfig::default()
        };
        let out = train(tiny_sen(12), &cfg, &data, &data, |_| {}).unwrap();
        // Epoch 1 sets the best; epochs 2..3 go stale -> halve before 4;
        // 4..5 stale -> halve before 6.
        assert!((out.log[0].lr - 1e-9).abs() < 1e-24);
        assert!((out.log[3].lr - 0.5e-9).abs() < 1e-24);
        assert!((out.log[5].lr - 0.25e-9).abs() < 1e-24);
    }

    #[test]
    fn best_checkpoint_tracks_validation_peak() {
        let data = four_pair_data(13);
        let cfg = TrainConfig { epochs: 6, ..TrainConfig::default() };
        let out = train(tiny_sen(14), &cfg, &data, &data, |_| {}).unwrap();
        let best_by_log = out
            .log
            .iter()
            .max_by(|a, b| a.val_pa.partial_cmp(&b.val_pa).unwrap())
            .unwrap();
        assert_eq!(out.best_val_pa, best_by_log.val_pa);
        let final_pa = pair_accuracy(&out.model, &data).unwrap();
        assert!((final_pa - out.best_val_pa).abs() < 1e-12);
    }
}
