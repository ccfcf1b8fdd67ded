//! Baseline order-verification model without a similarity matrix: each
//! branch's feature map is pooled to summary statistics, the two summaries
//! are concatenated, and a dense stack classifies the pair.

use rand::Rng;

use crate::corpus::MIN_FRAGMENT_FRAMES;
use crate::error::{Error, Result};
use crate::models::trunk::{SiameseTrunk, TrunkCtx, TrunkGrads, TRUNK_IN, TRUNK_OUT};
use crate::tensor::gradcheck::KinkHasher;
use crate::tensor::ops::{
    global_pool, global_pool_backward, relu, relu_backward, softmax_cross_entropy,
    softmax_cross_entropy_backward, Dense, GlobalPoolCtx, GlobalPoolMode,
};
use crate::tensor::{ParamPair, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct SnModel<T> {
    pub trunk: SiameseTrunk<T>,
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
    pub out: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct SnGrads<T> {
    pub trunk: TrunkGrads<T>,
    pub fc1: ParamPair<T>,
    pub fc2: ParamPair<T>,
    pub out: ParamPair<T>,
}

#[derive(Debug, Clone)]
pub struct SnCtx<T> {
    pub ta: TrunkCtx<T>,
    pub tb: TrunkCtx<T>,
    ga_ctx: GlobalPoolCtx<T>,
    gb_ctx: GlobalPoolCtx<T>,
    concat: Tensor<T>,
    f1: Tensor<T>,
    f2: Tensor<T>,
    pub logits: Tensor<T>,
}

impl<T: Scalar> SnCtx<T> {
    pub fn kink_signature(&self) -> u64 {
        let mut h = KinkHasher::new();
        for t in [&self.ta, &self.tb] {
            h.write_mask(t.a1.data());
            h.write_mask(t.a2.data());
            h.write_mask(t.g.data());
        }
        for ctx in [&self.ga_ctx, &self.gb_ctx] {
            h.write_indices(&ctx.argmax);
            for s in &ctx.std {
                h.write_bool(*s > T::zero());
            }
        }
        h.write_mask(self.f1.data());
        h.write_mask(self.f2.data());
        h.finish()
    }
}

impl<T: Scalar> SnModel<T> {
    pub fn new<R: Rng>(stride: usize, rng: &mut R) -> Result<Self> {
        // Each branch pools to [mean | max | std] over 512 channels.
        let branch_dim = GlobalPoolMode::Concat.out_dim(TRUNK_OUT);
        Ok(SnModel {
            trunk: SiameseTrunk::new(stride, rng)?,
            fc1: Dense::new(2 * branch_dim, 1024, rng),
            fc2: Dense::new(1024, 1024, rng),
            out: Dense::new(1024, 2, rng),
        })
    }

    pub fn zero_grads(&self) -> SnGrads<T> {
        SnGrads {
            trunk: TrunkGrads::zeros_like(&self.trunk),
            fc1: ParamPair::zeros_like(&self.fc1.p),
            fc2: ParamPair::zeros_like(&self.fc2.p),
            out: ParamPair::zeros_like(&self.out.p),
        }
    }

    fn check_fragment(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.dim(1) != TRUNK_IN {
            return Err(Error::Shape(format!(
                "fragment wants [frames, {TRUNK_IN}], got {:?}",
                x.shape()
            )));
        }
        if x.dim(0) < MIN_FRAGMENT_FRAMES {
            return Err(Error::Data(format!(
                "fragment too short: {} frames < {MIN_FRAGMENT_FRAMES}",
                x.dim(0)
            )));
        }
        Ok(())
    }

    pub fn forward(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<(Tensor<T>, SnCtx<T>)> {
        self.check_fragment(xa)?;
        self.check_fragment(xb)?;
        let (ga, ta) = self.trunk.encode(xa)?;
        let (gb, tb) = self.trunk.encode(xb)?;
        let (pa, ga_ctx) = global_pool(&ga, GlobalPoolMode::Concat)?;
        let (pb, gb_ctx) = global_pool(&gb, GlobalPoolMode::Concat)?;
        let mut data = Vec::with_capacity(pa.len() + pb.len());
        data.extend_from_slice(pa.data());
        data.extend_from_slice(pb.data());
        let concat = Tensor::from_vec(&[pa.len() + pb.len()], data)?;
        let f1 = relu(&self.fc1.forward(&concat)?);
        let f2 = relu(&self.fc2.forward(&f1)?);
        let logits = self.out.forward(&f2)?;
        let ctx = SnCtx {
            ta,
            tb,
            ga_ctx,
            gb_ctx,
            concat,
            f1,
            f2,
            logits: logits.clone(),
        };
        Ok((logits, ctx))
    }

    pub fn backward(
        &self,
        ctx: &SnCtx<T>,
        grad_logits: &Tensor<T>,
        grads: &mut SnGrads<T>,
    ) -> Result<()> {
        let d_f2 = self.out.backward(&ctx.f2, grad_logits, &mut grads.out)?;
        let d_f1 = self
            .fc2
            .backward(&ctx.f1, &relu_backward(&ctx.f2, &d_f2), &mut grads.fc2)?;
        let d_concat = self
            .fc1
            .backward(&ctx.concat, &relu_backward(&ctx.f1, &d_f1), &mut grads.fc1)?;
        let half = d_concat.len() / 2;
        let d_pa = Tensor::from_vec(&[half], d_concat.data()[..half].to_vec())?;
        let d_pb = Tensor::from_vec(&[half], d_concat.data()[half..].to_vec())?;
        let d_ga = global_pool_backward(&ctx.ga_ctx, &ctx.ta.g, &d_pa)?;
        let d_gb = global_pool_backward(&ctx.gb_ctx, &ctx.tb.g, &d_pb)?;
        self.trunk.backward(&ctx.ta, &d_ga, &mut grads.trunk)?;
        self.trunk.backward(&ctx.tb, &d_gb, &mut grads.trunk)?;
        Ok(())
    }

    pub fn loss_and_grads(
        &self,
        xa: &Tensor<T>,
        xb: &Tensor<T>,
        label: usize,
    ) -> Result<(f64, SnGrads<T>, [f64; 2])> {
        let (logits, ctx) = self.forward(xa, xb)?;
        let (loss, probs) = softmax_cross_entropy(&logits, label)?;
        let grad_logits = softmax_cross_entropy_backward(&probs, label);
        let mut grads = self.zero_grads();
        self.backward(&ctx, &grad_logits, &mut grads)?;
        Ok((loss.as_f64(), grads, [probs.data()[0].as_f64(), probs.data()[1].as_f64()]))
    }

    pub fn prob(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<f64> {
        let (logits, _) = self.forward(xa, xb)?;
        let (_, probs) = softmax_cross_entropy(&logits, 0)?;
        Ok(probs.data()[1].as_f64())
    }

    /// Penultimate-dense-layer activations for a pair.
    pub fn embedding(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<Vec<T>> {
        let (_, ctx) = self.forward(xa, xb)?;
        Ok(ctx.f2.data().to_vec())
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        vec![
            "trunk.conv1.w",
            "trunk.conv1.b",
            "trunk.conv2.w",
            "trunk.conv2.b",
            "trunk.conv3.w",
            "trunk.conv3.b",
            "head.fc1.w",
            "head.fc1.b",
            "head.fc2.w",
            "head.fc2.b",
            "head.out.w",
            "head.out.b",
        ]
    }

    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let t = &self.trunk.convs;
        vec![
            &t[0].p.w, &t[0].p.b, &t[1].p.w, &t[1].p.b, &t[2].p.w, &t[2].p.b,
            &self.fc1.p.w, &self.fc1.p.b, &self.fc2.p.w, &self.fc2.p.b,
            &self.out.p.w, &self.out.p.b,
        ]
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let [t1, t2, t3] = &mut self.trunk.convs;
        vec![
            &mut t1.p.w, &mut t1.p.b, &mut t2.p.w, &mut t2.p.b, &mut t3.p.w, &mut t3.p.b,
            &mut self.fc1.p.w, &mut self.fc1.p.b,
            &mut self.fc2.p.w, &mut self.fc2.p.b,
            &mut self.out.p.w, &mut self.out.p.b,
        ]
    }
}

impl<T: Scalar> SnGrads<T> {
    /// Same order as `SnModel::param_tensors`.
    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        let [t1, t2, t3] = self.trunk.convs;
        vec![
            t1.w, t1.b, t2.w, t2.b, t3.w, t3.b,
            self.fc1.w, self.fc1.b, self.fc2.w, self.fc2.b, self.out.w, self.out.b,
        ]
    }
}
