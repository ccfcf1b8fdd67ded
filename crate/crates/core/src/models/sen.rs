//! Order-verification model: a shared frame encoder feeds a frame-similarity
//! matrix, which a small 2-d ConvNet embeds into a 2-way consecutive /
//! not-consecutive decision.

use rand::Rng;

use crate::corpus::MIN_FRAGMENT_FRAMES;
use crate::error::{Error, Result};
use crate::models::sim::{similarity, similarity_backward, SimCtx, SimilarityKernel};
use crate::models::trunk::{SiameseTrunk, TrunkCtx, TrunkGrads, TRUNK_IN};
use crate::tensor::gradcheck::KinkHasher;
use crate::tensor::ops::{
    global_pool, global_pool_backward, maxpool2d, maxpool2d_backward, relu, relu_backward,
    softmax_cross_entropy, softmax_cross_entropy_backward, Conv2d, Dense, GlobalPoolCtx,
    GlobalPoolMode, PoolCtx,
};
use crate::tensor::{ParamPair, Scalar, Tensor};

/// Smallest similarity-matrix side the head accepts: three valid 3x3 convs
/// with a 3x3 pool after each need 27 -> 25 -> 9 -> 7 -> 3 -> 1 -> 1.
pub const MIN_SIM_SIDE: usize = 27;
pub const EMBED_DIM: usize = 1024;
const HEAD_CHANNELS: [usize; 3] = [64, 128, 256];

/// 2-d ConvNet + classifier over a similarity matrix.
#[derive(Debug, Clone)]
pub struct SenHead<T> {
    pub convs: [Conv2d<T>; 3],
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
    pub out: Dense<T>,
    pub pooling: GlobalPoolMode,
}

#[derive(Debug, Clone)]
pub struct SenHeadCtx<T> {
    s3: Tensor<T>,
    r1: Tensor<T>,
    p1ctx: PoolCtx,
    p1: Tensor<T>,
    r2: Tensor<T>,
    p2ctx: PoolCtx,
    p2: Tensor<T>,
    r3: Tensor<T>,
    p3ctx: PoolCtx,
    p3: Tensor<T>,
    gctx: GlobalPoolCtx<T>,
    pooled: Tensor<T>,
    f1: Tensor<T>,
    /// Post-ReLU activations of the penultimate dense layer; doubles as the
    /// exported pair embedding.
    pub f2: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct SenHeadGrads<T> {
    pub convs: [ParamPair<T>; 3],
    pub fc1: ParamPair<T>,
    pub fc2: ParamPair<T>,
    pub out: ParamPair<T>,
}

impl<T: Scalar> SenHead<T> {
    pub fn new<R: Rng>(pooling: GlobalPoolMode, rng: &mut R) -> Self {
        let mut c_in = 1;
        let convs = HEAD_CHANNELS.map(|c_out| {
            let conv = Conv2d::new(c_in, c_out, rng);
            c_in = c_out;
            conv
        });
        let pooled_dim = pooling.out_dim(HEAD_CHANNELS[2]);
        SenHead {
            convs,
            fc1: Dense::new(pooled_dim, 1024, rng),
            fc2: Dense::new(1024, 1024, rng),
            out: Dense::new(1024, 2, rng),
            pooling,
        }
    }

    pub fn zero_grads(&self) -> SenHeadGrads<T> {
        SenHeadGrads {
            convs: [
                ParamPair::zeros_like(&self.convs[0].p),
                ParamPair::zeros_like(&self.convs[1].p),
                ParamPair::zeros_like(&self.convs[2].p),
            ],
            fc1: ParamPair::zeros_like(&self.fc1.p),
            fc2: ParamPair::zeros_like(&self.fc2.p),
            out: ParamPair::zeros_like(&self.out.p),
        }
    }

    pub fn forward(&self, s: &Tensor<T>) -> Result<(Tensor<T>, SenHeadCtx<T>)> {
        if s.shape().len() != 2 {
            return Err(Error::Shape(format!("head wants [n, m], got {:?}", s.shape())));
        }
        let (n, m) = (s.dim(0), s.dim(1));
        let s3 = s.clone().reshaped(&[n, m, 1])?;
        let r1 = relu(&self.convs[0].forward(&s3)?);
        let (p1, p1ctx) = maxpool2d(&r1)?;
        let r2 = relu(&self.convs[1].forward(&p1)?);
        let (p2, p2ctx) = maxpool2d(&r2)?;
        let r3 = relu(&self.convs[2].forward(&p2)?);
        let (p3, p3ctx) = maxpool2d(&r3)?;
        let (pooled, gctx) = global_pool(&p3, self.pooling)?;
        let f1 = relu(&self.fc1.forward(&pooled)?);
        let f2 = relu(&self.fc2.forward(&f1)?);
        let logits = self.out.forward(&f2)?;
        let ctx = SenHeadCtx {
            s3,
            r1,
            p1ctx,
            p1,
            r2,
            p2ctx,
            p2,
            r3,
            p3ctx,
            p3,
            gctx,
            pooled,
            f1,
            f2,
        };
        Ok((logits, ctx))
    }

    /// Returns the gradient with respect to the similarity matrix.
    pub fn backward(
        &self,
        ctx: &SenHeadCtx<T>,
        grad_logits: &Tensor<T>,
        grads: &mut SenHeadGrads<T>,
    ) -> Result<Tensor<T>> {
        let d_f2 = self.out.backward(&ctx.f2, grad_logits, &mut grads.out)?;
        let d_f1 = self
            .fc2
            .backward(&ctx.f1, &relu_backward(&ctx.f2, &d_f2), &mut grads.fc2)?;
        let d_pooled = self
            .fc1
            .backward(&ctx.pooled, &relu_backward(&ctx.f1, &d_f1), &mut grads.fc1)?;
        let d_p3 = global_pool_backward(&ctx.gctx, &ctx.p3, &d_pooled)?;
        let d_r3 = maxpool2d_backward(&ctx.p3ctx, &d_p3)?;
        let d_p2 = self
            .convs[2]
            .backward(&ctx.p2, &relu_backward(&ctx.r3, &d_r3), &mut grads.convs[2])?;
        let d_r2 = maxpool2d_backward(&ctx.p2ctx, &d_p2)?;
        let d_p1 = self
            .convs[1]
            .backward(&ctx.p1, &relu_backward(&ctx.r2, &d_r2), &mut grads.convs[1])?;
        let d_r1 = maxpool2d_backward(&ctx.p1ctx, &d_p1)?;
        let d_s3 = self
            .convs[0]
            .backward(&ctx.s3, &relu_backward(&ctx.r1, &d_r1), &mut grads.convs[0])?;
        let (n, m) = (ctx.s3.dim(0), ctx.s3.dim(1));
        d_s3.reshaped(&[n, m])
    }
}

#[derive(Debug, Clone)]
pub struct SenModel<T> {
    pub trunk: SiameseTrunk<T>,
    pub head: SenHead<T>,
    pub kernel: SimilarityKernel,
}

#[derive(Debug, Clone)]
pub struct SenGrads<T> {
    pub trunk: TrunkGrads<T>,
    pub head: SenHeadGrads<T>,
}

#[derive(Debug, Clone)]
pub struct SenCtx<T> {
    pub ta: TrunkCtx<T>,
    pub tb: TrunkCtx<T>,
    pub sim: SimCtx<T>,
    pub head: SenHeadCtx<T>,
    pub logits: Tensor<T>,
}

impl<T: Scalar> SenCtx<T> {
    /// Fingerprint of every non-smooth decision taken during the forward
    /// pass; identical signatures mean the network was piecewise-linear (plus
    /// smooth ops) on the whole segment between two evaluation points.
    pub fn kink_signature(&self) -> u64 {
        let mut h = KinkHasher::new();
        for t in [&self.ta, &self.tb] {
            h.write_mask(t.a1.data());
            h.write_mask(t.a2.data());
            h.write_mask(t.g.data());
        }
        for f in self.sim.floored_a.iter().chain(&self.sim.floored_b) {
            h.write_bool(*f);
        }
        h.write_mask(self.head.r1.data());
        h.write_mask(self.head.r2.data());
        h.write_mask(self.head.r3.data());
        h.write_indices(&self.head.p1ctx.argmax);
        h.write_indices(&self.head.p2ctx.argmax);
        h.write_indices(&self.head.p3ctx.argmax);
        h.write_indices(&self.head.gctx.argmax);
        for s in &self.head.gctx.std {
            h.write_bool(*s > T::zero());
        }
        h.write_mask(self.head.f1.data());
        h.write_mask(self.head.f2.data());
        h.finish()
    }
}

impl<T: Scalar> SenModel<T> {
    pub fn new<R: Rng>(
        stride: usize,
        kernel: SimilarityKernel,
        pooling: GlobalPoolMode,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SenModel {
            trunk: SiameseTrunk::new(stride, rng)?,
            head: SenHead::new(pooling, rng),
            kernel,
        })
    }

    pub fn zero_grads(&self) -> SenGrads<T> {
        SenGrads {
            trunk: TrunkGrads::zeros_like(&self.trunk),
            head: self.head.zero_grads(),
        }
    }

    fn check_fragment(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.dim(1) != TRUNK_IN {
            return Err(Error::Shape(format!(
                "fragment wants [frames, {TRUNK_IN}], got {:?}",
                x.shape()
            )));
        }
        let t = x.dim(0);
        if t < MIN_FRAGMENT_FRAMES {
            return Err(Error::Data(format!(
                "fragment too short: {t} frames < {MIN_FRAGMENT_FRAMES}"
            )));
        }
        let side = self.trunk.out_len(t)?;
        if side < MIN_SIM_SIDE {
            return Err(Error::Data(format!(
                "fragment too short: encoded length {side} < {MIN_SIM_SIDE} at stride {}",
                self.trunk.stride()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<(Tensor<T>, SenCtx<T>)> {
        self.check_fragment(xa)?;
        self.check_fragment(xb)?;
        let (ga, ta) = self.trunk.encode(xa)?;
        let (gb, tb) = self.trunk.encode(xb)?;
        let (s, sim) = similarity(&ga, &gb, self.kernel)?;
        let (logits, head) = self.head.forward(&s)?;
        let ctx = SenCtx {
            ta,
            tb,
            sim,
            head,
            logits: logits.clone(),
        };
        Ok((logits, ctx))
    }

    pub fn backward(
        &self,
        ctx: &SenCtx<T>,
        grad_logits: &Tensor<T>,
        grads: &mut SenGrads<T>,
    ) -> Result<()> {
        let grad_s = self.head.backward(&ctx.head, grad_logits, &mut grads.head)?;
        let (d_ga, d_gb) = similarity_backward(&ctx.sim, &ctx.ta.g, &ctx.tb.g, &grad_s)?;
        self.trunk.backward(&ctx.ta, &d_ga, &mut grads.trunk)?;
        self.trunk.backward(&ctx.tb, &d_gb, &mut grads.trunk)?;
        Ok(())
    }

    /// Cross-entropy loss against `label`, with parameter gradients and the
    /// class probabilities.
    pub fn loss_and_grads(
        &self,
        xa: &Tensor<T>,
        xb: &Tensor<T>,
        label: usize,
    ) -> Result<(f64, SenGrads<T>, [f64; 2])> {
        let (logits, ctx) = self.forward(xa, xb)?;
        let (loss, probs) = softmax_cross_entropy(&logits, label)?;
        let grad_logits = softmax_cross_entropy_backward(&probs, label);
        let mut grads = self.zero_grads();
        self.backward(&ctx, &grad_logits, &mut grads)?;
        Ok((loss.as_f64(), grads, [probs.data()[0].as_f64(), probs.data()[1].as_f64()]))
    }

    /// Probability that the pair is consecutive and in the right order.
    pub fn prob(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<f64> {
        let (logits, _) = self.forward(xa, xb)?;
        let (_, probs) = softmax_cross_entropy(&logits, 0)?;
        Ok(probs.data()[1].as_f64())
    }

    /// Penultimate-dense-layer activations for a pair.
    pub fn embedding(&self, xa: &Tensor<T>, xb: &Tensor<T>) -> Result<Vec<T>> {
        let (_, ctx) = self.forward(xa, xb)?;
        Ok(ctx.head.f2.data().to_vec())
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        vec![
            "trunk.conv1.w",
            "trunk.conv1.b",
            "trunk.conv2.w",
            "trunk.conv2.b",
            "trunk.conv3.w",
            "trunk.conv3.b",
            "head.conv1.w",
            "head.conv1.b",
            "head.conv2.w",
            "head.conv2.b",
            "head.conv3.w",
            "head.conv3.b",
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
        let h = &self.head;
        vec![
            &t[0].p.w, &t[0].p.b, &t[1].p.w, &t[1].p.b, &t[2].p.w, &t[2].p.b,
            &h.convs[0].p.w, &h.convs[0].p.b, &h.convs[1].p.w, &h.convs[1].p.b,
            &h.convs[2].p.w, &h.convs[2].p.b,
            &h.fc1.p.w, &h.fc1.p.b, &h.fc2.p.w, &h.fc2.p.b, &h.out.p.w, &h.out.p.b,
        ]
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let [t1, t2, t3] = &mut self.trunk.convs;
        let [h1, h2, h3] = &mut self.head.convs;
        vec![
            &mut t1.p.w, &mut t1.p.b, &mut t2.p.w, &mut t2.p.b, &mut t3.p.w, &mut t3.p.b,
            &mut h1.p.w, &mut h1.p.b, &mut h2.p.w, &mut h2.p.b, &mut h3.p.w, &mut h3.p.b,
            &mut self.head.fc1.p.w, &mut self.head.fc1.p.b,
            &mut self.head.fc2.p.w, &mut self.head.fc2.p.b,
            &mut self.head.out.p.w, &mut self.head.out.p.b,
        ]
    }
}

impl<T: Scalar> SenGrads<T> {
    /// Same order as `SenModel::param_tensors`.
    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        let [t1, t2, t3] = self.trunk.convs;
        let [h1, h2, h3] = self.head.convs;
        vec![
            t1.w, t1.b, t2.w, t2.b, t3.w, t3.b,
            h1.w, h1.b, h2.w, h2.b, h3.w, h3.b,
            self.head.fc1.w, self.head.fc1.b,
            self.head.fc2.w, self.head.fc2.b,
            self.head.out.w, self.head.out.b,
        ]
    }
}
