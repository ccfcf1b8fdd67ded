//! Shared frame encoder: three 1-d convolutions over the mel axis.
//!
//! Both fragments of a pair go through the same weights, so the backward
//! pass accumulates parameter gradients across calls into one grad buffer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::ops::{relu, relu_backward, Conv1d};
use crate::tensor::{ParamPair, Scalar, Tensor};

pub const TRUNK_IN: usize = 128;
pub const TRUNK_OUT: usize = 512;
pub const TRUNK_KSIZE: usize = 4;
const CHANNELS: [usize; 3] = [128, 256, 512];

#[derive(Debug, Clone)]
pub struct SiameseTrunk<T> {
    pub convs: [Conv1d<T>; 3],
}

/// Forward activations kept for the backward pass (ReLU masks come from the
/// stored outputs, conv gradients re-derive their column buffers from the
/// stored inputs).
#[derive(Debug, Clone)]
pub struct TrunkCtx<T> {
    pub x: Tensor<T>,
    pub a1: Tensor<T>,
    pub a2: Tensor<T>,
    pub g: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct TrunkGrads<T> {
    pub convs: [ParamPair<T>; 3],
}

impl<T: Scalar> TrunkGrads<T> {
    pub fn zeros_like(trunk: &SiameseTrunk<T>) -> Self {
        TrunkGrads {
            convs: [
                ParamPair::zeros_like(&trunk.convs[0].p),
                ParamPair::zeros_like(&trunk.convs[1].p),
                ParamPair::zeros_like(&trunk.convs[2].p),
            ],
        }
    }
}

impl<T: Scalar> SiameseTrunk<T> {
    pub fn new<R: Rng>(stride: usize, rng: &mut R) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return Err(Error::Config(format!("trunk stride must be 1 or 2, got {stride}")));
        }
        let mut c_in = TRUNK_IN;
        let convs = CHANNELS.map(|c_out| {
            let conv = Conv1d::new(c_in, c_out, TRUNK_KSIZE, stride, rng);
            c_in = c_out;
            conv
        });
        Ok(SiameseTrunk { convs })
    }

    pub fn stride(&self) -> usize {
        self.convs[0].stride
    }

    /// Frame count of the encoded map for a t-frame fragment.
    pub fn out_len(&self, t: usize) -> Result<usize> {
        let mut len = t;
        for conv in &self.convs {
            len = conv.out_len(len)?;
        }
        Ok(len)
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<(Tensor<T>, TrunkCtx<T>)> {
        if x.shape().len() != 2 || x.dim(1) != TRUNK_IN {
            return Err(Error::Shape(format!(
                "trunk wants [frames, {TRUNK_IN}], got {:?}",
                x.shape()
            )));
        }
        let a1 = relu(&self.convs[0].forward(x)?);
        let a2 = relu(&self.convs[1].forward(&a1)?);
        let g = relu(&self.convs[2].forward(&a2)?);
        let ctx = TrunkCtx {
            x: x.clone(),
            a1,
            a2,
            g: g.clone(),
        };
        Ok((g, ctx))
    }

    /// Adds this call's parameter gradients into `grads` and returns the
    /// gradient with respect to the input frames.
    pub fn backward(
        &self,
        ctx: &TrunkCtx<T>,
        grad_g: &Tensor<T>,
        grads: &mut TrunkGrads<T>,
    ) -> Result<Tensor<T>> {
        let d3 = relu_backward(&ctx.g, grad_g);
        let d2 = relu_backward(&ctx.a2, &self.convs[2].backward(&ctx.a2, &d3, &mut grads.convs[2])?);
        let d1 = relu_backward(&ctx.a1, &self.convs[1].backward(&ctx.a1, &d2, &mut grads.convs[1])?);
        self.convs[0].backward(&ctx.x, &d1, &mut grads.convs[0])
    }
}
