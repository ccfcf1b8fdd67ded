//! Pairwise frame-similarity matrix between two feature maps.
//!
//! S[i][j] compares row i of the first map with row j of the second, either
//! by cosine (the full model) or by raw inner product (ablation). A row whose
//! norm falls below 1e-8 contributes zeros in cosine mode instead of
//! dividing by almost-nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKernel {
    #[default]
    Cosine,
    InnerProduct,
}

#[derive(Debug, Clone)]
pub struct SimCtx<T> {
    pub kernel: SimilarityKernel,
    pub norms_a: Vec<T>,
    pub norms_b: Vec<T>,
    pub floored_a: Vec<bool>,
    pub floored_b: Vec<bool>,
    /// Unit-normalized rows (cosine mode); empty in inner-product mode.
    hat_a: Vec<T>,
    hat_b: Vec<T>,
    pub s: Tensor<T>,
}

fn check_inputs<T: Scalar>(ga: &Tensor<T>, gb: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if ga.shape().len() != 2 || gb.shape().len() != 2 || ga.dim(1) != gb.dim(1) {
        return Err(Error::Shape(format!(
            "similarity wants [n, k] x [m, k], got {:?} x {:?}",
            ga.shape(),
            gb.shape()
        )));
    }
    Ok((ga.dim(0), gb.dim(0), ga.dim(1)))
}

pub fn similarity<T: Scalar>(
    ga: &Tensor<T>,
    gb: &Tensor<T>,
    kernel: SimilarityKernel,
) -> Result<(Tensor<T>, SimCtx<T>)> {
    let (n, m, k) = check_inputs(ga, gb)?;
    let floor = T::from_f64(NORM_FLOOR);

    let normalize = |g: &Tensor<T>, rows: usize| -> (Vec<T>, Vec<bool>, Vec<T>) {
        let mut norms = Vec::with_capacity(rows);
        let mut floored = Vec::with_capacity(rows);
        let mut hat = vec![T::zero(); rows * k];
        for r in 0..rows {
            let row = &g.data()[r * k..(r + 1) * k];
            let norm = row.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt();
            let is_floored = norm < floor;
            if !is_floored {
                for (h, v) in hat[r * k..(r + 1) * k].iter_mut().zip(row) {
                    *h = *v / norm;
                }
            }
            norms.push(norm);
            floored.push(is_floored);
        }
        (norms, floored, hat)
    };

    let (s, ctx) = match kernel {
        SimilarityKernel::Cosine => {
            let (norms_a, floored_a, hat_a) = normalize(ga, n);
            let (norms_b, floored_b, hat_b) = normalize(gb, m);
            let mut s = Tensor::zeros(&[n, m]);
            T::gemm(
                n,
                k,
                m,
                T::one(),
                &hat_a,
                k as isize,
                1,
                &hat_b,
                1,
                k as isize,
                T::zero(),
                s.data_mut(),
                m as isize,
                1,
            );
            let ctx = SimCtx {
                kernel,
                norms_a,
                norms_b,
                floored_a,
                floored_b,
                hat_a,
                hat_b,
                s: s.clone(),
            };
            (s, ctx)
        }
        SimilarityKernel::InnerProduct => {
            let mut s = Tensor::zeros(&[n, m]);
            T::gemm(
                n,
                k,
                m,
                T::one(),
                ga.data(),
                k as isize,
                1,
                gb.data(),
                1,
                k as isize,
                T::zero(),
                s.data_mut(),
                m as isize,
                1,
            );
            let ctx = SimCtx {
                kernel,
                norms_a: Vec::new(),
                norms_b: Vec::new(),
                floored_a: vec![false; n],
                floored_b: vec![false; m],
                hat_a: Vec::new(),
                hat_b: Vec::new(),
                s: s.clone(),
            };
            (s, ctx)
        }
    };
    s.ensure_finite("similarity")?;
    Ok((s, ctx))
}

/// Gradients with respect to both feature maps.
///
/// Cosine rows: d S_ij / d a_i = (b_hat_j - S_ij a_hat_i) / |a_i|, and the
/// floored rows stay at gradient zero (their output is constant).
pub fn similarity_backward<T: Scalar>(
    ctx: &SimCtx<T>,
    ga: &Tensor<T>,
    gb: &Tensor<T>,
    grad_s: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, m, k) = check_inputs(ga, gb)?;
    if grad_s.shape() != [n, m] {
        return Err(Error::Shape(format!(
            "similarity grad wants [{n}, {m}], got {:?}",
            grad_s.shape()
        )));
    }
    let mut grad_a = Tensor::zeros(&[n, k]);
    let mut grad_b = Tensor::zeros(&[m, k]);
    match ctx.kernel {
        SimilarityKernel::InnerProduct => {
            // gA = gS . B, gB = gS^T . A
            T::gemm(
                n,
                m,
                k,
                T::one(),
                grad_s.data(),
                m as isize,
                1,
                gb.data(),
                k as isize,
                1,
                T::zero(),
                grad_a.data_mut(),
                k as isize,
                1,
            );
            T::gemm(
                m,
                n,
                k,
                T::one(),
                grad_s.data(),
                1,
                m as isize,
                ga.data(),
                k as isize,
                1,
                T::zero(),
                grad_b.data_mut(),
                k as isize,
                1,
            );
        }
        SimilarityKernel::Cosine => {
            // First the hat-space products, then per-row correction.
            T::gemm(
                n,
                m,
                k,
                T::one(),
                grad_s.data(),
                m as isize,
                1,
                &ctx.hat_b,
                k as isize,
                1,
                T::zero(),
                grad_a.data_mut(),
                k as isize,
                1,
            );
            T::gemm(
                m,
                n,
                k,
                T::one(),
                grad_s.data(),
                1,
                m as isize,
                &ctx.hat_a,
                k as isize,
                1,
                T::zero(),
                grad_b.data_mut(),
                k as isize,
                1,
            );
            let s = ctx.s.data();
            let gs = grad_s.data();
            for i in 0..n {
                if ctx.floored_a[i] {
                    grad_a.data_mut()[i * k..(i + 1) * k].fill(T::zero());
                    continue;
                }
                let mut dot = T::zero();
                for j in 0..m {
                    dot = dot + gs[i * m + j] * s[i * m + j];
                }
                let row = &mut grad_a.data_mut()[i * k..(i + 1) * k];
                for (g, h) in row.iter_mut().zip(&ctx.hat_a[i * k..(i + 1) * k]) {
                    *g = (*g - dot * *h) / ctx.norms_a[i];
                }
            }
            for j in 0..m {
                if ctx.floored_b[j] {
                    grad_b.data_mut()[j * k..(j + 1) * k].fill(T::zero());
                    continue;
                }
                let mut dot = T::zero();
                for i in 0..n {
                    dot = dot + gs[i * m + j] * s[i * m + j];
                }
                let row = &mut grad_b.data_mut()[j * k..(j + 1) * k];
                for (g, h) in row.iter_mut().zip(&ctx.hat_b[j * k..(j + 1) * k]) {
                    *g = (*g - dot * *h) / ctx.norms_b[j];
                }
            }
        }
    }
    Ok((grad_a, grad_b))
}
