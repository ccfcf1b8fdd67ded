//! End-to-end gradient verification: every layer and both full pair losses
//! are checked against double-precision central differences, with
//! non-smooth decision changes (ReLU masks, pool argmaxes, norm floors)
//! detected and excluded probe-by-probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::sen::SenModel;
use crate::models::sim::{similarity, similarity_backward, SimilarityKernel};
use crate::models::sn::SnModel;
use crate::models::trunk::TRUNK_IN;
use crate::tensor::gradcheck::{check_gradient, GradCheckConfig, GradCheckReport, KinkHasher};
use crate::tensor::ops::{
    global_pool, global_pool_backward, maxpool2d, maxpool2d_backward, relu, relu_backward,
    softmax_cross_entropy, softmax_cross_entropy_backward, Conv1d, Conv2d, Dense, GlobalPoolMode,
};
use crate::tensor::{ParamPair, Tensor};

/// Acceptance tolerance on the max relative error of any probe.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub reports: Vec<GradCheckReport>,
    pub tol: f64,
}

impl VerifyOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.passes(self.tol))
    }
}

fn pack(tensors: &[Tensor<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(tensors.iter().map(|t| t.len()).sum());
    for t in tensors {
        out.extend_from_slice(t.data());
    }
    out
}

fn unpack(flat: &[f64], tensors: &mut [Tensor<f64>]) {
    let mut at = 0;
    for t in tensors.iter_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
    debug_assert_eq!(at, flat.len());
}

/// Checks one differentiable map. `f` returns (loss, kink signature,
/// gradients aligned with `tensors`); the numeric side perturbs the packed
/// coordinates of `tensors`.
fn run_check(
    name: &str,
    cfg: &GradCheckConfig,
    tensors: Vec<Tensor<f64>>,
    mut f: impl FnMut(&[Tensor<f64>]) -> Result<(f64, u64, Vec<Tensor<f64>>)>,
) -> Result<GradCheckReport> {
    let x0 = pack(&tensors);
    let (_, _, grads) = f(&tensors)?;
    let analytic = pack(&grads);
    let mut work = tensors;
    let report = check_gradient(name, cfg, &x0, &analytic, |x| {
        unpack(x, &mut work);
        let (loss, sig, _) = f(&work).expect("gradcheck eval failed");
        (loss, sig)
    });
    Ok(report)
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("shape/data agree")
}

/// Fixed projection turning a tensor output into a scalar loss.
fn proj_for(len: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    rand_tensor(&[len], rng)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn conv1d_check(name: &str, stride: usize, cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_in, c_out, k, t) = (4, 5, 4, 14);
    let conv = Conv1d::<f64>::new(c_in, c_out, k, stride, &mut rng);
    let x = rand_tensor(&[t, c_in], &mut rng);
    let t_out = conv.out_len(t)?;
    let proj = proj_for(t_out * c_out, &mut rng);
    let tensors = vec![conv.p.w.clone(), conv.p.b.clone(), x];
    run_check(name, cfg, tensors, move |ts| {
        let mut c = conv.clone();
        c.p.w = ts[0].clone();
        c.p.b = ts[1].clone();
        let out = c.forward(&ts[2])?;
        let loss = dot(&out, &proj);
        let mut grads = ParamPair::zeros_like(&c.p);
        let gx = c.backward(&ts[2], &proj.clone().reshaped(out.shape())?, &mut grads)?;
        Ok((loss, 0, vec![grads.w, grads.b, gx]))
    })
}

fn conv2d_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_in, c_out, h, w) = (2, 3, 6, 5);
    let conv = Conv2d::<f64>::new(c_in, c_out, &mut rng);
    let x = rand_tensor(&[h, w, c_in], &mut rng);
    let proj = proj_for((h - 2) * (w - 2) * c_out, &mut rng);
    let tensors = vec![conv.p.w.clone(), conv.p.b.clone(), x];
    run_check("conv2d", cfg, tensors, move |ts| {
        let mut c = conv.clone();
        c.p.w = ts[0].clone();
        c.p.b = ts[1].clone();
        let out = c.forward(&ts[2])?;
        let loss = dot(&out, &proj);
        let mut grads = ParamPair::zeros_like(&c.p);
        let gx = c.backward(&ts[2], &proj.clone().reshaped(out.shape())?, &mut grads)?;
        Ok((loss, 0, vec![grads.w, grads.b, gx]))
    })
}

fn dense_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_in, d_out) = (12, 9);
    let layer = Dense::<f64>::new(d_in, d_out, &mut rng);
    let x = rand_tensor(&[d_in], &mut rng);
    let proj = proj_for(d_out, &mut rng);
    let tensors = vec![layer.p.w.clone(), layer.p.b.clone(), x];
    run_check("dense", cfg, tensors, move |ts| {
        let mut l = layer.clone();
        l.p.w = ts[0].clone();
        l.p.b = ts[1].clone();
        let out = l.forward(&ts[2])?;
        let loss = dot(&out, &proj);
        let mut grads = ParamPair::zeros_like(&l.p);
        let gx = l.backward(&ts[2], &proj, &mut grads)?;
        Ok((loss, 0, vec![grads.w, grads.b, gx]))
    })
}

fn relu_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&[160], &mut rng);
    let proj = proj_for(160, &mut rng);
    run_check("relu", cfg, vec![x], move |ts| {
        let out = relu(&ts[0]);
        let loss = dot(&out, &proj);
        let gx = relu_backward(&out, &proj);
        let mut h = KinkHasher::new();
        h.write_mask(ts[0].data());
        Ok((loss, h.finish(), vec![gx]))
    })
}

fn maxpool_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&[7, 8, 3], &mut rng);
    let (out0, _) = maxpool2d(&x)?;
    let proj = proj_for(out0.len(), &mut rng);
    run_check("maxpool2d", cfg, vec![x], move |ts| {
        let (out, ctx) = maxpool2d(&ts[0])?;
        let loss = dot(&out, &proj);
        let gx = maxpool2d_backward(&ctx, &proj.clone().reshaped(out.shape())?)?;
        let mut h = KinkHasher::new();
        h.write_indices(&ctx.argmax);
        Ok((loss, h.finish(), vec![gx]))
    })
}

fn global_pool_check(
    name: &str,
    mode: GlobalPoolMode,
    cfg: &GradCheckConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&[18, 8], &mut rng);
    let proj = proj_for(mode.out_dim(8), &mut rng);
    run_check(name, cfg, vec![x], move |ts| {
        let (out, ctx) = global_pool(&ts[0], mode)?;
        let loss = dot(&out, &proj);
        let gx = global_pool_backward(&ctx, &ts[0], &proj)?;
        let mut h = KinkHasher::new();
        h.write_indices(&ctx.argmax);
        for s in &ctx.std {
            h.write_bool(*s > 0.0);
        }
        Ok((loss, h.finish(), vec![gx]))
    })
}

fn softmax_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = rand_tensor(&[128], &mut rng);
    run_check("softmax_cross_entropy", cfg, vec![logits], move |ts| {
        let (loss, probs) = softmax_cross_entropy(&ts[0], 3)?;
        let g = softmax_cross_entropy_backward(&probs, 3);
        Ok((loss, 0, vec![g]))
    })
}

fn similarity_check(
    name: &str,
    kernel: SimilarityKernel,
    cfg: &GradCheckConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ga = rand_tensor(&[9, 10], &mut rng);
    let gb = rand_tensor(&[8, 10], &mut rng);
    let proj = proj_for(9 * 8, &mut rng);
    run_check(name, cfg, vec![ga, gb], move |ts| {
        let (s, ctx) = similarity(&ts[0], &ts[1], kernel)?;
        let loss = dot(&s, &proj);
        let (gia, gib) =
            similarity_backward(&ctx, &ts[0], &ts[1], &proj.clone().reshaped(s.shape())?)?;
        let mut h = KinkHasher::new();
        for f in ctx.floored_a.iter().chain(&ctx.floored_b) {
            h.write_bool(*f);
        }
        Ok((loss, h.finish(), vec![gia, gib]))
    })
}

pub fn check_layers(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        conv1d_check("conv1d_stride1", 1, cfg, 101)?,
        conv1d_check("conv1d_stride2", 2, cfg, 102)?,
        conv2d_check(cfg, 103)?,
        dense_check(cfg, 104)?,
        relu_check(cfg, 105)?,
        maxpool_check(cfg, 106)?,
        global_pool_check("global_pool_concat", GlobalPoolMode::Concat, cfg, 107)?,
        global_pool_check("global_pool_mean", GlobalPoolMode::Mean, cfg, 108)?,
        global_pool_check("global_pool_max", GlobalPoolMode::Max, cfg, 109)?,
        softmax_check(cfg, 110)?,
        similarity_check("similarity_cosine", SimilarityKernel::Cosine, cfg, 111)?,
        similarity_check("similarity_inner_product", SimilarityKernel::InnerProduct, cfg, 112)?,
    ])
}

fn fragment_f64(t: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    rand_tensor(&[t, TRUNK_IN], rng)
}

fn sen_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SenModel::<f64>::new(
        1,
        SimilarityKernel::Cosine,
        crate::tensor::ops::GlobalPoolMode::Concat,
        &mut rng,
    )?;
    let xa = fragment_f64(39, &mut rng);
    let xb = fragment_f64(39, &mut rng);
    let tensors: Vec<Tensor<f64>> = model.param_tensors().into_iter().cloned().collect();
    let mut m = model;
    run_check("sen_pair_loss", cfg, tensors, move |ts| {
        for (slot, t) in m.param_tensors_mut().into_iter().zip(ts) {
            slot.data_mut().copy_from_slice(t.data());
        }
        let (logits, ctx) = m.forward(&xa, &xb)?;
        let (loss, probs) = softmax_cross_entropy(&logits, 1)?;
        let grad_logits = softmax_cross_entropy_backward(&probs, 1);
        let mut grads = m.zero_grads();
        m.backward(&ctx, &grad_logits, &mut grads)?;
        Ok((loss, ctx.kink_signature(), grads.into_tensors()))
    })
}

fn sn_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SnModel::<f64>::new(1, &mut rng)?;
    let xa = fragment_f64(39, &mut rng);
    let xb = fragment_f64(39, &mut rng);
    let tensors: Vec<Tensor<f64>> = model.param_tensors().into_iter().cloned().collect();
    let mut m = model;
    run_check("sn_pair_loss", cfg, tensors, move |ts| {
        for (slot, t) in m.param_tensors_mut().into_iter().zip(ts) {
            slot.data_mut().copy_from_slice(t.data());
        }
        let (logits, ctx) = m.forward(&xa, &xb)?;
        let (loss, probs) = softmax_cross_entropy(&logits, 0)?;
        let grad_logits = softmax_cross_entropy_backward(&probs, 0);
        let mut grads = m.zero_grads();
        m.backward(&ctx, &grad_logits, &mut grads)?;
        Ok((loss, ctx.kink_signature(), grads.into_tensors()))
    })
}

pub fn check_models(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    Ok(vec![sen_check(cfg, 201)?, sn_check(cfg, 202)?])
}

/// Full verification pass at the default configuration.
pub fn check_all() -> Result<VerifyOutcome> {
    let cfg = GradCheckConfig::default();
    let mut reports = check_layers(&cfg)?;
    reports.extend(check_models(&cfg)?);
    Ok(VerifyOutcome {
        reports,
        tol: GRAD_TOL,
    })
}
