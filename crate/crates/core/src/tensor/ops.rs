//! Layers with explicit forward/backward passes.
//!
//! Convolutions lower to im2col plus one GEMM; backward recomputes the column
//! buffer instead of caching it. All `backward` methods accumulate parameter
//! gradients (`+=`) so weight-shared branches can reuse one gradient buffer.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamPair, Scalar, Tensor};

/// Gaussian init with std sqrt(2 / fan_in); biases start at zero.
pub fn he_normal<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// 1-d valid convolution over a [frames, channels] input.
/// Weight layout is [c_out, c_in, ksize].
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub p: ParamPair<T>,
    pub stride: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, ksize: usize, stride: usize, rng: &mut R) -> Self {
        assert!(stride >= 1, "stride must be positive");
        let w = he_normal(&[c_out, c_in, ksize], c_in * ksize, rng);
        let b = Tensor::zeros(&[c_out]);
        Conv1d {
            p: ParamPair { w, b },
            stride,
        }
    }

    pub fn c_in(&self) -> usize {
        self.p.w.dim(1)
    }

    pub fn c_out(&self) -> usize {
        self.p.w.dim(0)
    }

    pub fn ksize(&self) -> usize {
        self.p.w.dim(2)
    }

    pub fn out_len(&self, t: usize) -> Result<usize> {
        if t < self.ksize() {
            return Err(Error::Shape(format!(
                "conv1d input length {} shorter than kernel {}",
                t,
                self.ksize()
            )));
        }
        Ok((t - self.ksize()) / self.stride + 1)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        if x.shape().len() != 2 || x.dim(1) != self.c_in() {
            return Err(Error::Shape(format!(
                "conv1d wants [t, {}], got {:?}",
                self.c_in(),
                x.shape()
            )));
        }
        Ok((x.dim(0), self.out_len(x.dim(0))?))
    }

    /// Column r of the buffer gathers the window starting at r * stride,
    /// ordered (channel, tap) to match the weight layout.
    fn im2col(&self, x: &Tensor<T>, t_out: usize) -> Vec<T> {
        let (c_in, k, stride) = (self.c_in(), self.ksize(), self.stride);
        let xs = x.data();
        let mut col = vec![T::zero(); t_out * c_in * k];
        for r in 0..t_out {
            let base = r * stride;
            let row = &mut col[r * c_in * k..(r + 1) * c_in * k];
            for ch in 0..c_in {
                for tap in 0..k {
                    row[ch * k + tap] = xs[(base + tap) * c_in + ch];
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, t_out) = self.check_input(x)?;
        let (c_out, kk) = (self.c_out(), self.c_in() * self.ksize());
        let col = self.im2col(x, t_out);
        let mut out = Tensor::zeros(&[t_out, c_out]);
        T::gemm(
            t_out,
            kk,
            c_out,
            T::one(),
            &col,
            kk as isize,
            1,
            self.p.w.data(),
            1,
            kk as isize,
            T::zero(),
            out.data_mut(),
            c_out as isize,
            1,
        );
        let b = self.p.b.data();
        for row in out.data_mut().chunks_exact_mut(c_out) {
            for (v, bo) in row.iter_mut().zip(b) {
                *v = *v + *bo;
            }
        }
        out.ensure_finite("conv1d")?;
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut ParamPair<T>,
    ) -> Result<Tensor<T>> {
        let (t, t_out) = self.check_input(x)?;
        if grad_out.shape() != [t_out, self.c_out()] {
            return Err(Error::Shape(format!(
                "conv1d grad wants [{}, {}], got {:?}",
                t_out,
                self.c_out(),
                grad_out.shape()
            )));
        }
        let (c_in, c_out, k, stride) = (self.c_in(), self.c_out(), self.ksize(), self.stride);
        let kk = c_in * k;
        let col = self.im2col(x, t_out);

        for row in grad_out.data().chunks_exact(c_out) {
            for (gb, g) in grads.b.data_mut().iter_mut().zip(row) {
                *gb = *gb + *g;
            }
        }
        T::gemm(
            c_out,
            t_out,
            kk,
            T::one(),
            grad_out.data(),
            1,
            c_out as isize,
            &col,
            kk as isize,
            1,
            T::one(),
            grads.w.data_mut(),
            kk as isize,
            1,
        );

        let mut grad_col = vec![T::zero(); t_out * kk];
        T::gemm(
            t_out,
            c_out,
            kk,
            T::one(),
            grad_out.data(),
            c_out as isize,
            1,
            self.p.w.data(),
            kk as isize,
            1,
            T::zero(),
            &mut grad_col,
            kk as isize,
            1,
        );
        let mut grad_x = Tensor::zeros(&[t, c_in]);
        let gx = grad_x.data_mut();
        for r in 0..t_out {
            let base = r * stride;
            let row = &grad_col[r * kk..(r + 1) * kk];
            for ch in 0..c_in {
                for tap in 0..k {
                    gx[(base + tap) * c_in + ch] = gx[(base + tap) * c_in + ch] + row[ch * k + tap];
                }
            }
        }
        Ok(grad_x)
    }
}

/// 3x3 valid convolution over a [h, w, c_in] input.
/// Weight layout is [c_out, c_in, 3, 3].
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub p: ParamPair<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let w = he_normal(&[c_out, c_in, 3, 3], c_in * 9, rng);
        let b = Tensor::zeros(&[c_out]);
        Conv2d {
            p: ParamPair { w, b },
        }
    }

    pub fn c_in(&self) -> usize {
        self.p.w.dim(1)
    }

    pub fn c_out(&self) -> usize {
        self.p.w.dim(0)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        if x.shape().len() != 3 || x.dim(2) != self.c_in() {
            return Err(Error::Shape(format!(
                "conv2d wants [h, w, {}], got {:?}",
                self.c_in(),
                x.shape()
            )));
        }
        let (h, w) = (x.dim(0), x.dim(1));
        if h < 3 || w < 3 {
            return Err(Error::Shape(format!(
                "conv2d needs at least 3x3 input, got {}x{}",
                h, w
            )));
        }
        Ok((h, w))
    }

    fn im2col(&self, x: &Tensor<T>, h: usize, w: usize) -> Vec<T> {
        let c_in = self.c_in();
        let (ho, wo) = (h - 2, w - 2);
        let xs = x.data();
        let mut col = vec![T::zero(); ho * wo * c_in * 9];
        let kk = c_in * 9;
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut col[(oy * wo + ox) * kk..(oy * wo + ox + 1) * kk];
                for ch in 0..c_in {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            row[ch * 9 + ky * 3 + kx] = xs[((oy + ky) * w + ox + kx) * c_in + ch];
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = self.check_input(x)?;
        let (ho, wo) = (h - 2, w - 2);
        let (c_out, kk) = (self.c_out(), self.c_in() * 9);
        let col = self.im2col(x, h, w);
        let mut out = Tensor::zeros(&[ho, wo, c_out]);
        T::gemm(
            ho * wo,
            kk,
            c_out,
            T::one(),
            &col,
            kk as isize,
            1,
            self.p.w.data(),
            1,
            kk as isize,
            T::zero(),
            out.data_mut(),
            c_out as isize,
            1,
        );
        let b = self.p.b.data();
        for row in out.data_mut().chunks_exact_mut(c_out) {
            for (v, bo) in row.iter_mut().zip(b) {
                *v = *v + *bo;
            }
        }
        out.ensure_finite("conv2d")?;
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut ParamPair<T>,
    ) -> Result<Tensor<T>> {
        let (h, w) = self.check_input(x)?;
        let (ho, wo) = (h - 2, w - 2);
        let (c_in, c_out) = (self.c_in(), self.c_out());
        let kk = c_in * 9;
        if grad_out.shape() != [ho, wo, c_out] {
            return Err(Error::Shape(format!(
                "conv2d grad wants [{}, {}, {}], got {:?}",
                ho,
                wo,
                c_out,
                grad_out.shape()
            )));
        }
        let col = self.im2col(x, h, w);

        for row in grad_out.data().chunks_exact(c_out) {
            for (gb, g) in grads.b.data_mut().iter_mut().zip(row) {
                *gb = *gb + *g;
            }
        }
        T::gemm(
            c_out,
            ho * wo,
            kk,
            T::one(),
            grad_out.data(),
            1,
            c_out as isize,
            &col,
            kk as isize,
            1,
            T::one(),
            grads.w.data_mut(),
            kk as isize,
            1,
        );

        let mut grad_col = vec![T::zero(); ho * wo * kk];
        T::gemm(
            ho * wo,
            c_out,
            kk,
            T::one(),
            grad_out.data(),
            c_out as isize,
            1,
            self.p.w.data(),
            kk as isize,
            1,
            T::zero(),
            &mut grad_col,
            kk as isize,
            1,
        );
        let mut grad_x = Tensor::zeros(&[h, w, c_in]);
        let gx = grad_x.data_mut();
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &grad_col[(oy * wo + ox) * kk..(oy * wo + ox + 1) * kk];
                for ch in 0..c_in {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let xi = ((oy + ky) * w + ox + kx) * c_in + ch;
                            gx[xi] = gx[xi] + row[ch * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
        Ok(grad_x)
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| v.max(T::zero())).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Mask comes from the forward output: gradient passes where out > 0.
pub fn relu_backward<T: Scalar>(out: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(out.shape(), grad_out.shape(), "relu shapes");
    let data = out
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(o, g)| if *o > T::zero() { *g } else { T::zero() })
        .collect();
    Tensor::from_vec(out.shape(), data).expect("same shape")
}

/// Argmax bookkeeping for the pooling backward pass.
#[derive(Debug, Clone)]
pub struct PoolCtx {
    pub in_shape: [usize; 3],
    pub out_shape: [usize; 3],
    pub argmax: Vec<u32>,
}

/// 3x3 max pool with stride 3 over [h, w, c]. A trailing window narrower than
/// 3 still emits an output (output extents round up), so small similarity
/// matrices survive the full head. Ties pick the lowest linear index.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCtx)> {
    if x.shape().len() != 3 {
        return Err(Error::Shape(format!("maxpool2d wants [h, w, c], got {:?}", x.shape())));
    }
    let (h, w, c) = (x.dim(0), x.dim(1), x.dim(2));
    if h == 0 || w == 0 {
        return Err(Error::Shape("maxpool2d on empty input".into()));
    }
    let (ho, wo) = (h.div_ceil(3), w.div_ceil(3));
    let xs = x.data();
    let mut out = Tensor::zeros(&[ho, wo, c]);
    let mut argmax = vec![0u32; ho * wo * c];
    let od = out.data_mut();
    for oy in 0..ho {
        for ox in 0..wo {
            let (y0, x0) = (oy * 3, ox * 3);
            let (y1, x1) = ((y0 + 3).min(h), (x0 + 3).min(w));
            for ch in 0..c {
                let mut best = xs[(y0 * w + x0) * c + ch];
                let mut best_idx = (y0 * w + x0) * c + ch;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        let idx = (y * w + xx) * c + ch;
                        if xs[idx] > best {
                            best = xs[idx];
                            best_idx = idx;
                        }
                    }
                }
                od[(oy * wo + ox) * c + ch] = best;
                argmax[(oy * wo + ox) * c + ch] = best_idx as u32;
            }
        }
    }
    let ctx = PoolCtx {
        in_shape: [h, w, c],
        out_shape: [ho, wo, c],
        argmax,
    };
    Ok((out, ctx))
}

pub fn maxpool2d_backward<T: Scalar>(ctx: &PoolCtx, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != ctx.out_shape {
        return Err(Error::Shape(format!(
            "maxpool2d grad wants {:?}, got {:?}",
            ctx.out_shape,
            grad_out.shape()
        )));
    }
    let mut grad_x = Tensor::zeros(&ctx.in_shape);
    let gx = grad_x.data_mut();
    for (g, idx) in grad_out.data().iter().zip(&ctx.argmax) {
        let i = *idx as usize;
        gx[i] = gx[i] + *g;
    }
    Ok(grad_x)
}

/// What the per-channel global pooling emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GlobalPoolMode {
    /// [mean | max | std] concatenated, 3c outputs.
    #[default]
    Concat,
    Mean,
    Max,
}

impl GlobalPoolMode {
    pub fn out_dim(&self, channels: usize) -> usize {
        match self {
            GlobalPoolMode::Concat => 3 * channels,
            GlobalPoolMode::Mean | GlobalPoolMode::Max => channels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalPoolCtx<T> {
    pub mode: GlobalPoolMode,
    pub positions: usize,
    pub channels: usize,
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub argmax: Vec<u32>,
}

/// Pools every position away; channels stay in the last axis. Std is the
/// population standard deviation.
pub fn global_pool<T: Scalar>(x: &Tensor<T>, mode: GlobalPoolMode) -> Result<(Tensor<T>, GlobalPoolCtx<T>)> {
    if x.shape().len() < 2 {
        return Err(Error::Shape(format!(
            "global pool wants positions x channels, got {:?}",
            x.shape()
        )));
    }
    let c = *x.shape().last().expect("rank checked");
    let n = x.len() / c;
    if n == 0 || c == 0 {
        return Err(Error::Shape("global pool on empty input".into()));
    }
    let xs = x.data();
    let nf = T::from_f64(n as f64);
    let mut mean = vec![T::zero(); c];
    let mut maxv = vec![T::neg_infinity(); c];
    let mut argmax = vec![0u32; c];
    for i in 0..n {
        for ch in 0..c {
            let v = xs[i * c + ch];
            mean[ch] = mean[ch] + v;
            if v > maxv[ch] {
                maxv[ch] = v;
                argmax[ch] = i as u32;
            }
        }
    }
    for m in mean.iter_mut() {
        *m = *m / nf;
    }
    let mut var = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let d = xs[i * c + ch] - mean[ch];
            var[ch] = var[ch] + d * d;
        }
    }
    let std: Vec<T> = var.iter().map(|v| (*v / nf).sqrt()).collect();

    let out = match mode {
        GlobalPoolMode::Concat => {
            let mut data = Vec::with_capacity(3 * c);
            data.extend_from_slice(&mean);
            data.extend_from_slice(&maxv);
            data.extend_from_slice(&std);
            Tensor::from_vec(&[3 * c], data)?
        }
        GlobalPoolMode::Mean => Tensor::from_vec(&[c], mean.clone())?,
        GlobalPoolMode::Max => Tensor::from_vec(&[c], maxv.clone())?,
    };
    out.ensure_finite("global_pool")?;
    let ctx = GlobalPoolCtx {
        mode,
        positions: n,
        channels: c,
        mean,
        std,
        argmax,
    };
    Ok((out, ctx))
}

pub fn global_pool_backward<T: Scalar>(
    ctx: &GlobalPoolCtx<T>,
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c) = (ctx.positions, ctx.channels);
    if x.len() != n * c || grad_out.len() != ctx.mode.out_dim(c) {
        return Err(Error::Shape(format!(
            "global pool backward mismatch: x {:?}, grad {:?}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let xs = x.data();
    let g = grad_out.data();
    let nf = T::from_f64(n as f64);
    let mut grad_x = Tensor::zeros(x.shape());
    let gx = grad_x.data_mut();
    let (g_mean, g_max, g_std): (&[T], &[T], &[T]) = match ctx.mode {
        GlobalPoolMode::Concat => (&g[0..c], &g[c..2 * c], &g[2 * c..3 * c]),
        GlobalPoolMode::Mean => (&g[0..c], &[], &[]),
        GlobalPoolMode::Max => (&[], &g[0..c], &[]),
    };
    if !g_mean.is_empty() {
        for i in 0..n {
            for ch in 0..c {
                gx[i * c + ch] = gx[i * c + ch] + g_mean[ch] / nf;
            }
        }
    }
    if !g_max.is_empty() {
        for ch in 0..c {
            let i = ctx.argmax[ch] as usize;
            gx[i * c + ch] = gx[i * c + ch] + g_max[ch];
        }
    }
    if !g_std.is_empty() {
        // d std / d x_i = (x_i - mean) / (n * std); a constant channel has no
        // usable direction, so its gradient is defined as zero.
        for ch in 0..c {
            if ctx.std[ch] > T::zero() {
                let scale = g_std[ch] / (nf * ctx.std[ch]);
                for i in 0..n {
                    gx[i * c + ch] = gx[i * c + ch] + scale * (xs[i * c + ch] - ctx.mean[ch]);
                }
            }
        }
    }
    Ok(grad_x)
}

/// Fully connected layer; weight layout [d_out, d_in].
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub p: ParamPair<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = he_normal(&[d_out, d_in], d_in, rng);
        let b = Tensor::zeros(&[d_out]);
        Dense {
            p: ParamPair { w, b },
        }
    }

    pub fn d_in(&self) -> usize {
        self.p.w.dim(1)
    }

    pub fn d_out(&self) -> usize {
        self.p.w.dim(0)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != [self.d_in()] {
            return Err(Error::Shape(format!(
                "dense wants [{}], got {:?}",
                self.d_in(),
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let (d_in, d_out) = (self.d_in(), self.d_out());
        let mut out = Tensor::zeros(&[d_out]);
        T::gemm(
            d_out,
            d_in,
            1,
            T::one(),
            self.p.w.data(),
            d_in as isize,
            1,
            x.data(),
            1,
            1,
            T::zero(),
            out.data_mut(),
            1,
            1,
        );
        for (v, b) in out.data_mut().iter_mut().zip(self.p.b.data()) {
            *v = *v + *b;
        }
        out.ensure_finite("dense")?;
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut ParamPair<T>,
    ) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let (d_in, d_out) = (self.d_in(), self.d_out());
        if grad_out.shape() != [d_out] {
            return Err(Error::Shape(format!(
                "dense grad wants [{}], got {:?}",
                d_out,
                grad_out.shape()
            )));
        }
        for (gb, g) in grads.b.data_mut().iter_mut().zip(grad_out.data()) {
            *gb = *gb + *g;
        }
        let gw = grads.w.data_mut();
        let xs = x.data();
        for (o, g) in grad_out.data().iter().enumerate() {
            let row = &mut gw[o * d_in..(o + 1) * d_in];
            for (rv, xv) in row.iter_mut().zip(xs) {
                *rv = *rv + *g * *xv;
            }
        }
        let mut grad_x = Tensor::zeros(&[d_in]);
        T::gemm(
            d_in,
            d_out,
            1,
            T::one(),
            self.p.w.data(),
            1,
            d_in as isize,
            grad_out.data(),
            1,
            1,
            T::zero(),
            grad_x.data_mut(),
            1,
            1,
        );
        Ok(grad_x)
    }
}

/// Numerically stable softmax cross entropy. Returns (loss, probabilities).
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    let k = logits.len();
    if logits.shape().len() != 1 || k == 0 {
        return Err(Error::Shape(format!("softmax wants a vector, got {:?}", logits.shape())));
    }
    if label >= k {
        return Err(Error::Shape(format!("label {} out of range {}", label, k)));
    }
    let ls = logits.data();
    let m = ls.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = ls.iter().map(|v| (*v - m).exp()).collect();
    let z = exps.iter().fold(T::zero(), |a, b| a + *b);
    let probs: Vec<T> = exps.iter().map(|e| *e / z).collect();
    let loss = z.ln() + m - ls[label];
    let probs = Tensor::from_vec(&[k], probs)?;
    probs.ensure_finite("softmax")?;
    Ok((loss, probs))
}

/// Gradient of the loss with respect to the logits: probs - onehot(label).
pub fn softmax_cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, label: usize) -> Tensor<T> {
    let mut g = probs.clone();
    let gd = g.data_mut();
    gd[label] = gd[label] - T::one();
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        he_normal(shape, 2, rng)
    }

    /// Direct nested-loop convolution used as the oracle for the GEMM path.
    fn conv1d_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize) -> Tensor<f64> {
        let (t, c_in) = (x.dim(0), x.dim(1));
        let (c_out, k) = (w.dim(0), w.dim(2));
        let t_out = (t - k) / stride + 1;
        let mut out = Tensor::zeros(&[t_out, c_out]);
        for r in 0..t_out {
            for o in 0..c_out {
                let mut acc = b.data()[o];
                for ch in 0..c_in {
                    for tap in 0..k {
                        acc += x.data()[(r * stride + tap) * c_in + ch]
                            * w.data()[(o * c_in + ch) * k + tap];
                    }
                }
                out.data_mut()[r * c_out + o] = acc;
            }
        }
        out
    }

    fn conv2d_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (h, ww, c_in) = (x.dim(0), x.dim(1), x.dim(2));
        let c_out = w.dim(0);
        let (ho, wo) = (h - 2, ww - 2);
        let mut out = Tensor::zeros(&[ho, wo, c_out]);
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..c_out {
                    let mut acc = b.data()[o];
                    for ch in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += x.data()[((oy + ky) * ww + ox + kx) * c_in + ch]
                                    * w.data()[((o * c_in + ch) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    out.data_mut()[(oy * wo + ox) * c_out + o] = acc;
                }
            }
        }
        out
    }

    fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn conv1d_matches_naive_loop() {
        let mut r = rng(1);
        for &(t, c_in, c_out, k, stride) in
            &[(10usize, 3usize, 5usize, 4usize, 1usize), (23, 2, 4, 4, 2), (9, 1, 2, 3, 3)]
        {
            let conv = Conv1d::<f64>::new(c_in, c_out, k, stride, &mut r);
            let x = rand_tensor(&[t, c_in], &mut r);
            let got = conv.forward(&x).unwrap();
            let want = conv1d_naive(&x, &conv.p.w, &conv.p.b, stride);
            assert_close(&got, &want, 1e-12);
        }
    }

    #[test]
    fn conv1d_output_length() {
        let mut r = rng(2);
        let conv = Conv1d::<f64>::new(1, 1, 4, 1, &mut r);
        assert_eq!(conv.out_len(10).unwrap(), 7);
        assert!(conv.out_len(3).is_err());
        let conv2 = Conv1d::<f64>::new(1, 1, 4, 2, &mut r);
        assert_eq!(conv2.out_len(10).unwrap(), 4);
    }

    #[test]
    fn conv2d_matches_naive_loop() {
        let mut r = rng(3);
        for &(h, w, c_in, c_out) in &[(5usize, 7usize, 2usize, 3usize), (3, 3, 1, 4), (8, 4, 3, 2)] {
            let conv = Conv2d::<f64>::new(c_in, c_out, &mut r);
            let x = rand_tensor(&[h, w, c_in], &mut r);
            let got = conv.forward(&x).unwrap();
            let want = conv2d_naive(&x, &conv.p.w, &conv.p.b);
            assert_close(&got, &want, 1e-12);
        }
    }

    #[test]
    fn maxpool_shapes_round_up() {
        let mut r = rng(4);
        for &(h, w, ho, wo) in &[(6usize, 6usize, 2usize, 2usize), (7, 7, 3, 3), (30, 30, 10, 10), (1, 1, 1, 1), (4, 2, 2, 1)] {
            let x = rand_tensor(&[h, w, 2], &mut r);
            let (out, ctx) = maxpool2d(&x).unwrap();
            assert_eq!(out.shape(), [ho, wo, 2]);
            assert_eq!(ctx.out_shape, [ho, wo, 2]);
        }
    }

    #[test]
    fn maxpool_values_match_window_scan() {
        let mut r = rng(5);
        let x = rand_tensor(&[7, 5, 3], &mut r);
        let (out, _) = maxpool2d(&x).unwrap();
        for oy in 0..3 {
            for ox in 0..2 {
                for ch in 0..3 {
                    let mut best = f64::NEG_INFINITY;
                    for y in oy * 3..(oy * 3 + 3).min(7) {
                        for xx in ox * 3..(ox * 3 + 3).min(5) {
                            best = best.max(x.data()[(y * 5 + xx) * 3 + ch]);
                        }
                    }
                    assert_eq!(out.data()[(oy * 2 + ox) * 3 + ch], best);
                }
            }
        }
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut r = rng(6);
        let x = rand_tensor(&[4, 4, 1], &mut r);
        let (out, ctx) = maxpool2d(&x).unwrap();
        let mut g = Tensor::zeros(out.shape());
        g.fill(1.0);
        let gx = maxpool2d_backward(&ctx, &g).unwrap();
        // Every window contributes exactly one unit of gradient.
        let total: f64 = gx.data().iter().sum();
        assert_eq!(total, out.len() as f64);
        for (i, v) in gx.data().iter().enumerate() {
            assert!(*v == 0.0 || ctx.argmax.contains(&(i as u32)));
        }
    }

    #[test]
    fn global_pool_concat_known_values() {
        // Channel with positions {1, 3}: mean 2, max 3, population std 1.
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let (out, _) = global_pool(&x, GlobalPoolMode::Concat).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 1.0]);
        let (mean_only, _) = global_pool(&x, GlobalPoolMode::Mean).unwrap();
        assert_eq!(mean_only.data(), &[2.0]);
        let (max_only, _) = global_pool(&x, GlobalPoolMode::Max).unwrap();
        assert_eq!(max_only.data(), &[3.0]);
    }

    #[test]
    fn global_pool_output_dims() {
        let mut r = rng(7);
        let x = rand_tensor(&[5, 4, 6], &mut r);
        let (out, _) = global_pool(&x, GlobalPoolMode::Concat).unwrap();
        assert_eq!(out.shape(), [18]);
        let (out, _) = global_pool(&x, GlobalPoolMode::Mean).unwrap();
        assert_eq!(out.shape(), [6]);
    }

    #[test]
    fn relu_masks_negatives() {
        let x = Tensor::from_vec(&[4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let g = Tensor::from_vec(&[4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let gx = relu_backward(&y, &g);
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn dense_matches_naive_loop() {
        let mut r = rng(8);
        let dense = Dense::<f64>::new(7, 3, &mut r);
        let x = rand_tensor(&[7], &mut r);
        let out = dense.forward(&x).unwrap();
        for o in 0..3 {
            let mut acc = dense.p.b.data()[o];
            for i in 0..7 {
                acc += dense.p.w.data()[o * 7 + i] * x.data()[i];
            }
            assert!((out.data()[o] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_known_values() {
        // Equal logits on two classes: probs one half, loss ln 2.
        let logits = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let (loss, probs) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((probs.data()[0] - 0.5).abs() < 1e-12);

        // A huge margin on the true class costs nothing and stays finite.
        let logits = Tensor::<f64>::from_vec(&[2], vec![1000.0, 0.0]).unwrap();
        let (loss, probs) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!(loss.abs() < 1e-9);
        assert!((probs.data()[0] - 1.0).abs() < 1e-12);

        let g = softmax_cross_entropy_backward(&probs, 0);
        assert!((g.data()[0] - (probs.data()[0] - 1.0)).abs() < 1e-15);
        assert!((g.data()[1] - probs.data()[1]).abs() < 1e-15);
    }

    #[test]
    fn backward_accumulates_into_grads() {
        let mut r = rng(9);
        let dense = Dense::<f64>::new(4, 2, &mut r);
        let x = rand_tensor(&[4], &mut r);
        let g = rand_tensor(&[2], &mut r);
        let mut grads = ParamPair::zeros_like(&dense.p);
        dense.backward(&x, &g, &mut grads).unwrap();
        let first = grads.w.clone();
        dense.backward(&x, &g, &mut grads).unwrap();
        for (a, b) in grads.w.data().iter().zip(first.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}
