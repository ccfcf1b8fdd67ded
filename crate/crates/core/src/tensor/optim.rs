//! Stochastic gradient descent with classical momentum and L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Update rule, applied elementwise:
///   v <- momentum * v - lr * (grad + weight_decay * param)
///   param <- param + v
#[derive(Debug, Clone, Copy)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdMomentum {
    pub fn step<T: Scalar>(
        &self,
        param: &mut Tensor<T>,
        grad: &Tensor<T>,
        velocity: &mut Tensor<T>,
    ) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != velocity.shape() {
            return Err(Error::Shape(format!(
                "sgd shapes differ: param {:?}, grad {:?}, velocity {:?}",
                param.shape(),
                grad.shape(),
                velocity.shape()
            )));
        }
        let lr = T::from_f64(self.lr);
        let m = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        for ((p, g), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(velocity.data_mut())
        {
            *v = m * *v - lr * (*g + wd * *p);
            *p = *p + *v;
        }
        param.ensure_finite("sgd step")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_steps_with_constant_gradient() {
        // Without decay: v1 = -lr*g, v2 = m*v1 - lr*g, total -lr*g*(2 + m).
        let mut p = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let mut v = Tensor::zeros(&[1]);
        let opt = SgdMomentum {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        opt.step(&mut p, &g, &mut v).unwrap();
        opt.step(&mut p, &g, &mut v).unwrap();
        let expect = 1.0 - 0.1 * 0.5 * 2.9;
        assert!((p.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = Tensor::from_vec(&[1], vec![2.0f64]).unwrap();
        let g = Tensor::zeros(&[1]);
        let mut v = Tensor::zeros(&[1]);
        let opt = SgdMomentum {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.5,
        };
        opt.step(&mut p, &g, &mut v).unwrap();
        // v = -0.1 * (0 + 0.5 * 2) = -0.1
        assert!((p.data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut v = Tensor::zeros(&[2]);
        let opt = SgdMomentum {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        assert!(opt.step(&mut p, &g, &mut v).is_err());
    }
}
