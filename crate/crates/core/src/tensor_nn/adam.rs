use super::network::ParamSet;
use super::tensor::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment accumulators, zero-initialized, with bias correction.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: ParamSet<T>,
    v: ParamSet<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        OptimizerState { config, t: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        if !params.same_shapes(grads) || !params.same_shapes(&self.m) {
            return Err(Error::shape("Adam: parameter, gradient and state shapes differ"));
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let corr1 = T::lit(1.0 - c.beta1.powf(self.t as f64));
        let corr2 = T::lit(1.0 - c.beta2.powf(self.t as f64));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let moments = self.m.tensors_mut().zip(self.v.tensors_mut());
        for (((_, _, p), (_, _, g)), ((_, _, m), (_, _, v))) in params.tensors_mut().zip(grads.tensors()).zip(moments) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
