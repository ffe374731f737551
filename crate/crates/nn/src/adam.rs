//! Adam with bias correction.

use crate::{invalid, Element, ParamStore, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Updates one parameter slice in place. `t` is the 1-based step count.
pub fn adam_step<T: Element>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return invalid(format!(
            "adam: parameter has {} elements, gradient {}, moments {}/{}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        ));
    }
    if t == 0 {
        return invalid("adam: step count starts at 1");
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bias1 = 1.0 - b1.powi(t as i32);
    let bias2 = 1.0 - b2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i].as_f64();
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let update = cfg.lr * (mi / bias1) / ((vi / bias2).sqrt() + cfg.eps);
        param[i] = T::from_f64(param[i].as_f64() - update);
    }
    Ok(())
}

/// Optimizer state for a whole [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: ParamStore<T>,
    v: ParamStore<T>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        Adam { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return invalid("adam: gradient set does not match parameters");
        }
        self.step += 1;
        for i in 0..params.len() {
            adam_step(
                params.tensor_mut(i).data_mut(),
                grads.tensor(i).data(),
                self.m.tensor_mut(i).data_mut(),
                self.v.tensor_mut(i).data_mut(),
                self.step,
                &self.config,
            )?;
        }
        Ok(())
    }
}
