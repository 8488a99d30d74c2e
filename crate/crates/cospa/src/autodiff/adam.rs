//! Adam with bias correction, stepping a whole ParamSet in insertion order.

use super::nn::ParamSet;
use super::real::Real;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamCfg {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamCfg {
    pub fn with_lr(lr: f64) -> Self {
        AdamCfg { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<R> {
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
    pub t: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(params: &ParamSet<R>) -> Self {
        let m = (0..params.len())
            .map(|i| {
                let (r, c) = params.at(i).1.shape();
                Tensor::zeros(r, c)
            })
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }
}

/// One update. `grads` aligns with the ParamSet order; `None` means zero
/// gradient (the moments still decay, exactly as if g = 0).
pub fn adam_step<R: Real>(
    params: &mut ParamSet<R>,
    grads: &[Option<&Tensor<R>>],
    state: &mut AdamState<R>,
    cfg: AdamCfg,
) {
    debug_assert_eq!(grads.len(), params.len());
    state.t += 1;
    let b1 = R::from_f64(cfg.beta1);
    let b2 = R::from_f64(cfg.beta2);
    let one = R::one();
    let corr1 = R::from_f64(1.0 - cfg.beta1.powi(state.t as i32));
    let corr2 = R::from_f64(1.0 - cfg.beta2.powi(state.t as i32));
    let lr = R::from_f64(cfg.lr);
    let eps = R::from_f64(cfg.eps);
    for (i, grad) in grads.iter().enumerate() {
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        let p = params.at_mut(i).as_mut_slice();
        match *grad {
            Some(g) => {
                debug_assert_eq!(g.numel(), p.len());
                let g = g.as_slice();
                for j in 0..p.len() {
                    m[j] = b1 * m[j] + (one - b1) * g[j];
                    v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                    let mhat = m[j] / corr1;
                    let vhat = v[j] / corr2;
                    p[j] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
            None => {
                for j in 0..p.len() {
                    m[j] = b1 * m[j];
                    v[j] = b2 * v[j];
                    let mhat = m[j] / corr1;
                    let vhat = v[j] / corr2;
                    p[j] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}
