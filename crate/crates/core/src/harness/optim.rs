//! First-order optimizers over named parameter maps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::config::Optimizer;
use crate::net::{load_params, save_params, NetParams};
use crate::tensor::Tensor5;

/// Moment buffers, keyed like the parameters. SGD uses only `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: NetParams,
    pub v: NetParams,
}

impl OptimState {
    pub fn zeros_like(params: &NetParams) -> Self {
        let z: NetParams = params.iter().map(|(k, t)| (k.clone(), t.zeros_like())).collect();
        Self { m: z.clone(), v: z }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_params(&dir.join("m"), &self.m)?;
        save_params(&dir.join("v"), &self.v)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            m: load_params(&dir.join("m"))?,
            v: load_params(&dir.join("v"))?,
        })
    }
}

/// Applies one update in place. `t` is the 1-based step count used for Adam
/// bias correction.
pub fn apply(
    opt: Optimizer,
    params: &mut NetParams,
    grads: &NetParams,
    state: &mut OptimState,
    lr: f64,
    t: usize,
) -> Result<()> {
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::invalid("optimizer", format!("no gradient for {name}")))?;
        p.check_same_shape("optimizer", g)?;
        let m = state.m.get_mut(name).ok_or_else(|| Error::invalid("optimizer", format!("no state for {name}")))?;
        let v = state.v.get_mut(name).ok_or_else(|| Error::invalid("optimizer", format!("no state for {name}")))?;
        update(opt, p, g, m, v, lr, t);
    }
    Ok(())
}

fn update(opt: Optimizer, p: &mut Tensor5, g: &Tensor5, m: &mut Tensor5, v: &mut Tensor5, lr: f64, t: usize) {
    let g = g.data();
    match opt {
        Optimizer::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(t as i32);
            let c2 = 1.0 - beta2.powi(t as i32);
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Optimizer::Sgd { momentum } => {
            let m = m.data_mut();
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = momentum * m[i] + g[i];
                *x -= lr * m[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;

    fn one(v: f64) -> NetParams {
        [("w".to_string(), Tensor5::full(Shape5::new(1, 1, 1, 1, 1), v))].into()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // with bias correction the first step is lr * g / (|g| + eps)
        let mut p = one(1.0);
        let mut st = OptimState::zeros_like(&p);
        let opt = Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        apply(opt, &mut p, &one(3.0), &mut st, 0.1, 1).unwrap();
        assert!((p["w"].data()[0] - (1.0 - 0.1 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut p = one(0.0);
        let mut st = OptimState::zeros_like(&p);
        let opt = Optimizer::Sgd { momentum: 0.5 };
        apply(opt, &mut p, &one(1.0), &mut st, 1.0, 1).unwrap();
        apply(opt, &mut p, &one(1.0), &mut st, 1.0, 2).unwrap();
        assert_eq!(p["w"].data()[0], -2.5);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = one(0.0);
        let mut st = OptimState::zeros_like(&p);
        let opt = Optimizer::Sgd { momentum: 0.0 };
        assert!(apply(opt, &mut p, &NetParams::new(), &mut st, 1.0, 1).is_err());
    }
}
