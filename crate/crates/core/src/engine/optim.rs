//! First-order optimizers over flat parameter lists. Moment buffers are
//! allocated lazily on the first step and are exposed for checkpointing.

use ndarray::ArrayD;

use crate::error::{Error, Result};

/// Adaptive-moment estimation with bias correction.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps; drives bias correction.
    pub t: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam { beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut ArrayD<f64>], grads: &[ArrayD<f64>], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        }
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Train(format!(
                "optimizer sees {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            if p.shape() != g.shape() {
                return Err(Error::Train(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            m.zip_mut_with(g, |mv, &gv| *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv);
            v.zip_mut_with(g, |vv, &gv| *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv);
            ndarray::Zip::from(&mut **p).and(&*m).and(&*v).for_each(|pv, &mv, &vv| {
                *pv -= lr * (mv / bc1) / ((vv / bc2).sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

/// Stochastic gradient descent with classical momentum:
/// u <- mu * u + g; p <- p - lr * u.
pub struct SgdMomentum {
    pub momentum: f64,
    pub u: Vec<ArrayD<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> SgdMomentum {
        SgdMomentum { momentum, u: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut ArrayD<f64>], grads: &[ArrayD<f64>], lr: f64) -> Result<()> {
        if self.u.is_empty() {
            self.u = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        }
        if params.len() != grads.len() || params.len() != self.u.len() {
            return Err(Error::Train(format!(
                "optimizer sees {} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                self.u.len()
            )));
        }
        for ((p, g), u) in params.iter_mut().zip(grads).zip(&mut self.u) {
            if p.shape() != g.shape() {
                return Err(Error::Train(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            u.zip_mut_with(g, |uv, &gv| *uv = self.momentum * *uv + gv);
            p.zip_mut_with(&*u, |pv, &uv| *pv -= lr * uv);
        }
        Ok(())
    }
}
