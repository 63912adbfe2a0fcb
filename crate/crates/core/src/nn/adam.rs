use serde::{Deserialize, Serialize};

use super::net::DiffusionNet;
use super::tape::{Gradients, ParamId};
use super::tensor::Tensor2;
use crate::{Error, Result};

/// Adam moment estimates for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor2>,
    pub second_moment: Vec<Tensor2>,
}

impl OptimizerState {
    pub fn new(net: &DiffusionNet, lr: f64) -> Self {
        let zeros: Vec<Tensor2> = net
            .params()
            .iter()
            .map(|p| Tensor2::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Checks that every moment tensor matches its parameter.
    pub fn validate_for(&self, net: &DiffusionNet) -> Result<()> {
        let params = net.params();
        if self.first_moment.len() != params.len() || self.second_moment.len() != params.len() {
            return Err(Error::shape(
                "optimizer state",
                params.len(),
                self.first_moment.len(),
            ));
        }
        for ((p, m), v) in params
            .iter()
            .zip(&self.first_moment)
            .zip(&self.second_moment)
        {
            let shape = p.value.shape();
            if m.shape() != shape || v.shape() != shape {
                return Err(Error::shape(
                    format!("optimizer moment for {}", p.name),
                    format!("{shape:?}"),
                    format!("{:?}", m.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update. A parameter absent from `grads` is treated
/// as having a zero gradient.
pub fn adam_step(
    net: &mut DiffusionNet,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    state.validate_for(net)?;
    for (id, g) in grads.iter() {
        let p = net
            .params()
            .get(id.0)
            .ok_or_else(|| Error::shape("gradient id", net.params().len(), id.0))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape(
                format!("gradient for {}", p.name),
                format!("{:?}", p.value.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", p.name),
            });
        }
    }

    state.step += 1;
    let step = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let corr1 = 1.0 - b1.powi(step);
    let corr2 = 1.0 - b2.powi(step);
    let (lr, eps) = (state.lr, state.eps);

    for (i, param) in net.params_mut().iter_mut().enumerate() {
        let g = grads.get(ParamId(i));
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let w = param.value.data_mut();
        for j in 0..w.len() {
            let gj = g.map_or(0.0, |g| g.data()[j]);
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
