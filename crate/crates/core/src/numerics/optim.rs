use serde::{Deserialize, Serialize};

use crate::error::{M3vError, Result};

/// Anything that exposes its trainable `(parameter, gradient)` slices in a
/// fixed order.
pub trait Parameters {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64]));

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.iter_mut().for_each(|v| *v = 0.0));
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }

    /// Parameters flattened in visitation order.
    fn flat_params(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p, _| out.extend_from_slice(p));
        out
    }

    fn flat_grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, g| out.extend_from_slice(g));
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_params(&mut |p, _| {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators, one pair per visited parameter slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one bias-corrected Adam update using the gradients currently
    /// held by `params`.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P) -> Result<()> {
        let first_call = self.first_moment.is_empty();
        let mut shape_error = None;
        let mut slot = 0usize;
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (ms, vs) = (&mut self.first_moment, &mut self.second_moment);

        params.visit_params(&mut |p, g| {
            if shape_error.is_some() {
                return;
            }
            if p.len() != g.len() {
                shape_error = Some(M3vError::shape("optimizer_step", (p.len(), 1), (g.len(), 1)));
                return;
            }
            if first_call {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            let (Some(m), Some(v)) = (ms.get_mut(slot), vs.get_mut(slot)) else {
                shape_error = Some(M3vError::shape("optimizer_step", (slot, 0), (0, 0)));
                return;
            };
            if m.len() != p.len() {
                shape_error = Some(M3vError::shape("optimizer_step", (m.len(), 1), (p.len(), 1)));
                return;
            }
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            slot += 1;
        });

        if shape_error.is_none() && slot != self.first_moment.len() {
            shape_error = Some(M3vError::shape(
                "optimizer_step",
                (slot, 0),
                (self.first_moment.len(), 0),
            ));
        }
        match shape_error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
