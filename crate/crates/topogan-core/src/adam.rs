//! Adam optimizer with bias-corrected moment estimates.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::layers::Parameter;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment state.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub m: Tensor<F>,
    pub v: Tensor<F>,
    pub t: u64,
}

pub struct Adam<F> {
    cfg: AdamParams,
    states: Vec<AdamState<F>>,
}

impl<F: Scalar> Adam<F> {
    /// One moment pair per parameter, in step order. Rejects lr <= 0 and
    /// betas outside [0, 1).
    pub fn new(cfg: AdamParams, params: &[&Parameter<F>]) -> Result<Self> {
        if cfg.lr <= 0.0 {
            return Err(CoreError::InvalidArg(format!(
                "learning rate must be > 0, got {}",
                cfg.lr
            )));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(CoreError::InvalidArg(format!(
                "betas must lie in [0,1), got {} / {}",
                cfg.beta1, cfg.beta2
            )));
        }
        let states = params
            .iter()
            .map(|p| AdamState {
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
                t: 0,
            })
            .collect();
        Ok(Self { cfg, states })
    }

    pub fn state(&self, idx: usize) -> &AdamState<F> {
        &self.states[idx]
    }

    /// Apply one update from each parameter's accumulated gradient.
    /// Parameter order must match construction order.
    pub fn step(&mut self, params: &mut [&mut Parameter<F>]) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(CoreError::Shape(format!(
                "optimizer holds {} states but got {} parameters",
                self.states.len(),
                params.len()
            )));
        }
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let lr = F::from_f64(self.cfg.lr);
        let eps = F::from_f64(self.cfg.epsilon);
        for (p, st) in params.iter_mut().zip(&mut self.states) {
            st.t += 1;
            // Bias corrections at the new step count.
            let bc1 = F::one() - F::from_f64(self.cfg.beta1.powi(st.t as i32));
            let bc2 = F::one() - F::from_f64(self.cfg.beta2.powi(st.t as i32));
            let md = st.m.data_mut();
            let vd = st.v.data_mut();
            for ((w, &g), (m, v)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(md.iter_mut().zip(vd.iter_mut()))
            {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
