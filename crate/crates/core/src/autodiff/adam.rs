//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

use super::ParamArray;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: per-parameter moment accumulators plus a step counter.
pub struct Adam {
    cfg: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(cfg.learning_rate > 0.0 && cfg.epsilon > 0.0) {
            return Err(Error::Contract(
                "adam learning rate and epsilon must be positive".into(),
            ));
        }
        if !(0.0 < cfg.beta1 && cfg.beta1 < 1.0 && 0.0 < cfg.beta2 && cfg.beta2 < 1.0) {
            return Err(Error::Contract("adam betas must lie in (0, 1)".into()));
        }
        Ok(Adam {
            cfg,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    /// One Adam update over a parameter list and matching gradient list.
    ///
    /// Moment accumulators are allocated on first use and their shapes are
    /// checked on every call. A non-finite gradient entry aborts the step and
    /// names the offending parameter.
    pub fn step(&mut self, params: &mut [&mut ParamArray], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads.iter())
            .zip(self.first_moment.iter().zip(self.second_moment.iter()))
        {
            if p.data.len() != g.len() || p.data.len() != m.len() || p.data.len() != v.len() {
                return Err(Error::Contract(format!(
                    "adam: accumulator/gradient size mismatch for parameter '{}'",
                    p.name
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NanGradient {
                    param: p.name.clone(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for ((pi, &gi), (mi, vi)) in p
                .data
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }
}
