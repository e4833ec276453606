use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are indexed like the store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| {
            s.iter()
                .map(|(_, p)| if p.trainable { vec![0.0; p.value.len()] } else { vec![] })
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(store),
            second: zeros(store),
        }
    }

    pub(crate) fn from_parts(
        config: AdamConfig,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }

    /// Applies one update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(TensorError::Config(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for (id, p) in store.iter() {
            if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::Numeric(format!("gradient of {}", store.name(id))));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let precision = store.precision();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let param = store.param_mut(id);
            if !param.trainable {
                continue;
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let grad = &param.grad;
            let value = param.value.data_mut();
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = precision.round(beta1 * m[j] + (1.0 - beta1) * g);
                v[j] = precision.round(beta2 * v[j] + (1.0 - beta2) * g * g);
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                value[j] = precision.round(value[j] - lr * m_hat / (v_hat.sqrt() + epsilon));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Precision;
    use crate::tensor::Tensor;

    fn store_with(value: f64) -> (ParamStore, crate::params::ParamId) {
        let mut s = ParamStore::new(Precision::F64);
        let id = s.add("w", Tensor::scalar(value)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let (mut s, id) = store_with(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        for _ in 0..3 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.value(id).data()[0], 1.5);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = store_with(0.0);
        s.param_mut(id).grad[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        // m_hat = v_hat = 1 after bias correction, so |Δ| = lr / (1 + eps).
        let delta = s.value(id).data()[0];
        assert!((delta + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut s, id) = store_with(0.0);
        s.param_mut(id).grad[0] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let err = adam.step(&mut s).unwrap_err().to_string();
        assert!(err.contains("w"), "{err}");
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let (mut s, id) = store_with(2.0);
            let mut adam = Adam::new(AdamConfig::default(), &s);
            let mut traj = vec![];
            for _ in 0..20 {
                let x = s.value(id).data()[0];
                s.zero_grad();
                s.param_mut(id).grad[0] = 2.0 * x;
                adam.step(&mut s).unwrap();
                traj.push(s.value(id).data()[0].to_bits());
            }
            traj
        };
        assert_eq!(run(), run());
    }
}
