use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NnError;

/// Training hyperparameters shared by the embedder and the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Triplet margin; unused by the predictor.
    pub margin: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 12,
            epochs: 5,
            margin: 0.2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) {
            return Err(NnError::InvalidSpec(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.margin < 0.0 {
            return Err(NnError::InvalidSpec(format!(
                "margin {} must be non-negative",
                self.margin
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidSpec("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Adam state: first/second moment estimates per parameter tensor plus the
/// shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn for_params(params: &[&Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    /// One Adam update with bias correction. `params` and `grads` must be
    /// aligned with the state.
    pub fn step(
        &mut self,
        params: Vec<&mut Tensor>,
        grads: &[Tensor],
        config: &TrainConfig,
    ) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::ShapeMismatch(
                "optimizer state does not match parameter count".into(),
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if param.shape() != grad.shape() {
                return Err(NnError::ShapeMismatch(
                    "gradient shape does not match parameter".into(),
                ));
            }
            let pd = param.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = grad.data();
            for i in 0..pd.len() {
                md[i] = config.beta1 * md[i] + (1.0 - config.beta1) * gd[i];
                vd[i] = config.beta2 * vd[i] + (1.0 - config.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut state = AdamState::for_params(&[&p]);
        let grads = vec![Tensor::zeros(&[3])];
        state
            .step(vec![&mut p], &grads, &TrainConfig::default())
            .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_displacement_is_learning_rate() {
        // Closed form at t = 1: m_hat = g, v_hat = g^2, so the update is
        // lr * g / (|g| + eps) ~ lr * sign(g).
        let config = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut p = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let mut state = AdamState::for_params(&[&p]);
        let grads = vec![Tensor::from_vec(&[2], vec![3.0, -0.25]).unwrap()];
        state.step(vec![&mut p], &grads, &config).unwrap();
        assert!((p.data()[0] + config.learning_rate).abs() < 1e-6);
        assert!((p.data()[1] - config.learning_rate).abs() < 1e-6);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let config = TrainConfig::default();
        let run = || {
            let mut p = Tensor::from_vec(&[2], vec![0.3, -0.8]).unwrap();
            let mut state = AdamState::for_params(&[&p]);
            for k in 1..=20 {
                let g =
                    Tensor::from_vec(&[2], vec![(k as f64 * 0.37).sin(), 0.01 * k as f64])
                        .unwrap();
                state.step(vec![&mut p], &[g], &config).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a.data(), b.data());
    }
}
