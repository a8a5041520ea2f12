//! Momentum SGD with the learning rate inside the recursion:
//!
//! ```text
//! G ← L·g + m·G
//! θ ← θ − G
//! ```
//!
//! Unrolled, `G_i = L·(g_i + m·g_{i−1} + m²·g_{i−2} + …)`: momentum acts as
//! an exponentially weighted running minibatch over past steps.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct SgdState<T: Real> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocities: Vec<Tensor<T>>,
}

impl<T: Real> SgdState<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            velocities: Vec::new(),
        })
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.velocities
    }

    /// Applies one update to `params` (name, value) using `grads` in the same
    /// order. Nothing is modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<T>)],
        grads: &[Tensor<T>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient for {name} has shape {:?}, expected {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        if self.velocities.is_empty() {
            self.velocities = grads.iter().map(Tensor::zeros_like).collect();
        } else if self.velocities.len() != grads.len()
            || self
                .velocities
                .iter()
                .zip(grads)
                .any(|(v, g)| v.shape() != g.shape())
        {
            return Err(Error::shape("parameter set changed between steps"));
        }
        let lr = T::from_f64(self.learning_rate);
        let m = T::from_f64(self.momentum);
        for (((_, p), g), v) in params.iter_mut().zip(grads).zip(&mut self.velocities) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = lr * gv + m * *vv;
                *pv -= *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(lr: f64, m: f64, grads: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut state = SgdState::<f64>::new(lr, m).unwrap();
        let mut p = Tensor::scalar(0.0);
        let mut vel = Vec::new();
        let mut pos = Vec::new();
        for &g in grads {
            state
                .step(&mut [("p".to_string(), &mut p)], &[Tensor::scalar(g)])
                .unwrap();
            vel.push(state.velocities()[0].data()[0]);
            pos.push(p.data()[0]);
        }
        (vel, pos)
    }

    #[test]
    fn velocity_hand_values() {
        let (vel, pos) = run(0.1, 0.9, &[1.0, 1.0, 1.0]);
        let expect = [0.1, 0.19, 0.271];
        for (v, e) in vel.iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
        assert!((pos[2] + 0.1 + 0.19 + 0.271).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let (_, pos) = run(0.5, 0.0, &[2.0, -4.0]);
        assert_eq!(pos, vec![-1.0, 1.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut state = SgdState::<f32>::new(0.1, 0.9).unwrap();
        let mut a = Tensor::scalar(1.0f32);
        let mut b = Tensor::scalar(1.0f32);
        let err = state
            .step(
                &mut [("enc1/W".into(), &mut a), ("enc1/lambda".into(), &mut b)],
                &[Tensor::scalar(0.5), Tensor::scalar(f32::NAN)],
            )
            .unwrap_err();
        assert!(err.to_string().contains("enc1/lambda"));
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(SgdState::<f32>::new(0.0, 0.9).is_err());
        assert!(SgdState::<f32>::new(0.1, 1.0).is_err());
        assert!(SgdState::<f32>::new(0.1, -0.1).is_err());
    }
}
