use super::{Tensor, TensorError};
use serde::{Deserialize, Serialize};

/// Adam with bias correction. Moments are allocated on the first step and
/// matched to parameters by position, so callers must pass parameters in a
/// stable order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step<'a, I>(&mut self, pairs: I) -> Result<(), TensorError>
    where
        I: IntoIterator<Item = (&'a mut Tensor, &'a Tensor)>,
    {
        let pairs: Vec<_> = pairs.into_iter().collect();
        for (p, g) in &pairs {
            if p.shape() != g.shape() {
                return Err(TensorError::Incompatible(p.shape(), g.shape()));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = pairs
                .iter()
                .map(|(p, _)| Tensor::zeros(p.shape()))
                .collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != pairs.len() {
            return Err(TensorError::LengthMismatch {
                shape: super::Shape::new(self.first_moment.len(), 1, 1, 1),
                len: pairs.len(),
            });
        }
        for ((p, _), m) in pairs.iter().zip(&self.first_moment) {
            if p.shape() != m.shape() {
                return Err(TensorError::Incompatible(m.shape(), p.shape()));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in pairs
            .into_iter()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::full(Shape::new(2, 1, 1, 1), 0.7);
        let g = Tensor::zeros(p.shape());
        let mut adam = AdamState::new(1e-3);
        for _ in 0..5 {
            adam.step([(&mut p, &g)]).unwrap();
        }
        assert_eq!(p.data(), &[0.7, 0.7]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = Tensor::new(Shape::new(3, 1, 1, 1), vec![1.0, 1.0, 1.0]).unwrap();
        let g = Tensor::new(p.shape(), vec![0.3, -2.0, 1e-3]).unwrap();
        let lr = 0.01;
        let mut adam = AdamState::new(lr);
        adam.step([(&mut p, &g)]).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for (w, g) in p.data().iter().zip(g.data()) {
            let expected = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15);
            assert!(((1.0 - w) - lr * g.signum()).abs() < lr * 1e-5);
        }
    }

    #[test]
    fn minimizes_a_scalar_quadratic() {
        let mut w = Tensor::scalar(0.0);
        let mut adam = AdamState::new(0.1);
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * (w.data()[0] - 3.0));
            adam.step([(&mut w, &g)]).unwrap();
        }
        assert!((w.data()[0] - 3.0).abs() < 0.1, "w = {}", w.data()[0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = Tensor::zeros(Shape::new(2, 1, 1, 1));
        let g = Tensor::zeros(Shape::new(3, 1, 1, 1));
        assert!(AdamState::new(0.1).step([(&mut p, &g)]).is_err());
    }
}
