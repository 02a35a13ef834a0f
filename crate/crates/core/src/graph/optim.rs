//! Adaptive-moment gradient descent over a flat parameter list.

use super::Tensor;
use crate::scalar::{cast, Scalar};

/// Adam with bias correction. Parameter order is fixed by the caller and
/// must match between steps.
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Apply one update. `params` and `grads` are parallel slices in the
    /// caller's canonical parameter order.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) {
        assert_eq!(params.len(), grads.len());
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| Tensor::zeros_like(p)).collect();
            self.second_moment = params.iter().map(|p| Tensor::zeros_like(p)).collect();
        }
        self.step += 1;
        let b1 = cast::<T>(self.beta1);
        let b2 = cast::<T>(self.beta2);
        let one = T::one();
        let lr = cast::<T>(
            self.learning_rate * (1.0 - self.beta2.powi(self.step as i32)).sqrt()
                / (1.0 - self.beta1.powi(self.step as i32)),
        );
        let eps = cast::<T>(self.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            debug_assert_eq!(p.shape, g.shape);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (one - b1) * gi;
                v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
                p.data[i] = p.data[i] - lr * m.data[i] / (v.data[i].sqrt() + eps);
            }
        }
    }
}
