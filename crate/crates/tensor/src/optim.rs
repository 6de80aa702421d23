use std::collections::BTreeMap;

use crate::tensor::Tensor;

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Number of completed update steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every `(name, parameter, gradient)` triple.
    pub fn step<'a, I>(&mut self, lr: f64, items: I)
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor, &'a Tensor)>,
    {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, param, grad) in items {
            assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch for {name}");
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            for (((p, &g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// First and second moment estimates, by parameter name.
    pub fn moments(&self) -> &BTreeMap<String, (Tensor, Tensor)> {
        &self.moments
    }

    /// Rebuilds an optimizer from saved moments.
    pub fn restore(
        beta1: f64,
        beta2: f64,
        eps: f64,
        steps: u64,
        moments: BTreeMap<String, (Tensor, Tensor)>,
    ) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            steps,
            moments,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first update is lr * sign(g)
        let mut adam = Adam::new(0.0, 0.9, 1e-12);
        let mut p = Tensor::new(&[2], vec![1.0, -1.0]);
        let g = Tensor::new(&[2], vec![3.0, -0.5]);
        adam.step(0.1, [("p", &mut p, &g)]);
        assert!((p.data()[0] - 0.9).abs() < 1e-9);
        assert!((p.data()[1] + 0.9).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut p = Tensor::new(&[1], vec![5.0]);
        for _ in 0..2000 {
            let g = p.map(|x| 2.0 * (x - 2.0));
            adam.step(0.05, [("p", &mut p, &g)]);
        }
        assert!((p.data()[0] - 2.0).abs() < 1e-3);
    }
}
