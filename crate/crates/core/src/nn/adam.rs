use super::real::Real;

/// Adam optimiser state for a flat list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub first_moment: Vec<Vec<F>>,
    pub second_moment: Vec<Vec<F>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<F: Real> AdamState<F> {
    pub fn new(shapes: &[usize], learning_rate: f64) -> Self {
        Self::with_betas(shapes, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(
        shapes: &[usize],
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        AdamState {
            first_moment: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: Vec<&mut [F]>, grads: &[Vec<F>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count");
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = F::from_f64_lossy(self.beta1);
        let b2 = F::from_f64_lossy(self.beta2);
        let one = F::one();
        let correction1 = F::from_f64_lossy(1.0 - self.beta1.powi(t));
        let correction2 = F::from_f64_lossy(1.0 - self.beta2.powi(t));
        let lr = F::from_f64_lossy(self.learning_rate);
        let eps = F::from_f64_lossy(self.epsilon);

        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                // With beta = 0 the corrections are exactly 1.
                let m_hat = if correction1 > F::zero() { m[i] / correction1 } else { m[i] };
                let v_hat = if correction2 > F::zero() { v[i] / correction2 } else { v[i] };
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
