/// Adam optimizer state for a small parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// One bias-corrected Adam descent step on `theta`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(theta.len(), grad.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((th, &g), (m, v)) in
            theta.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *th -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_normalized_gradient() {
        let mut adam = Adam::new(2, 0.0, 0.999, 1e-8);
        let mut theta = [1.0, -2.0];
        adam.step(&mut theta, &[0.3, -4.0], 0.01);
        assert!((theta[0] - (1.0 - 0.01 * 0.3 / (0.3 + 1e-8))).abs() < 1e-15);
        assert!((theta[1] - (-2.0 + 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_theta_and_decays_moments() {
        let mut adam = Adam::new(1, 0.0, 0.999, 1e-8);
        let mut theta = [0.5];
        adam.step(&mut theta, &[2.0], 0.1);
        let after_first = theta[0];
        let v1 = adam.v[0];
        adam.step(&mut theta, &[0.0], 0.1);
        assert_eq!(theta[0], after_first);
        assert!((adam.v[0] - 0.999 * v1).abs() < 1e-15);
        assert_eq!(adam.m[0], 0.0);
    }

    #[test]
    fn constant_gradient_updates_do_not_grow() {
        let mut adam = Adam::new(1, 0.0, 0.999, 1e-8);
        let mut theta = [0.0];
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let before = theta[0];
            adam.step(&mut theta, &[0.7], 1e-3);
            let step = (theta[0] - before).abs();
            assert!(step <= last * (1.0 + 1e-9));
            last = step;
        }
    }
}
