//! Per-parameter moment-based gradient descent shared by field and
//! policy training.

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grads: &[f64], lr: f64) {
        self.step_grouped(theta, grads, lr, theta.len(), lr);
    }

    /// One step with two learning rates: `lr_head` for parameters below
    /// `boundary`, `lr_tail` for the rest.
    pub fn step_grouped(
        &mut self,
        theta: &mut [f64],
        grads: &[f64],
        lr_head: f64,
        boundary: usize,
        lr_tail: f64,
    ) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let lr = if i < boundary { lr_head } else { lr_tail };
            theta[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}
