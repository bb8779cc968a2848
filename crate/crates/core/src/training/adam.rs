//! Adaptive moment estimation with the usual defaults.

use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for one parameter collection; arrays are matched to the
/// network's parameter arrays by position.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    t: usize,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(shapes: &[&Vec<F>]) -> Self {
        Self {
            t: 0,
            m: shapes.iter().map(|a| vec![F::zero(); a.len()]).collect(),
            v: shapes.iter().map(|a| vec![F::zero(); a.len()]).collect(),
        }
    }

    /// One update; a zero gradient leaves the parameters bit-identical.
    pub fn step(&mut self, params: Vec<&mut Vec<F>>, grads: Vec<&Vec<F>>, lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = F::from_f64_c(ADAM_BETA1);
        let b2 = F::from_f64_c(ADAM_BETA2);
        let eps = F::from_f64_c(ADAM_EPS);
        let lr = F::from_f64_c(lr);
        let bc1 = F::one() - F::from_f64_c(ADAM_BETA1.powi(self.t as i32));
        let bc2 = F::one() - F::from_f64_c(ADAM_BETA2.powi(self.t as i32));
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (F::one() - b1) * gi;
                v[i] = b2 * v[i] + (F::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
