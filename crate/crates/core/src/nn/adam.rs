use ndarray::{Array2, Zip};

use super::params::Params;
use super::tape::ParamGrads;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &Params, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut Params, grads: &ParamGrads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(&grads.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let Some(g) = g else { continue };
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}
