//! First-order optimizers behind a common trait, selected by name.

use crate::error::{Error, Result};

/// A parameter-update rule. `step` consumes one gradient of the flat
/// parameter vector.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    fn step(&mut self, params: &mut [f64], grads: &[f64]);
}

/// Plain stochastic gradient descent.
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= self.learning_rate * g;
        }
    }
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Registered optimizer names, in preference order.
pub fn optimizer_names() -> &'static [&'static str] {
    &["adam", "sgd"]
}

/// Instantiate an optimizer by name.
pub fn optimizer_by_name(name: &str, learning_rate: f64, n_params: usize) -> Result<Box<dyn Optimizer>> {
    match name {
        "adam" => Ok(Box::new(Adam::new(learning_rate, n_params))),
        "sgd" => Ok(Box::new(Sgd { learning_rate })),
        other => Err(Error::Usage(format!(
            "unknown optimizer {other:?}; valid names: {}",
            optimizer_names().join(", ")
        ))),
    }
}
