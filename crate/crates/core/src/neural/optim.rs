use indexmap::IndexMap;

use super::network::Gradients;
use super::params::ParameterStore;
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are created lazily per
/// parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: IndexMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-7,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient.
    pub fn apply(&mut self, params: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let (c1, c2) = self.corrections();
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            if p.values.len() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has {} values, parameter has {}",
                    g.len(),
                    p.values.len()
                )));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            adam_update(&mut p.values, g, m, v, self.lr, self.beta1, self.beta2, self.eps, c1, c2);
            if p.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    layer: format!("{name} (adam update)"),
                });
            }
        }
        Ok(())
    }

    /// Update of a free vector (used for latent codes).
    pub fn apply_vector(&mut self, key: &str, values: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let (c1, c2) = self.corrections();
        let (m, v) = self
            .moments
            .entry(key.to_string())
            .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
        adam_update(values, grad, m, v, self.lr, self.beta1, self.beta2, self.eps, c1, c2);
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    x: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..x.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        x[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}
