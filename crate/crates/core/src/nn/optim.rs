use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction. Parameters and gradients are grouped per
/// layer so a divergence can be traced to the layer that produced it.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<Tensor>>,
    v: Vec<Vec<Tensor>>,
}

impl Adam {
    pub fn new(params: &[Vec<Tensor>]) -> Self {
        let zeros = |p: &[Vec<Tensor>]| -> Vec<Vec<Tensor>> {
            p.iter()
                .map(|layer| layer.iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<Tensor>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<Tensor>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [Vec<Tensor>], grads: &[Vec<Tensor>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} layers, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (layer, g) in grads.iter().enumerate() {
            if g.iter().any(|t| !t.all_finite()) {
                return Err(Error::Divergence { layer });
            }
            let shapes_match = g.len() == params[layer].len()
                && g.iter().zip(&params[layer]).all(|(a, b)| a.shape() == b.shape());
            if !shapes_match {
                return Err(Error::Shape {
                    layer,
                    message: "gradient shapes differ from parameters".into(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (layer, layer_grads) in grads.iter().enumerate() {
            for (i, g) in layer_grads.iter().enumerate() {
                let m = self.m[layer][i].data_mut();
                let v = self.v[layer][i].data_mut();
                let p = params[layer][i].data_mut();
                for j in 0..g.len() {
                    let gj = g.data()[j];
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                    let mhat = m[j] / c1;
                    let vhat = v[j] / c2;
                    p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}
