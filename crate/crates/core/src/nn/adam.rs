use serde::{Deserialize, Serialize};

use super::{NamedParams, NnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &NamedParams, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|(_, p)| p.grad())
        .flat_map(|g| g.into_iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, p) in params {
            p.scale_grad(s);
        }
    }
    norm
}

/// Adam with bias correction. Moments are indexed by parameter position and
/// checked against the parameter name on every step.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &NamedParams) -> Self {
        AdamState {
            config,
            step: 0,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            m: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    /// One update from the accumulated gradients; gradients are zeroed afterwards.
    pub fn step(&mut self, params: &NamedParams) -> Result<()> {
        if params.len() != self.names.len() || params.iter().zip(&self.names).any(|((n, _), k)| n != k) {
            return Err(NnError::Config(
                "parameter list changed since optimizer creation".into(),
            ));
        }
        for (name, p) in params {
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::NonFiniteGradient(name.clone()));
                }
            }
        }
        if let Some(c) = self.config.clip_norm {
            clip_grad_norm(params, c);
        }
        self.step += 1;
        let AdamConfig {
            lr, beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (_, p)) in params.iter().enumerate() {
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.update_data(|d| {
                for j in 0..d.len() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    let mh = m[j] / bc1;
                    let vh = v[j] / bc2;
                    d[j] -= lr * mh / (vh.sqrt() + eps);
                }
            });
            p.zero_grad();
        }
        Ok(())
    }
}
