use std::collections::HashMap;

use crate::error::{Error, Result};

use super::params::{NamedTensor, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over the trainable entries of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is indexed like the store; parameters with
    /// a `None` gradient are left untouched.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f32>>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Precondition(format!(
                "optimizer tracks {} parameters, store has {}, got {} gradients",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - f64::from(beta1).powi(t);
        let c2 = 1.0 - f64::from(beta2).powi(t);
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.trainable)).collect();
        for (i, (id, trainable)) in ids.into_iter().enumerate() {
            let Some(g) = grads[i].as_ref().filter(|_| trainable) else { continue };
            let data = store.data_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..data.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = f64::from(m[j]) / c1;
                let vh = f64::from(v[j]) / c2;
                data[j] -= (f64::from(lr) * mh / (vh.sqrt() + f64::from(eps))) as f32;
            }
        }
        Ok(())
    }

    pub fn export(&self, prefix: &str, store: &ParamStore) -> Vec<NamedTensor> {
        let mut out = vec![NamedTensor {
            name: format!("{prefix}step"),
            shape: vec![],
            data: vec![self.step as f32],
        }];
        for ((_, p), (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            for (kind, data) in [("m", m), ("v", v)] {
                out.push(NamedTensor {
                    name: format!("{prefix}{kind}/{}", p.name),
                    shape: p.shape.clone(),
                    data: data.clone(),
                });
            }
        }
        out
    }

    pub fn import(&mut self, prefix: &str, store: &ParamStore, tensors: &HashMap<String, NamedTensor>) -> Result<()> {
        let get = |key: String| {
            tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))
        };
        let step = get(format!("{prefix}step"))?;
        self.step = step.data.first().copied().unwrap_or(0.0) as u64;
        for (i, (_, p)) in store.iter().enumerate() {
            for kind in ["m", "v"] {
                let t = get(format!("{prefix}{kind}/{}", p.name))?;
                if t.data.len() != p.data.len() {
                    return Err(Error::Checkpoint(format!("moment {} has wrong length", t.name)));
                }
                let dst = if kind == "m" { &mut self.m[i] } else { &mut self.v[i] };
                dst.clone_from(&t.data);
            }
        }
        Ok(())
    }
}
