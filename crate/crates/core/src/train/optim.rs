use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Module, Parameter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl OptimConfig {
    pub fn new(lr: f64, total_steps: usize) -> Self {
        Self {
            lr,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_fraction: 0.1,
            total_steps,
            clip_norm: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("lr", self.lr >= 0.0 && self.lr.is_finite()),
            ("weight_decay", self.weight_decay >= 0.0 && self.weight_decay.is_finite()),
            ("beta1", (0.0..1.0).contains(&self.beta1)),
            ("beta2", (0.0..1.0).contains(&self.beta2)),
            ("eps", self.eps > 0.0),
            ("warmup_fraction", (0.0..=1.0).contains(&self.warmup_fraction)),
            ("clip_norm", self.clip_norm >= 0.0 && self.clip_norm.is_finite()),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(Error::config(*field, "out of range")),
            None => Ok(()),
        }
    }

    /// Linear warmup, then cosine decay to zero at `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1);
        let warmup = (self.warmup_fraction * total as f64).round() as usize;
        if step < warmup {
            return self.lr * (step + 1) as f64 / warmup as f64;
        }
        let span = (total - warmup).max(1) as f64;
        let progress = ((step - warmup) as f64 / span).min(1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Diagnostics of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub lr: f64,
    pub grad_norm: f64,
    pub updated: usize,
}

/// Adam with decoupled weight decay. Moments are kept per trainable
/// parameter name and only ever created for trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: OptimConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

fn decays(p: &Parameter) -> bool {
    p.shape().len() >= 2
}

impl AdamW {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    /// Applies the accumulated gradients of `module`'s trainable parameters,
    /// then clears them.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<StepStats> {
        let mut sq = 0.0;
        module.visit(&mut |p| {
            if p.trainable() {
                if let Some(g) = p.grad() {
                    sq += g.iter().map(|v| v * v).sum::<f64>();
                }
            }
        });
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NumericDomain { op: "adamw" });
        }
        let c = self.config;
        let clip = if c.clip_norm > 0.0 && grad_norm > c.clip_norm {
            c.clip_norm / grad_norm
        } else {
            1.0
        };
        let lr = c.lr_at(self.step as usize);
        let t = (self.step + 1) as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        let mut updated = 0;
        let mut failure = None;
        let moments = &mut self.moments;
        module.visit_mut(&mut |p| {
            if !p.trainable() || failure.is_some() {
                return;
            }
            let n = p.numel();
            let grad: Vec<f64> = match p.grad() {
                Some(g) => g.iter().map(|v| v * clip).collect(),
                None => vec![0.0; n],
            };
            let mom = moments.entry(p.name().to_string()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if mom.m.len() != n {
                failure = Some(Error::Contract(format!("moment size mismatch for `{}`", p.name())));
                return;
            }
            let wd = if decays(p) { c.weight_decay } else { 0.0 };
            let mut values = p.values().to_vec();
            for i in 0..n {
                mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * grad[i];
                mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let mhat = mom.m[i] / bc1;
                let vhat = mom.v[i] / bc2;
                values[i] -= lr * (mhat / (vhat.sqrt() + c.eps) + wd * values[i]);
            }
            if let Err(e) = p.set_values(values) {
                failure = Some(e);
                return;
            }
            p.zero_grad();
            updated += 1;
        });
        if let Some(e) = failure {
            return Err(e);
        }
        self.step += 1;
        Ok(StepStats { lr, grad_norm, updated })
    }
}
