use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    /// Adam with decoupled weight decay. Converges far faster than SGD for a
    /// transformer trained from scratch on a few hundred images.
    Adamw,
}

/// The optimiser selected by [`OptimizerKind`].
#[derive(Debug)]
pub struct Optimizer {
    inner: Inner,
    head_lr_mult: f64,
}

#[derive(Debug)]
enum Inner {
    Sgd(Sgd),
    AdamW(AdamW),
}

/// Final linear classifiers (identity and damage), the parameters scaled by `head_lr_mult`.
pub fn is_classifier_head(name: &str) -> bool {
    name.starts_with("global.classifier")
        || name.starts_with("jigsaw.classifier.")
        || name == "damage.heads.weight"
        || name == "damage.heads.bias"
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, momentum: f64, weight_decay: f64, head_lr_mult: f64) -> Self {
        let inner = match kind {
            OptimizerKind::Sgd => Inner::Sgd(Sgd::new(momentum, weight_decay)),
            OptimizerKind::Adamw => Inner::AdamW(AdamW::new(weight_decay)),
        };
        Self { inner, head_lr_mult }
    }

    /// One update at rate `lr`, multiplied by `head_lr_mult` for classifier heads.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a String, &'a Var)>, grads: &GradStore, lr: f64) -> Result<()> {
        let mult = self.head_lr_mult;
        let rate = |name: &str| if is_classifier_head(name) { lr * mult } else { lr };
        match &mut self.inner {
            Inner::Sgd(o) => o.step(params, grads, rate),
            Inner::AdamW(o) => o.step(params, grads, rate),
        }
    }
}

/// Stochastic gradient descent with momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·p)`, `p ← p − lr·v`.
#[derive(Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Update every named parameter that received a gradient.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a String, &'a Var)>, grads: &GradStore, lr: impl Fn(&str) -> f64) -> Result<()> {
        for (name, var) in params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let p = var.as_tensor().detach();
            let g = (g.detach() + (&p * self.weight_decay)?)?;
            let v = match self.velocity.get(name) {
                Some(v) if self.momentum != 0.0 => ((v * self.momentum)? + g)?,
                _ => g,
            };
            var.set(&(p - (&v * lr(name))?)?)?;
            self.velocity.insert(name.clone(), v);
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `p ← p − lr·(m̂ / (√v̂ + ε) + λ·p)` with bias-corrected `m̂`, `v̂`.
#[derive(Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a String, &'a Var)>, grads: &GradStore, lr: impl Fn(&str) -> f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (name, var) in params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let p = var.as_tensor().detach();
            let (m, v) = match self.moments.get(name) {
                Some((m, v)) => (
                    ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                    ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                ),
                None => ((&g * (1.0 - self.beta1))?, (g.sqr()? * (1.0 - self.beta2))?),
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + self.eps)?)?;
            let update = (update + (&p * self.weight_decay)?)?;
            var.set(&(p - (update * lr(name))?)?)?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(())
    }
}
