//! Adversarial domain alignment (gradient reversal + domain discriminator)
//! and partial adaptation weights from an auxiliary bike-model classifier.

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::datamodel::labels::Domain;
use crate::losses::{bce_with_logits, id_cross_entropy, log_softmax};
use crate::model::layers::Linear;
use crate::model::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaMode {
    #[default]
    Off,
    Dann,
    Pada,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachPoint {
    /// Class token leaving the shared encoder.
    BackboneCls,
    /// Class token of the damage branch.
    #[default]
    DamageBranchCls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaConfig {
    pub mode: DaMode,
    /// Weight of the domain discriminator loss.
    pub theta: f64,
    /// Weight of the bike-model classification loss; defaults to 1 under PADA and 0 otherwise.
    pub delta: Option<f64>,
    /// Gradient reversal scale.
    pub iota: f64,
    pub attach_point: AttachPoint,
}

impl Default for DaConfig {
    fn default() -> Self {
        Self {
            mode: DaMode::Off,
            theta: 1.0,
            delta: None,
            iota: 1.0,
            attach_point: AttachPoint::DamageBranchCls,
        }
    }
}

impl DaConfig {
    pub fn enabled(&self) -> bool {
        self.mode != DaMode::Off
    }

    pub fn effective_delta(&self) -> f64 {
        match self.mode {
            DaMode::Pada => self.delta.unwrap_or(1.0),
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta", self.theta), ("iota", self.iota), ("delta", self.delta.unwrap_or(0.0))] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("`{name}` = {v} must be finite and non-negative")));
            }
        }
        if self.mode != DaMode::Pada && self.delta.is_some_and(|d| d != 0.0) {
            return Err(Error::config("delta applies only to the pada mode"));
        }
        Ok(())
    }
}

struct GradientReversal {
    scale: f64,
}

impl CustomOp1 for GradientReversal {
    fn name(&self) -> &'static str {
        "gradient-reversal"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("gradient reversal expects a contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(v[start..end].to_vec()),
            CpuStorage::F64(v) => CpuStorage::F64(v[start..end].to_vec()),
            _ => {
                return Err(candle_core::Error::Msg("gradient reversal supports f32 and f64 only".into()));
            }
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some((grad_res * -self.scale)?))
    }
}

/// Identity in the forward pass; multiplies incoming gradients by `−iota` on the way back.
pub fn gradient_reversal(features: &Tensor, iota: f64) -> Result<Tensor> {
    if !(iota.is_finite() && iota >= 0.0) {
        return Err(Error::config(format!("gradient reversal scale {iota} must be non-negative")));
    }
    Ok(features.contiguous()?.apply_op1(GradientReversal { scale: iota })?)
}

/// Domain discriminator (two hidden layers of width `d`) and, under PADA,
/// a linear bike-model classifier. Parameters live in their own store so
/// that disabling adaptation leaves the optimiser's parameter set untouched.
#[derive(Debug, Clone)]
pub struct DaHeads {
    store: ParamStore,
    disc: [Linear; 3],
    model_classifier: Option<Linear>,
    pub num_models: usize,
}

impl DaHeads {
    pub fn new(cfg: &DaConfig, dim: usize, num_models: usize, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !cfg.enabled() {
            return Err(Error::config("adaptation heads requested with mode = off"));
        }
        let mut st = ParamStore::new(dtype);
        let disc = [
            Linear::new(&mut st, "da.disc.fc1", dim, dim, true, 0.02, seed)?,
            Linear::new(&mut st, "da.disc.fc2", dim, dim, true, 0.02, seed)?,
            Linear::new(&mut st, "da.disc.out", dim, 1, true, 0.02, seed)?,
        ];
        let model_classifier = if cfg.mode == DaMode::Pada {
            if num_models == 0 {
                return Err(Error::config("pada needs at least one bike model"));
            }
            Some(Linear::new(&mut st, "da.model_classifier", dim, num_models, true, 0.02, seed)?)
        } else {
            None
        };
        Ok(Self {
            store: st,
            disc,
            model_classifier,
            num_models,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// `[B]` domain logits (synthetic = 0, real = 1) for already-reversed features.
    pub fn domain_discriminator(&self, features: &Tensor) -> Result<Tensor> {
        let h = self.disc[0].forward(features)?.relu()?;
        let h = self.disc[1].forward(&h)?.relu()?;
        Ok(self.disc[2].forward(&h)?.squeeze(1)?)
    }

    /// `[B, num_models]` logits.
    pub fn model_classifier(&self, features: &Tensor) -> Result<Tensor> {
        self.model_classifier
            .as_ref()
            .ok_or_else(|| Error::contract("model classifier exists only under pada"))?
            .forward(features)
    }

    /// Softmax predictions of the model classifier, `[B, num_models]`.
    pub fn model_predictions(&self, features: &Tensor) -> Result<Tensor> {
        Ok(log_softmax(&self.model_classifier(features)?)?.exp()?)
    }
}

/// Weighted domain BCE: `(1/B)·Σ w_i·BCE_i`, with label 0 for synthetic and 1 for real.
pub fn domain_loss(logits: &Tensor, domain: Domain, sample_weights: Option<&[f64]>) -> Result<Tensor> {
    let b = logits.dim(0)?;
    let y = match domain {
        Domain::Synthetic => 0.0,
        Domain::Real => 1.0,
    };
    let targets = Tensor::full(y, b, &Device::Cpu)?.to_dtype(logits.dtype())?;
    let per = bce_with_logits(&logits.unsqueeze(1)?.t()?, &targets.unsqueeze(0)?)?;
    // `per` holds one mean per column; columns are samples here
    weighted_mean(&per, sample_weights)
}

fn weighted_mean(per_sample: &Tensor, weights: Option<&[f64]>) -> Result<Tensor> {
    let b = per_sample.dim(0)?;
    match weights {
        None => Ok(per_sample.mean_all()?),
        Some(w) => {
            if w.len() != b {
                return Err(Error::contract(format!("{} sample weights for {b} samples", w.len())));
            }
            let wt = Tensor::new(w, &Device::Cpu)?.to_dtype(per_sample.dtype())?;
            Ok((per_sample.mul(&wt)?.sum_all()? / b as f64)?)
        }
    }
}

/// Bike-model cross-entropy on synthetic samples, weighted per sample.
/// Real batches contribute zero; real samples must not carry model labels.
pub fn model_classification_loss(logits: &Tensor, domain: Domain, model_ids: &[Option<u32>], sample_weights: Option<&[f64]>) -> Result<Tensor> {
    match domain {
        Domain::Real => {
            if model_ids.iter().any(Option::is_some) {
                return Err(Error::contract("real samples cannot supervise the model classifier"));
            }
            Ok(Tensor::zeros((), logits.dtype(), &Device::Cpu)?)
        }
        Domain::Synthetic => {
            let ids: Vec<u32> = model_ids
                .iter()
                .map(|m| m.ok_or_else(|| Error::contract("synthetic sample without a model label")))
                .collect::<Result<_>>()?;
            if sample_weights.is_none() {
                return id_cross_entropy(logits, &ids, 0.0);
            }
            let (b, c) = logits.dims2()?;
            let logp = log_softmax(logits)?;
            let mut onehot = vec![0f64; b * c];
            for (r, &i) in ids.iter().enumerate() {
                if i as usize >= c {
                    return Err(Error::contract(format!("model class {i} outside [0, {c})")));
                }
                onehot[r * c + i as usize] = 1.0;
            }
            let target = Tensor::from_vec(onehot, (b, c), &Device::Cpu)?.to_dtype(logits.dtype())?;
            let per = (logp.mul(&target)?.sum(1)? * -1.0)?;
            weighted_mean(&per, sample_weights)
        }
    }
}

/// Per-model weights from target-domain predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadaWeights(pub Vec<f64>);

impl PadaWeights {
    pub fn neutral(num_models: usize) -> Self {
        Self(vec![1.0; num_models])
    }

    /// Weight of each sample given its model index.
    pub fn per_sample(&self, model_ids: &[u32]) -> Vec<f64> {
        model_ids.iter().map(|&m| self.0[m as usize]).collect()
    }
}

/// Mean prediction over target samples, scaled so the largest entry is 1.
/// An empty target set gives neutral weights.
pub fn pada_class_weights(predictions: &[Vec<f64>], num_models: usize) -> Result<PadaWeights> {
    if predictions.is_empty() {
        return Ok(PadaWeights::neutral(num_models));
    }
    let mut mean = vec![0.0; num_models];
    for p in predictions {
        if p.len() != num_models {
            return Err(Error::contract(format!("prediction of length {} for {num_models} models", p.len())));
        }
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let max = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Ok(PadaWeights::neutral(num_models));
    }
    Ok(PadaWeights(mean.iter().map(|v| (v / max).clamp(0.0, 1.0)).collect()))
}

/// `L_D + θ·L_dmn + δ·L_mdl`; the adversarial sign lives in the reversal layer.
pub fn da_total_loss(base_damage: &Tensor, dmn: &Tensor, mdl: &Tensor, cfg: &DaConfig) -> Result<Tensor> {
    Ok(((base_damage + (dmn * cfg.theta)?)? + (mdl * cfg.effective_delta())?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use candle_core::Var;

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn reversal_forward_is_bitwise_identity() {
        let x = Tensor::new(&[[1.5f32, -0.0, 3.25], [f32::MIN_POSITIVE, 7.0, -2.0]], &Device::Cpu).unwrap();
        let y = gradient_reversal(&x.t().unwrap(), 2.0).unwrap();
        let a: Vec<u32> = x.t().unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = y.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn reversal_scales_gradient() {
        for iota in [0.0, 1.0, 2.0] {
            let x = Var::new(&[0.3f64, -1.2, 2.0], &Device::Cpu).unwrap();
            let f = gradient_reversal(x.as_tensor(), iota).unwrap().sqr().unwrap().sum_all().unwrap();
            let g: Vec<f64> = f.backward().unwrap().get(x.as_tensor()).unwrap().to_vec1().unwrap();
            for (gi, xi) in g.iter().zip([0.3, -1.2, 2.0]) {
                assert_abs_diff_eq!(*gi, -iota * 2.0 * xi, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn untrained_discriminator_is_near_ln2() {
        let cfg = DaConfig {
            mode: DaMode::Dann,
            ..Default::default()
        };
        let heads = DaHeads::new(&cfg, 8, 0, DType::F64, 1).unwrap();
        let feats = Tensor::randn(0.0f64, 0.1, (6, 8), &Device::Cpu).unwrap();
        let logits = heads.domain_discriminator(&feats).unwrap();
        let a = scalar(&domain_loss(&logits, Domain::Synthetic, None).unwrap());
        let b = scalar(&domain_loss(&logits, Domain::Real, None).unwrap());
        assert!(((a + b) / 2.0 - 2f64.ln()).abs() < 0.01, "{a} {b}");
    }

    #[test]
    fn model_classifier_losses() {
        let logits = Tensor::zeros((4, 14), DType::F64, &Device::Cpu).unwrap();
        let ids = vec![Some(0), Some(3), Some(13), Some(7)];
        let l = model_classification_loss(&logits, Domain::Synthetic, &ids, None).unwrap();
        assert_abs_diff_eq!(scalar(&l), 14f64.ln(), epsilon = 1e-12);
        let l = model_classification_loss(&logits, Domain::Real, &[None; 4], None).unwrap();
        assert_eq!(scalar(&l), 0.0);
        assert!(model_classification_loss(&logits, Domain::Real, &ids, None).is_err());
        let w = [1.0, 0.0, 1.0, 0.0];
        let l = model_classification_loss(&logits, Domain::Synthetic, &ids, Some(&w)).unwrap();
        assert_abs_diff_eq!(scalar(&l), 14f64.ln() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pada_weights() {
        let w = pada_class_weights(&[vec![0.2, 0.8], vec![0.2, 0.8]], 2).unwrap();
        assert_abs_diff_eq!(w.0[0], 0.25, epsilon = 1e-12);
        assert_eq!(w.0[1], 1.0);
        assert_eq!(pada_class_weights(&[vec![0.5, 0.5]], 2).unwrap().0, vec![1.0, 1.0]);
        assert_eq!(pada_class_weights(&[], 3).unwrap().0, vec![1.0; 3]);
    }

    #[test]
    fn absent_model_contributes_nothing() {
        let logits = Tensor::new(&[0.7f64, -0.4, 1.1], &Device::Cpu).unwrap();
        let w = pada_class_weights(&[vec![0.0, 1.0]], 2).unwrap();
        let per_sample = w.per_sample(&[0, 0, 0]);
        let l = domain_loss(&logits, Domain::Synthetic, Some(&per_sample)).unwrap();
        assert_eq!(scalar(&l), 0.0);
    }

    #[test]
    fn total_arithmetic() {
        let t = |v: f64| Tensor::new(v, &Device::Cpu).unwrap();
        let pada = DaConfig {
            mode: DaMode::Pada,
            ..Default::default()
        };
        assert_abs_diff_eq!(scalar(&da_total_loss(&t(1.0), &t(0.5), &t(0.25), &pada).unwrap()), 1.75);
        let dann = DaConfig {
            mode: DaMode::Dann,
            ..Default::default()
        };
        assert_abs_diff_eq!(scalar(&da_total_loss(&t(1.0), &t(0.5), &t(0.25), &dann).unwrap()), 1.5);
        assert!(DaConfig { delta: Some(1.0), ..dann }.validate().is_err());
    }
}
