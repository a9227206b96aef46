//! Training objective: identity cross-entropy, batch-hard triplet and the
//! weighted multi-label damage loss, combined per batch domain.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::datamodel::labels::{DamageLabels, Domain};
use crate::model::BranchOutputs;
use crate::{Error, Result};

/// Squared distances are clamped here before the square root.
const DIST_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Global identity cross-entropy.
    pub alpha: f64,
    /// Global triplet.
    pub beta: f64,
    /// Damage loss.
    pub gamma: f64,
    /// Bent-frame term inside the damage loss.
    pub lambda_bent: f64,
    /// Broken-frame term inside the damage loss.
    pub mu_broken: f64,
    /// Mean part-missing term inside the damage loss.
    pub nu_parts: f64,
    pub triplet_margin: f64,
    /// Label smoothing for the identity cross-entropy (0 disables it).
    pub label_smoothing: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda_bent: 0.25,
            mu_broken: 0.25,
            nu_parts: 0.5,
            triplet_margin: 0.3,
            label_smoothing: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_bent", self.lambda_bent),
            ("mu_broken", self.mu_broken),
            ("nu_parts", self.nu_parts),
            ("triplet_margin", self.triplet_margin),
        ];
        if let Some((n, v)) = named.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(format!("loss weight `{n}` = {v} must be finite and non-negative")));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-term values of one loss evaluation. Raw terms are unweighted; the
/// `weighted_*` fields are exactly what was summed into `total`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub id_global: f64,
    pub triplet_global: f64,
    /// Mean over groups of the local identity losses.
    pub id_local: f64,
    /// Mean over groups of the local triplet losses.
    pub triplet_local: f64,
    /// Per-label binary cross-entropy (bent, broken, five parts).
    pub bce: [f64; 7],
    /// Damage loss before its outer weight.
    pub damage: f64,
    pub weighted_id_global: f64,
    pub weighted_triplet_global: f64,
    /// Local terms enter unweighted: `id_local + triplet_local`.
    pub weighted_local: f64,
    pub weighted_damage: f64,
    pub weighted_bent: f64,
    pub weighted_broken: f64,
    pub weighted_parts: f64,
    /// Domain discriminator loss and its weighted share.
    pub domain: f64,
    pub weighted_domain: f64,
    /// Bike-model classification loss and its weighted share.
    pub model_cls: f64,
    pub weighted_model_cls: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Sum of the weighted top-level terms.
    pub fn recomputed_total(&self) -> f64 {
        self.weighted_id_global
            + self.weighted_triplet_global
            + self.weighted_local
            + self.weighted_damage
            + self.weighted_domain
            + self.weighted_model_cls
    }

    /// Flat `name → value` view for structured logs.
    pub fn to_map(&self) -> std::collections::BTreeMap<String, f64> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => {
                let mut out = std::collections::BTreeMap::new();
                for (k, v) in m {
                    match v {
                        serde_json::Value::Array(a) => {
                            for (i, x) in a.iter().enumerate() {
                                out.insert(format!("{k}.{i}"), x.as_f64().unwrap_or(f64::NAN));
                            }
                        }
                        other => {
                            out.insert(k, other.as_f64().unwrap_or(f64::NAN));
                        }
                    }
                }
                out
            }
            _ => Default::default(),
        }
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let maps: Vec<_> = items.iter().map(|b| serde_json::to_value(b).expect("serialisable")).collect();
        let mut acc = maps[0].clone();
        fn add(a: &mut serde_json::Value, b: &serde_json::Value, scale: f64) {
            match (a, b) {
                (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
                    for (k, v) in a.iter_mut() {
                        add(v, &b[k], scale);
                    }
                }
                (serde_json::Value::Array(a), serde_json::Value::Array(b)) => {
                    for (x, y) in a.iter_mut().zip(b) {
                        add(x, y, scale);
                    }
                }
                (a, b) => {
                    let v = a.as_f64().unwrap_or(0.0) * scale + b.as_f64().unwrap_or(0.0);
                    *a = serde_json::json!(v);
                }
            }
        }
        for m in &maps[1..] {
            add(&mut acc, m, 1.0);
        }
        let n = items.len() as f64;
        let zero = serde_json::to_value(LossBreakdown::default()).expect("serialisable");
        add(&mut acc, &zero, 1.0 / n);
        serde_json::from_value(acc).expect("same shape")
    }
}

fn to_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn term<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::LossTerm {
        term: name,
        source: Box::new(e),
    })
}

/// Mean cross-entropy of `[B, C]` logits against class indices, with optional label smoothing.
pub fn id_cross_entropy(logits: &Tensor, ids: &[u32], smoothing: f64) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    if ids.len() != b {
        return Err(Error::contract(format!("{} labels for a batch of {b}", ids.len())));
    }
    if let Some(bad) = ids.iter().find(|&&i| i as usize >= c) {
        return Err(Error::contract(format!("identity class {bad} outside [0, {c})")));
    }
    let log_probs = log_softmax(logits)?;
    let mut onehot = vec![0f64; b * c];
    for (row, &id) in ids.iter().enumerate() {
        onehot[row * c + id as usize] = 1.0;
    }
    let target = Tensor::from_vec(onehot, (b, c), logits.device())?.to_dtype(logits.dtype())?;
    let nll = (log_probs.mul(&target)?.sum_all()? * (-1.0 / b as f64))?;
    if smoothing == 0.0 {
        return Ok(nll);
    }
    let uniform = (log_probs.mean(D::Minus1)?.mean_all()? * -1.0)?;
    Ok(((nll * (1.0 - smoothing))? + (uniform * smoothing)?)?)
}

/// Row-wise log-softmax with the max subtracted for stability.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Pairwise Euclidean distances `[B, B]` of row vectors.
pub fn pairwise_distances(x: &Tensor) -> Result<Tensor> {
    let sq = x.sqr()?.sum_keepdim(1)?;
    let gram = x.matmul(&x.t()?)?;
    let d2 = sq.broadcast_add(&sq.t()?)?.sub(&(gram * 2.0)?)?;
    let floor = Tensor::new(DIST_FLOOR, x.device())?.to_dtype(x.dtype())?;
    Ok(d2.broadcast_maximum(&floor)?.sqrt()?)
}

/// Batch-hard triplet loss on raw features `[B, d]`.
///
/// For each anchor with at least one other same-identity sample, the hardest
/// positive is the farthest same-identity sample and the hardest negative the
/// closest other-identity sample; the loss is the mean hinge over those anchors.
pub fn triplet_batch_hard(features: &Tensor, ids: &[u32], margin: f64) -> Result<Tensor> {
    let b = features.dim(0)?;
    if ids.len() != b {
        return Err(Error::contract(format!("{} labels for a batch of {b}", ids.len())));
    }
    let dist = pairwise_distances(features)?;
    let host: Vec<f64> = dist.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let mut pos_idx = Vec::new();
    let mut neg_idx = Vec::new();
    let mut any_negative = false;
    for a in 0..b {
        let row = &host[a * b..(a + 1) * b];
        let hardest_pos = (0..b)
            .filter(|&j| j != a && ids[j] == ids[a])
            .max_by(|&i, &j| row[i].total_cmp(&row[j]).then(j.cmp(&i)));
        let hardest_neg = (0..b)
            .filter(|&j| ids[j] != ids[a])
            .min_by(|&i, &j| row[i].total_cmp(&row[j]).then(i.cmp(&j)));
        any_negative |= hardest_neg.is_some();
        if let (Some(p), Some(n)) = (hardest_pos, hardest_neg) {
            pos_idx.push((a * b + p) as u32);
            neg_idx.push((a * b + n) as u32);
        }
    }
    if !any_negative {
        return Err(Error::contract("triplet loss needs at least two identities in the batch"));
    }
    if pos_idx.is_empty() {
        return Err(Error::contract("triplet loss needs an identity with at least two samples"));
    }
    let flat = dist.flatten_all()?;
    let n = pos_idx.len();
    let d_pos = flat.index_select(&Tensor::from_vec(pos_idx, n, &Device::Cpu)?, 0)?;
    let d_neg = flat.index_select(&Tensor::from_vec(neg_idx, n, &Device::Cpu)?, 0)?;
    Ok(((d_pos - d_neg)? + margin)?.relu()?.mean_all()?)
}

/// `[B, 7]` label matrix in head order.
pub fn label_tensor(labels: &[DamageLabels], dtype: DType) -> Result<Tensor> {
    let flat: Vec<f32> = labels.iter().flat_map(|l| l.to_vector()).collect();
    Ok(Tensor::from_vec(flat, (labels.len(), 7), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Per-label mean binary cross-entropy on logits, `[7]`, in the stable form
/// `max(x, 0) − x·y + log(1 + exp(−|x|))`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let per = ((logits.relu()? - logits.mul(targets)?)? + softplus)?;
    Ok(per.mean(0)?)
}

/// Weighted damage loss. Real-domain batches use only the bent and broken terms.
/// Returns the loss and the per-label BCE values.
pub fn damage_loss(logits: &Tensor, labels: &[DamageLabels], weights: &LossWeights, domain: Domain) -> Result<(Tensor, [f64; 7])> {
    let (b, k) = logits.dims2()?;
    if k != 7 || labels.len() != b {
        return Err(Error::contract(format!("damage logits [{b}, {k}] with {} labels", labels.len())));
    }
    let bce = bce_with_logits(logits, &label_tensor(labels, logits.dtype())?)?;
    let nu = match domain {
        Domain::Synthetic => weights.nu_parts / 5.0,
        Domain::Real => 0.0,
    };
    let coef = [weights.lambda_bent, weights.mu_broken, nu, nu, nu, nu, nu];
    let coef_t = Tensor::new(&coef, logits.device())?.to_dtype(logits.dtype())?;
    let loss = bce.mul(&coef_t)?.sum_all()?;
    let values: Vec<f64> = bce.to_dtype(DType::F64)?.to_vec1()?;
    Ok((loss, values.try_into().expect("seven labels")))
}

/// The combined objective for one single-domain batch.
///
/// Synthetic: `α·ID(f_g) + β·T(f_g) + γ·L_D + (1/k)·Σ_j (ID(f_l^j) + T(f_l^j))`.
/// Real: `γ·L_D` with only the bent and broken terms. Branches missing from
/// `outputs` contribute zero.
pub fn total_loss(
    outputs: &BranchOutputs,
    ids: &[u32],
    labels: &[DamageLabels],
    weights: &LossWeights,
    domain: Domain,
) -> Result<(Tensor, LossBreakdown)> {
    let mut parts: Vec<Tensor> = Vec::new();
    let mut br = LossBreakdown::default();
    if domain == Domain::Synthetic {
        if let (Some(feat), Some(logits)) = (&outputs.global_feat, &outputs.global_logits) {
            let id = term("id_global", id_cross_entropy(logits, ids, weights.label_smoothing))?;
            let tri = term("triplet_global", triplet_batch_hard(feat, ids, weights.triplet_margin))?;
            br.id_global = to_f64(&id)?;
            br.triplet_global = to_f64(&tri)?;
            br.weighted_id_global = weights.alpha * br.id_global;
            br.weighted_triplet_global = weights.beta * br.triplet_global;
            parts.push((id * weights.alpha)?);
            parts.push((tri * weights.beta)?);
        }
        let k = outputs.local_feats.len();
        if k > 0 {
            let mut ids_sum: Option<Tensor> = None;
            let mut tri_sum: Option<Tensor> = None;
            for (f, l) in outputs.local_feats.iter().zip(&outputs.local_logits) {
                let id = term("id_local", id_cross_entropy(l, ids, weights.label_smoothing))?;
                let tri = term("triplet_local", triplet_batch_hard(f, ids, weights.triplet_margin))?;
                ids_sum = Some(match ids_sum {
                    Some(s) => (s + id)?,
                    None => id,
                });
                tri_sum = Some(match tri_sum {
                    Some(s) => (s + tri)?,
                    None => tri,
                });
            }
            let id_local = (ids_sum.expect("k > 0") / k as f64)?;
            let tri_local = (tri_sum.expect("k > 0") / k as f64)?;
            br.id_local = to_f64(&id_local)?;
            br.triplet_local = to_f64(&tri_local)?;
            br.weighted_local = br.id_local + br.triplet_local;
            parts.push(id_local);
            parts.push(tri_local);
        }
    }
    if let Some(logits) = &outputs.damage_logits {
        let (dl, bce) = term("damage", damage_loss(logits, labels, weights, domain))?;
        br.bce = bce;
        br.damage = to_f64(&dl)?;
        br.weighted_bent = weights.lambda_bent * bce[0];
        br.weighted_broken = weights.mu_broken * bce[1];
        br.weighted_parts = match domain {
            Domain::Synthetic => weights.nu_parts * bce[2..].iter().sum::<f64>() / 5.0,
            Domain::Real => 0.0,
        };
        br.weighted_damage = weights.gamma * br.damage;
        parts.push((dl * weights.gamma)?);
    }
    let total = match parts.split_first() {
        Some((first, rest)) => rest.iter().try_fold(first.clone(), |acc, t| acc.add(t))?,
        None => {
            let dtype = outputs.backbone_cls.dtype();
            Tensor::zeros((), dtype, &Device::Cpu)?
        }
    };
    br.total = to_f64(&total)?;
    Ok((total, br))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        let c = rows[0].len();
        Tensor::from_vec(rows.concat(), (rows.len(), c), &Device::Cpu).unwrap()
    }

    fn val(t: &Tensor) -> f64 {
        to_f64(t).unwrap()
    }

    /// Exhaustive per-anchor hardest-pair computation straight from coordinates.
    fn triplet_oracle(x: &[Vec<f64>], ids: &[u32], margin: f64) -> f64 {
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().max(DIST_FLOOR).sqrt();
        let mut total = 0.0;
        let mut count = 0;
        for a in 0..x.len() {
            let mut hardest: Option<f64> = None;
            for p in (0..x.len()).filter(|&p| p != a && ids[p] == ids[a]) {
                for n in (0..x.len()).filter(|&n| ids[n] != ids[a]) {
                    let h = dist(&x[a], &x[p]) - dist(&x[a], &x[n]) + margin;
                    hardest = Some(hardest.map_or(h, |v: f64| v.max(h)));
                }
            }
            if let Some(h) = hardest {
                total += h.max(0.0);
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let uniform = Tensor::zeros((3, 1834), DType::F64, &Device::Cpu).unwrap();
        assert_abs_diff_eq!(val(&id_cross_entropy(&uniform, &[0, 5, 1833], 0.0).unwrap()), (1834f64).ln(), epsilon = 1e-9);
        let two = t2(&[vec![0.0, 0.0]]);
        assert_abs_diff_eq!(val(&id_cross_entropy(&two, &[0], 0.0).unwrap()), 2f64.ln(), epsilon = 1e-12);
        let confident = t2(&[vec![50.0, -50.0], vec![-50.0, 50.0]]);
        assert!(val(&id_cross_entropy(&confident, &[0, 1], 0.0).unwrap()) < 1e-12);
        assert!(id_cross_entropy(&two, &[2], 0.0).is_err());
    }

    #[test]
    fn triplet_identical_features_give_margin() {
        let x = t2(&vec![vec![0.5, -1.0]; 4]);
        assert_abs_diff_eq!(val(&triplet_batch_hard(&x, &[0, 0, 1, 1], 0.3).unwrap()), 0.3, epsilon = 1e-9);
    }

    #[test]
    fn triplet_hand_placed_points() {
        let pts = vec![vec![0.0], vec![0.1], vec![1.0], vec![1.1]];
        let ids = [0, 0, 1, 1];
        let got = val(&triplet_batch_hard(&t2(&pts), &ids, 0.3).unwrap());
        // every anchor: d_pos = 0.1, d_neg = 0.9 → hinge inactive
        assert_abs_diff_eq!(got, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(got, triplet_oracle(&pts, &ids, 0.3), epsilon = 1e-7);
        // margin 1: outer anchors see d_neg = 1.0 (hinge 0.1), inner ones 0.9 (hinge 0.2)
        let got = val(&triplet_batch_hard(&t2(&pts), &ids, 1.0).unwrap());
        assert_abs_diff_eq!(got, 0.15, epsilon = 1e-7);
        assert_abs_diff_eq!(got, triplet_oracle(&pts, &ids, 1.0), epsilon = 1e-7);
    }

    #[test]
    fn triplet_errors() {
        let x = t2(&[vec![0.0], vec![1.0]]);
        assert!(triplet_batch_hard(&x, &[0, 0], 0.3).is_err());
        assert!(triplet_batch_hard(&x, &[0, 1], 0.3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn triplet_matches_oracle(
            n in 4usize..=16,
            dim in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
            ids[0] = 0; ids[1] = 0; ids[2] = 1;
            let got = val(&triplet_batch_hard(&t2(&x), &ids, 0.3).unwrap());
            prop_assert!((got - triplet_oracle(&x, &ids, 0.3)).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_bce_values_sum_to_one_weight() {
        // logits 0 give BCE = ln 2 for every label
        let logits = Tensor::zeros((2, 7), DType::F64, &Device::Cpu).unwrap();
        let labels = vec![DamageLabels::default(); 2];
        let (l, bce) = damage_loss(&logits, &labels, &LossWeights::default(), Domain::Synthetic).unwrap();
        assert_abs_diff_eq!(val(&l), 2f64.ln(), epsilon = 1e-12);
        assert!(bce.iter().all(|v| (v - 2f64.ln()).abs() < 1e-12));
        let (l, _) = damage_loss(&logits, &labels, &LossWeights::default(), Domain::Real).unwrap();
        assert_abs_diff_eq!(val(&l), 0.5 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn perfect_damage_predictions_vanish() {
        let labels = vec![DamageLabels {
            bent: true,
            broken: false,
            missing: [false, true, false, false, true],
        }];
        let logits: Vec<f64> = labels[0].to_vector().iter().map(|&y| if y > 0.5 { 60.0 } else { -60.0 }).collect();
        let logits = Tensor::from_vec(logits, (1, 7), &Device::Cpu).unwrap();
        let (l, _) = damage_loss(&logits, &labels, &LossWeights::default(), Domain::Synthetic).unwrap();
        assert!(val(&l) < 1e-20);
    }

    #[test]
    fn real_domain_ignores_part_labels() {
        let logits = t2(&[vec![0.3, -0.2, 1.0, -1.0, 2.0, 0.5, -0.7]]);
        let a = vec![DamageLabels::default()];
        let b = vec![DamageLabels {
            missing: [true; 5],
            ..Default::default()
        }];
        let w = LossWeights::default();
        let la = val(&damage_loss(&logits, &a, &w, Domain::Real).unwrap().0);
        let lb = val(&damage_loss(&logits, &b, &w, Domain::Real).unwrap().0);
        assert_eq!(la, lb);
    }

    #[test]
    fn breakdown_mean_and_map() {
        let a = LossBreakdown {
            total: 1.0,
            bce: [1.0; 7],
            ..Default::default()
        };
        let b = LossBreakdown {
            total: 3.0,
            ..Default::default()
        };
        let m = LossBreakdown::mean(&[a, b]);
        assert_eq!(m.total, 2.0);
        assert_eq!(m.bce[3], 0.5);
        assert_eq!(m.to_map()["bce.3"], 0.5);
    }
}
