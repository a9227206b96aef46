//! Training loop: identity-balanced synthetic batches alternating with real
//! batches, augmentation, SGD or AdamW with a warmup-cosine schedule, optional domain
//! adaptation.

pub mod augment;
pub mod optim;
pub mod sampler;
pub mod schedule;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use candle_core::{DType, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentConfig};
pub use optim::{AdamW, Optimizer, OptimizerKind, Sgd};
pub use sampler::{group_by_identity, pk_epoch, pk_sample, plain_epoch};
pub use schedule::LrSchedule;

use crate::datamodel::labels::{DamageLabels, Domain};
use crate::datamodel::normalize::NormStats;
use crate::datamodel::record::SampleRecord;
use crate::domadapt::{
    domain_loss, gradient_reversal, model_classification_loss, pada_class_weights, AttachPoint, DaConfig, DaHeads, DaMode,
    PadaWeights,
};
use crate::imageio::FloatImage;
use crate::losses::{total_loss, LossBreakdown, LossWeights};
use crate::model::{route_batch, Batch, BranchOutputs, BranchSet, CheckpointHeader, ModelConfig, TransReid, INFERENCE_SHUFFLE_SEED};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Multi-task baseline on synthetic data.
    #[default]
    Bl,
    /// Baseline plus real batches for the damage branch.
    BlReal,
    Dann,
    Pada,
    /// Re-identification branches only.
    ReidOnly,
    /// Damage branch only.
    DdOnly,
}

impl TrainMode {
    pub const ALL: [TrainMode; 6] = [
        TrainMode::Bl,
        TrainMode::BlReal,
        TrainMode::Dann,
        TrainMode::Pada,
        TrainMode::ReidOnly,
        TrainMode::DdOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Bl => "bl",
            TrainMode::BlReal => "bl_real",
            TrainMode::Dann => "dann",
            TrainMode::Pada => "pada",
            TrainMode::ReidOnly => "reid_only",
            TrainMode::DdOnly => "dd_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown training mode `{s}`")))
    }

    pub fn branches(self) -> BranchSet {
        match self {
            TrainMode::ReidOnly => BranchSet::ReidOnly,
            TrainMode::DdOnly => BranchSet::DamageOnly,
            _ => BranchSet::MultiTask,
        }
    }

    pub fn da_mode(self) -> DaMode {
        match self {
            TrainMode::Dann => DaMode::Dann,
            TrainMode::Pada => DaMode::Pada,
            _ => DaMode::Off,
        }
    }

    /// Modes that consume real images and cannot run without them.
    pub fn needs_real(self) -> bool {
        matches!(self, TrainMode::BlReal | TrainMode::Dann | TrainMode::Pada)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Identities per synthetic batch.
    pub ids_per_batch: usize,
    /// Samples per identity in a synthetic batch.
    pub samples_per_id: usize,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub optimizer: OptimizerKind,
    /// SGD only.
    pub momentum: f64,
    pub weight_decay: f64,
    /// Learning-rate multiplier for the final identity and damage classifiers.
    pub head_lr_mult: f64,
    /// Passes over the real set per epoch.
    pub real_repeat: usize,
    pub augment: AugmentConfig,
    pub weights: LossWeights,
    /// Adaptation hyperparameters; the mode itself follows `mode`.
    pub da: DaConfig,
    pub precision: Precision,
    /// Write a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Bl,
            epochs: 20,
            batch_size: 32,
            ids_per_batch: 8,
            samples_per_id: 4,
            base_lr: 0.01,
            warmup_epochs: 5.0,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            weight_decay: 1e-4,
            head_lr_mult: 1.0,
            real_repeat: 2,
            augment: AugmentConfig::default(),
            weights: LossWeights::default(),
            da: DaConfig::default(),
            precision: Precision::F32,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.ids_per_batch * self.samples_per_id != self.batch_size {
            return Err(Error::config(format!(
                "ids_per_batch × samples_per_id = {} × {} does not equal batch_size {}",
                self.ids_per_batch, self.samples_per_id, self.batch_size
            )));
        }
        if self.mode.branches().has_reid() && (self.ids_per_batch < 2 || self.samples_per_id < 2) {
            return Err(Error::config("triplet mining needs at least 2 identities and 2 samples per identity"));
        }
        if self.real_repeat == 0 && self.mode.needs_real() {
            return Err(Error::config("real_repeat must be positive when training on real images"));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("momentum must lie in [0, 1) and weight_decay must be non-negative"));
        }
        if !(self.head_lr_mult > 0.0 && self.head_lr_mult.is_finite()) {
            return Err(Error::config("head_lr_mult must be positive"));
        }
        LrSchedule::new(self.base_lr, self.warmup_epochs, self.epochs as f64)?;
        self.weights.validate()?;
        self.effective_da().validate()
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.base_lr, self.warmup_epochs, self.epochs as f64)
    }

    /// Adaptation settings with the mode taken from the training mode.
    pub fn effective_da(&self) -> DaConfig {
        DaConfig {
            mode: self.mode.da_mode(),
            ..self.da.clone()
        }
    }
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub synthetic_batches: usize,
    pub real_batches: usize,
    /// Mean of every loss term over the epoch's batches.
    pub losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pada_weights: Option<Vec<f64>>,
    /// Largest gradient L2 norm seen per probed parameter.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub probe_grad_norms: BTreeMap<String, f64>,
    /// Wall-clock time; kept out of the serialised log so logs are reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

/// Images resident in memory at model resolution, with the labels the loop needs.
struct Pool {
    images: Vec<FloatImage>,
    cameras: Vec<usize>,
    labels: Vec<DamageLabels>,
    /// Identity class per sample (synthetic only).
    id_class: Vec<u32>,
    /// Bike-model class per sample (synthetic only).
    model_class: Vec<Option<u32>>,
}

impl Pool {
    fn load(records: &[SampleRecord], size: usize) -> Result<Vec<FloatImage>> {
        records.par_iter().map(|r| r.image.load(Some(size))).collect()
    }

    fn len(&self) -> usize {
        self.images.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Synthetic,
    Real,
}

pub struct Trainer {
    cfg: TrainConfig,
    model: TransReid,
    heads: Option<DaHeads>,
    norm: NormStats,
    optimizer: Optimizer,
    schedule: LrSchedule,
    synthetic: Pool,
    real: Pool,
    id_classes: Vec<i64>,
    model_classes: Vec<String>,
    pada: Option<PadaWeights>,
    probes: BTreeSet<String>,
    epoch: usize,
}

impl Trainer {
    /// Prepare a run. `template` supplies the architecture; identity and
    /// model counts and the branch set are filled in from the data and mode.
    /// Without synthetic records the template's identity count is kept and
    /// only real batches run.
    pub fn new(
        template: &ModelConfig,
        cfg: TrainConfig,
        synthetic: &[SampleRecord],
        real: &[SampleRecord],
        norm: NormStats,
    ) -> Result<Self> {
        cfg.validate()?;
        if synthetic.iter().any(|r| r.domain != Domain::Synthetic) || real.iter().any(|r| r.domain != Domain::Real) {
            return Err(Error::contract("training records are grouped by the wrong domain"));
        }
        if cfg.mode.needs_real() && real.is_empty() {
            return Err(Error::config(format!("mode `{}` needs real training images", cfg.mode.name())));
        }
        let real = if cfg.mode.needs_real() {
            real
        } else {
            if !real.is_empty() {
                log::warn!("mode `{}` ignores {} real images", cfg.mode.name(), real.len());
            }
            &[]
        };
        if synthetic.is_empty() && real.is_empty() {
            return Err(Error::data("no training images"));
        }

        let id_classes: Vec<i64> = synthetic.iter().map(|r| r.instance_id).collect::<BTreeSet<_>>().into_iter().collect();
        let model_classes: Vec<String> = synthetic
            .iter()
            .filter_map(|r| r.model.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let id_index: BTreeMap<i64, u32> = id_classes.iter().enumerate().map(|(i, &id)| (id, i as u32)).collect();
        let model_index: BTreeMap<&str, u32> = model_classes.iter().enumerate().map(|(i, m)| (m.as_str(), i as u32)).collect();
        if cfg.mode.branches().has_reid() && !synthetic.is_empty() && id_classes.len() < 2 {
            return Err(Error::data(format!(
                "re-identification training needs at least 2 identities, found {}",
                id_classes.len()
            )));
        }

        let model_cfg = ModelConfig {
            num_ids: if id_classes.is_empty() { template.num_ids } else { id_classes.len() },
            num_models: if model_classes.is_empty() { template.num_models } else { model_classes.len() },
            branches: cfg.mode.branches(),
            ..template.clone()
        };
        let dtype = cfg.precision.dtype();
        let model = TransReid::new(model_cfg.clone(), dtype, seed::derive_seed(cfg.seed, &[b"model"]))?;
        let da = cfg.effective_da();
        let heads = if da.enabled() {
            Some(DaHeads::new(&da, model_cfg.embed_dim, model_classes.len(), dtype, seed::derive_seed(cfg.seed, &[b"da"]))?)
        } else {
            None
        };

        let size = model_cfg.image_size;
        let synthetic_pool = Pool {
            images: Pool::load(synthetic, size)?,
            cameras: synthetic.iter().map(|r| r.view_index).collect(),
            labels: synthetic.iter().map(|r| r.labels).collect(),
            id_class: synthetic.iter().map(|r| id_index[&r.instance_id]).collect(),
            model_class: synthetic.iter().map(|r| r.model.as_deref().map(|m| model_index[m])).collect(),
        };
        let real_pool = Pool {
            images: Pool::load(real, size)?,
            cameras: real.iter().map(|r| r.view_index).collect(),
            labels: real.iter().map(|r| r.labels).collect(),
            id_class: Vec::new(),
            model_class: vec![None; real.len()],
        };
        let pada = (da.mode == DaMode::Pada).then(|| PadaWeights::neutral(model_classes.len()));
        Ok(Self {
            optimizer: Optimizer::new(cfg.optimizer, cfg.momentum, cfg.weight_decay, cfg.head_lr_mult),
            schedule: cfg.schedule()?,
            cfg,
            model,
            heads,
            norm,
            synthetic: synthetic_pool,
            real: real_pool,
            id_classes,
            model_classes,
            pada,
            probes: BTreeSet::new(),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &TransReid {
        &self.model
    }

    pub fn heads(&self) -> Option<&DaHeads> {
        self.heads.as_ref()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Record gradient norms of these parameters at every step.
    pub fn set_grad_probes(&mut self, names: impl IntoIterator<Item = String>) {
        self.probes = names.into_iter().collect();
    }

    pub fn checkpoint_header(&self) -> Result<CheckpointHeader> {
        let mut h = CheckpointHeader::new(self.model.config().clone(), self.norm, INFERENCE_SHUFFLE_SEED);
        h.train_mode = self.cfg.mode.name().to_string();
        h.id_classes = self.id_classes.clone();
        h.model_classes = self.model_classes.clone();
        h.training = serde_json::to_value(&self.cfg)?;
        Ok(h)
    }

    /// Train for the configured number of epochs, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochLog, &Trainer) -> Result<()>) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.cfg.epochs {
            let log = self.train_epoch()?;
            on_epoch(&log, self)?;
            logs.push(log);
        }
        Ok(logs)
    }

    /// Batch schedule of one epoch: synthetic and real batches alternate;
    /// whichever source runs out first lets the other finish alone.
    fn epoch_plan(&self, epoch: usize) -> Result<Vec<(Source, Vec<usize>)>> {
        let e = (epoch as u64).to_le_bytes();
        let mut rng = seed::derived_rng(self.cfg.seed, &[b"synthetic-batches", &e]);
        let synthetic = if self.synthetic.len() == 0 {
            Vec::new()
        } else if self.cfg.mode.branches().has_reid() {
            let groups = group_by_identity(&self.synthetic.id_class);
            pk_epoch(&groups, self.cfg.ids_per_batch, self.cfg.samples_per_id, &mut rng)?
        } else {
            plain_epoch(self.synthetic.len(), self.cfg.batch_size, 1, &mut rng)
        };
        let mut rng = seed::derived_rng(self.cfg.seed, &[b"real-batches", &e]);
        let real = plain_epoch(self.real.len(), self.cfg.batch_size, self.cfg.real_repeat, &mut rng);
        if real.len() > synthetic.len() && !synthetic.is_empty() {
            log::info!(
                "epoch {epoch}: synthetic batches exhausted after {}; {} real batches run alone",
                synthetic.len(),
                real.len() - synthetic.len()
            );
        } else if real.len() < synthetic.len() && !real.is_empty() {
            log::info!(
                "epoch {epoch}: real batches exhausted after {}; {} synthetic batches run alone",
                real.len(),
                synthetic.len() - real.len()
            );
        }
        let mut plan = Vec::with_capacity(synthetic.len() + real.len());
        let mut s = synthetic.into_iter();
        let mut r = real.into_iter();
        loop {
            let a = s.next();
            let b = r.next();
            if a.is_none() && b.is_none() {
                break;
            }
            plan.extend(a.map(|x| (Source::Synthetic, x)));
            plan.extend(b.map(|x| (Source::Real, x)));
        }
        Ok(plan)
    }

    fn pool(&self, source: Source) -> &Pool {
        match source {
            Source::Synthetic => &self.synthetic,
            Source::Real => &self.real,
        }
    }

    fn make_batch(&self, source: Source, indices: &[usize], rng_seed: u64) -> Result<Batch> {
        let pool = self.pool(source);
        let mut rng = seed::rng(rng_seed);
        let imgs: Vec<FloatImage> = indices
            .iter()
            .map(|&i| augment(&pool.images[i], &self.cfg.augment, &mut rng))
            .collect();
        let refs: Vec<&FloatImage> = imgs.iter().collect();
        let cams: Vec<usize> = indices.iter().map(|&i| pool.cameras[i]).collect();
        Batch::from_images(&refs, &cams, &self.norm, self.model.config(), self.model.dtype())
    }

    /// Refresh partial-adaptation weights from current predictions on real images.
    fn refresh_pada(&mut self) -> Result<()> {
        let Some(heads) = &self.heads else { return Ok(()) };
        if self.pada.is_none() {
            return Ok(());
        }
        let mut predictions = Vec::with_capacity(self.real.len());
        let all: Vec<usize> = (0..self.real.len()).collect();
        for chunk in all.chunks(self.cfg.batch_size.max(1)) {
            let batch = Batch::from_images(
                &chunk.iter().map(|&i| &self.real.images[i]).collect::<Vec<_>>(),
                &chunk.iter().map(|&i| self.real.cameras[i]).collect::<Vec<_>>(),
                &self.norm,
                self.model.config(),
                self.model.dtype(),
            )?;
            let out = self.model.forward(&batch, route_batch(&vec![Domain::Real; chunk.len()])?, INFERENCE_SHUFFLE_SEED, false)?;
            let feats = attach_features(&out, self.cfg.da.attach_point)?;
            let p = heads.model_predictions(&feats)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            predictions.extend(p);
        }
        self.pada = Some(pada_class_weights(&predictions, self.model_classes.len())?);
        Ok(())
    }

    /// One optimisation step; returns the loss breakdown.
    fn step(&mut self, source: Source, indices: &[usize], lr: f64, step_seed: u64, probe: &mut BTreeMap<String, f64>) -> Result<LossBreakdown> {
        let domain = match source {
            Source::Synthetic => Domain::Synthetic,
            Source::Real => Domain::Real,
        };
        let batch = self.make_batch(source, indices, seed::derive_seed(step_seed, &[b"augment"]))?;
        let tasks = route_batch(&vec![domain; indices.len()])?;
        let shuffle = seed::derive_seed(step_seed, &[b"jigsaw"]);
        let out = self.model.forward(&batch, tasks, shuffle, true)?;
        let pool = self.pool(source);
        let ids: Vec<u32> = match source {
            Source::Synthetic => indices.iter().map(|&i| pool.id_class[i]).collect(),
            Source::Real => Vec::new(),
        };
        let labels: Vec<DamageLabels> = indices.iter().map(|&i| pool.labels[i]).collect();
        let model_ids: Vec<Option<u32>> = indices.iter().map(|&i| pool.model_class[i]).collect();
        let (mut loss, mut br) = total_loss(&out, &ids, &labels, &self.cfg.weights, domain)?;

        if let Some(heads) = &self.heads {
            if out.damage_logits.is_some() {
                let da = self.cfg.effective_da();
                let feats = attach_features(&out, da.attach_point)?;
                let sample_weights = match (&self.pada, source) {
                    (Some(w), Source::Synthetic) => {
                        let m: Vec<u32> = model_ids.iter().map(|m| m.unwrap_or(0)).collect();
                        Some(w.per_sample(&m))
                    }
                    _ => None,
                };
                let dlogits = heads.domain_discriminator(&gradient_reversal(&feats, da.iota)?)?;
                let dmn = domain_loss(&dlogits, domain, sample_weights.as_deref())?;
                br.domain = scalar(&dmn)?;
                br.weighted_domain = da.theta * br.domain;
                loss = (loss + (dmn * da.theta)?)?;
                if da.mode == DaMode::Pada {
                    let logits = heads.model_classifier(&feats)?;
                    let mdl = model_classification_loss(&logits, domain, &model_ids, sample_weights.as_deref())?;
                    br.model_cls = scalar(&mdl)?;
                    br.weighted_model_cls = da.effective_delta() * br.model_cls;
                    loss = (loss + (mdl * da.effective_delta())?)?;
                }
                br.total = scalar(&loss)?;
            }
        }
        if !br.total.is_finite() {
            return Err(Error::contract(format!("non-finite loss {} at epoch {}", br.total, self.epoch)));
        }

        let grads = loss.backward()?;
        for name in &self.probes {
            let norm = match self.model.store().get(name).and_then(|v| grads.get(v.as_tensor())) {
                Some(g) => g.sqr()?.sum_all()?.sqrt()?.to_dtype(DType::F64)?.to_scalar::<f64>()?,
                None => 0.0,
            };
            let slot = probe.entry(name.clone()).or_insert(0.0);
            *slot = slot.max(norm);
        }
        let da_params = self.heads.as_ref().map(|h| h.store().params().iter()).into_iter().flatten();
        self.optimizer.step(self.model.store().params().iter().chain(da_params), &grads, lr)?;
        Ok(br)
    }

    pub fn train_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.epoch;
        self.refresh_pada()?;
        let plan = self.epoch_plan(epoch)?;
        let n = plan.len().max(1) as f64;
        let mut breakdowns = Vec::with_capacity(plan.len());
        let mut probe = BTreeMap::new();
        let mut first_lr = None;
        for (step, (source, indices)) in plan.iter().enumerate() {
            let lr = self.schedule.at(epoch as f64 + step as f64 / n);
            first_lr.get_or_insert(lr);
            let step_seed = seed::derive_seed(self.cfg.seed, &[b"step", &(epoch as u64).to_le_bytes(), &(step as u64).to_le_bytes()]);
            breakdowns.push(self.step(*source, indices, lr, step_seed, &mut probe)?);
        }
        self.epoch += 1;
        let log = EpochLog {
            epoch,
            lr: first_lr.unwrap_or_else(|| self.schedule.at(epoch as f64)),
            synthetic_batches: plan.iter().filter(|(s, _)| *s == Source::Synthetic).count(),
            real_batches: plan.iter().filter(|(s, _)| *s == Source::Real).count(),
            losses: LossBreakdown::mean(&breakdowns).to_map(),
            pada_weights: self.pada.as_ref().map(|w| w.0.clone()),
            probe_grad_norms: probe,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} lr {:.5} total {:.4} ({} synthetic, {} real batches, {:.1}s)",
            log.epoch,
            log.lr,
            log.losses.get("total").copied().unwrap_or(f64::NAN),
            log.synthetic_batches,
            log.real_batches,
            log.seconds
        );
        Ok(log)
    }
}

fn attach_features(out: &BranchOutputs, point: AttachPoint) -> Result<Tensor> {
    match point {
        AttachPoint::BackboneCls => Ok(out.backbone_cls.clone()),
        AttachPoint::DamageBranchCls => out
            .damage_cls
            .clone()
            .ok_or_else(|| Error::contract("damage branch did not run; no features to adapt")),
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::labels::{Phase, Split};
    use crate::datamodel::record::{ImageRef, REAL_INSTANCE_ID};
    use crate::synthgen::damage::Dirt;
    use crate::synthgen::render::REAL_VIEW_INDEX;
    use std::sync::Arc;

    pub(crate) fn tiny_model() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            patch_size: 4,
            patch_stride: 4,
            embed_dim: 8,
            depth: 2,
            num_heads: 2,
            k_groups: 2,
            ..ModelConfig::desk(2)
        }
    }

    fn record(i: usize, domain: Domain) -> SampleRecord {
        let shade = (i % 7) as f32 / 7.0;
        let mut img = FloatImage::filled(16, 16, [shade, 0.5, 1.0 - shade]);
        img.set(i % 16, (i * 3) % 16, 0, 1.0);
        SampleRecord {
            image: ImageRef::Memory(Arc::new(img)),
            key: format!("{domain:?}/{i}"),
            instance_id: if domain == Domain::Real { REAL_INSTANCE_ID } else { (i / 4) as i64 },
            model: (domain == Domain::Synthetic).then(|| format!("m{}", i % 2)),
            phase: if domain == Domain::Real { Phase::NotApplicable } else { Phase::Before },
            labels: DamageLabels {
                bent: domain == Domain::Real && i.is_multiple_of(2),
                ..Default::default()
            },
            dirt: Dirt::None,
            view_index: if domain == Domain::Real { REAL_VIEW_INDEX } else { i % 4 },
            background_index: 0,
            render_index: i % 4,
            domain,
            split: if domain == Domain::Real { Split::RealTrain } else { Split::Train },
        }
    }

    fn cfg(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: 2,
            batch_size: 8,
            ids_per_batch: 2,
            samples_per_id: 4,
            warmup_epochs: 1.0,
            ..TrainConfig::default()
        }
    }

    fn data(n_syn: usize, n_real: usize) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
        (
            (0..n_syn).map(|i| record(i, Domain::Synthetic)).collect(),
            (0..n_real).map(|i| record(i, Domain::Real)).collect(),
        )
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 30, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { warmup_epochs: 20.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        for m in TrainMode::ALL {
            assert_eq!(TrainMode::parse(m.name()).unwrap(), m);
        }
    }

    #[test]
    fn modes_needing_real_data_are_config_errors_without_it() {
        let (syn, _) = data(16, 0);
        for mode in [TrainMode::BlReal, TrainMode::Dann, TrainMode::Pada] {
            let err = Trainer::new(&tiny_model(), cfg(mode), &syn, &[], NormStats::identity()).err().unwrap();
            assert!(matches!(err, Error::Config(_)), "{mode:?}: {err}");
        }
    }

    #[test]
    fn real_batches_alternate_and_repeat() {
        let (syn, real) = data(16, 20);
        let t = Trainer::new(&tiny_model(), cfg(TrainMode::BlReal), &syn, &real, NormStats::identity()).unwrap();
        let plan = t.epoch_plan(0).unwrap();
        let real_batches = plan.iter().filter(|(s, _)| *s == Source::Real).count();
        // 20 real images in batches of 8 → 3 per pass (8, 8, 4), twice
        assert_eq!(real_batches, 6);
        assert_eq!(plan[0].0, Source::Synthetic);
        assert_eq!(plan[1].0, Source::Real);
        let mut seen = [0; 20];
        for (_, b) in plan.iter().filter(|(s, _)| *s == Source::Real) {
            for &i in b {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 2));
    }

    #[test]
    fn training_is_deterministic_and_logs_every_term() {
        let (syn, real) = data(16, 6);
        let run = || {
            let mut t = Trainer::new(&tiny_model(), cfg(TrainMode::Pada), &syn, &real, NormStats::identity()).unwrap();
            t.run(|_, _| Ok(())).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.losses, y.losses);
        }
        let l = &a[1].losses;
        assert!(l["total"].is_finite() && l["domain"] > 0.0 && l["model_cls"] > 0.0);
        let w = a[1].pada_weights.as_ref().unwrap();
        assert_eq!(w.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn real_only_batches_leave_reid_heads_untouched() {
        let (_, real) = data(0, 12);
        let mut t = Trainer::new(&tiny_model(), cfg(TrainMode::BlReal), &[], &real, NormStats::identity()).unwrap();
        let mut probes = t.model().param_names_with_prefix("global.");
        probes.extend(t.model().param_names_with_prefix("jigsaw."));
        probes.push("damage.heads.weight".into());
        t.set_grad_probes(probes);
        let before: Vec<f32> = t.model().store().get("global.classifier.weight").unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let logs = t.run(|_, _| Ok(())).unwrap();
        for log in &logs {
            assert_eq!(log.synthetic_batches, 0);
            for (name, norm) in &log.probe_grad_norms {
                if name.starts_with("damage") {
                    assert!(*norm > 0.0);
                } else {
                    assert_eq!(*norm, 0.0, "{name}");
                }
            }
        }
        let after: Vec<f32> = t.model().store().get("global.classifier.weight").unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn dd_only_has_no_reid_terms() {
        let (syn, _) = data(12, 0);
        let mut t = Trainer::new(&tiny_model(), cfg(TrainMode::DdOnly), &syn, &[], NormStats::identity()).unwrap();
        let log = t.train_epoch().unwrap();
        assert_eq!(log.losses["id_global"], 0.0);
        assert_eq!(log.losses["triplet_global"], 0.0);
        assert!(log.losses["damage"] > 0.0);
    }

    #[test]
    fn reid_only_has_no_damage_term() {
        let (syn, _) = data(16, 0);
        let mut t = Trainer::new(&tiny_model(), cfg(TrainMode::ReidOnly), &syn, &[], NormStats::identity()).unwrap();
        let log = t.train_epoch().unwrap();
        assert_eq!(log.losses["damage"], 0.0);
        assert!(log.losses["id_global"] > 0.0);
    }
}
