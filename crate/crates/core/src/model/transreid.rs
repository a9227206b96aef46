//! The multi-task transformer: overlapping patch embedding with side
//! information, a shared encoder, and global, jigsaw and damage branches.

use candle_core::{DType, Device, IndexOp, Tensor, D};
use rand::seq::SliceRandom;

use super::config::{JigsawRemainder, ModelConfig, DAMAGE_OUTPUTS};
use super::layers::{l2_normalize, BatchNorm, Block, LayerNorm, Linear};
use super::params::{Init, ParamStore};
use crate::datamodel::labels::Domain;
use crate::datamodel::normalize::NormStats;
use crate::imageio::FloatImage;
use crate::seed;
use crate::{Error, Result};

/// Shuffle seed used by the jigsaw branch whenever embeddings are extracted for retrieval.
pub const INFERENCE_SHUFFLE_SEED: u64 = 0x5eed_0f_1ce;

/// Which branches run for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tasks {
    /// Global and jigsaw branches.
    pub reid: bool,
    pub damage: bool,
}

impl Tasks {
    pub const ALL: Tasks = Tasks { reid: true, damage: true };
    pub const NONE: Tasks = Tasks { reid: false, damage: false };

    pub fn is_empty(&self) -> bool {
        !self.reid && !self.damage
    }
}

/// Task diversion: synthetic batches train every branch, real batches only
/// the damage branch. Mixed batches are a caller bug.
pub fn route_batch(domains: &[Domain]) -> Result<Tasks> {
    let Some(first) = domains.first() else {
        return Ok(Tasks::NONE);
    };
    if domains.iter().any(|d| d != first) {
        return Err(Error::contract("batch mixes synthetic and real samples"));
    }
    Ok(match first {
        Domain::Synthetic => Tasks::ALL,
        Domain::Real => Tasks { reid: false, damage: true },
    })
}

/// Model input: im2col patches and camera indices.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, N, 3·P·P]`, normalised pixels.
    pub patches: Tensor,
    /// `[B]`, u32 camera/view indices.
    pub cameras: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.patches.dim(0).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalise and cut images into overlapping patches. Patch vectors are
    /// laid out channel-major, then row, then column.
    pub fn from_images(images: &[&FloatImage], cameras: &[usize], norm: &NormStats, cfg: &ModelConfig, dtype: DType) -> Result<Self> {
        if images.len() != cameras.len() {
            return Err(Error::contract("one camera index per image is required"));
        }
        let (s, p, st) = (cfg.image_size, cfg.patch_size, cfg.patch_stride);
        let g = cfg.grid_side();
        let pd = cfg.patch_dim();
        let mut out = vec![0f32; images.len() * g * g * pd];
        let inv: [f32; 3] = std::array::from_fn(|c| 1.0 / norm.safe_std(c));
        let mean: [f32; 3] = std::array::from_fn(|c| norm.mean[c] as f32);
        for (b, img) in images.iter().enumerate() {
            if img.width != s || img.height != s {
                return Err(Error::contract(format!(
                    "image is {}×{}, model expects {s}×{s}",
                    img.width, img.height
                )));
            }
            for gy in 0..g {
                for gx in 0..g {
                    let base = ((b * g + gy) * g + gx) * pd;
                    for c in 0..3 {
                        for py in 0..p {
                            let row = (gy * st + py) * s;
                            for px in 0..p {
                                let v = img.data[(row + gx * st + px) * 3 + c];
                                out[base + (c * p + py) * p + px] = (v - mean[c]) * inv[c];
                            }
                        }
                    }
                }
            }
        }
        for &c in cameras {
            if c >= cfg.num_cameras {
                return Err(Error::contract(format!("camera index {c} outside vocabulary of {}", cfg.num_cameras)));
            }
        }
        let patches = Tensor::from_vec(out, (images.len(), g * g, pd), &Device::Cpu)?.to_dtype(dtype)?;
        let cams: Vec<u32> = cameras.iter().map(|&c| c as u32).collect();
        Ok(Self {
            patches,
            cameras: Tensor::from_vec(cams, images.len(), &Device::Cpu)?,
        })
    }
}

/// Everything the branches produce for one batch. Absent branches give `None`/empty.
#[derive(Debug, Clone)]
pub struct BranchOutputs {
    /// `[B, d]` post-neck global feature.
    pub global_feat: Option<Tensor>,
    /// `[B, num_ids]`.
    pub global_logits: Option<Tensor>,
    /// `k` tensors of `[B, d]`.
    pub local_feats: Vec<Tensor>,
    /// `k` tensors of `[B, num_ids]`.
    pub local_logits: Vec<Tensor>,
    /// `[B, 7]`.
    pub damage_logits: Option<Tensor>,
    /// `[B, d]` class token after the shared encoder.
    pub backbone_cls: Tensor,
    /// `[B, d]` class token of the damage branch, before the heads.
    pub damage_cls: Option<Tensor>,
}

#[derive(Debug, Clone)]
struct GlobalBranch {
    block: Block,
    norm: LayerNorm,
    neck: BatchNorm,
    classifier: Linear,
}

#[derive(Debug, Clone)]
struct JigsawBranch {
    block: Block,
    norm: LayerNorm,
    necks: Vec<BatchNorm>,
    classifiers: Vec<Linear>,
}

/// Seven independent heads, each a batch norm followed by a single-output linear layer.
/// The heads see the same input, so they share normalisation statistics and differ
/// only in their affine and linear parameters.
#[derive(Debug, Clone)]
struct DamageBranch {
    block: Block,
    norm: LayerNorm,
    neck: BatchNorm,
    /// `[7, d]` per-head scale and shift.
    head_gamma: Tensor,
    head_beta: Tensor,
    /// `[7, d]` and `[7]`.
    fc_weight: Tensor,
    fc_bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct TransReid {
    cfg: ModelConfig,
    store: ParamStore,
    patch_embed: Linear,
    cls_token: Tensor,
    pos_embed: Tensor,
    sie_embed: Tensor,
    shared: Vec<Block>,
    global: Option<GlobalBranch>,
    jigsaw: Option<JigsawBranch>,
    damage: Option<DamageBranch>,
}

impl TransReid {
    /// Build a freshly initialised network. Parameter values depend only on `(seed, name)`.
    pub fn new(cfg: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut st = ParamStore::new(dtype);
        let d = cfg.embed_dim;
        let std = cfg.init_std;
        let n = cfg.num_patches();
        let block = |st: &mut ParamStore, name: &str| Block::new(st, name, d, cfg.num_heads, cfg.mlp_ratio, std, seed);

        let patch_embed = Linear::new(&mut st, "embed.patch", cfg.patch_dim(), d, true, std, seed)?;
        let cls_token = st.param("embed.cls_token", &[1, 1, d], Init::TruncNormal(std), seed)?;
        let pos_embed = st.param("embed.pos", &[1, n + 1, d], Init::TruncNormal(std), seed)?;
        let sie_embed = st.param("embed.sie", &[cfg.num_cameras, d], Init::TruncNormal(std), seed)?;
        let shared = (0..cfg.depth - 1)
            .map(|i| block(&mut st, &format!("shared.{i}")))
            .collect::<Result<Vec<_>>>()?;

        let (global, jigsaw) = if cfg.branches.has_reid() {
            let global = GlobalBranch {
                block: block(&mut st, "global.block")?,
                norm: LayerNorm::new(&mut st, "global.norm", d, seed)?,
                neck: BatchNorm::new(&mut st, "global.neck", d, false, seed)?,
                classifier: Linear::new(&mut st, "global.classifier", d, cfg.num_ids, false, 0.001, seed)?,
            };
            let jigsaw = JigsawBranch {
                block: block(&mut st, "jigsaw.block")?,
                norm: LayerNorm::new(&mut st, "jigsaw.norm", d, seed)?,
                necks: (0..cfg.k_groups)
                    .map(|j| BatchNorm::new(&mut st, &format!("jigsaw.neck.{j}"), d, false, seed))
                    .collect::<Result<_>>()?,
                classifiers: (0..cfg.k_groups)
                    .map(|j| Linear::new(&mut st, &format!("jigsaw.classifier.{j}"), d, cfg.num_ids, false, 0.001, seed))
                    .collect::<Result<_>>()?,
            };
            (Some(global), Some(jigsaw))
        } else {
            (None, None)
        };
        let damage = if cfg.branches.has_damage() {
            Some(DamageBranch {
                block: block(&mut st, "damage.block")?,
                norm: LayerNorm::new(&mut st, "damage.norm", d, seed)?,
                neck: BatchNorm::without_affine(&mut st, "damage.neck", d)?,
                head_gamma: st.param("damage.heads.neck_weight", &[DAMAGE_OUTPUTS, d], Init::Ones, seed)?,
                head_beta: st.param("damage.heads.neck_bias", &[DAMAGE_OUTPUTS, d], Init::Zeros, seed)?,
                fc_weight: st.param("damage.heads.weight", &[DAMAGE_OUTPUTS, d], Init::TruncNormal(0.001), seed)?,
                fc_bias: st.param("damage.heads.bias", &[DAMAGE_OUTPUTS], Init::Zeros, seed)?,
            })
        } else {
            None
        };
        Ok(Self {
            cfg,
            store: st,
            patch_embed,
            cls_token,
            pos_embed,
            sie_embed,
            shared,
            global,
            jigsaw,
            damage,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Tasks this network can serve, intersected with `wanted`.
    pub fn available(&self, wanted: Tasks) -> Tasks {
        Tasks {
            reid: wanted.reid && self.cfg.branches.has_reid(),
            damage: wanted.damage && self.cfg.branches.has_damage(),
        }
    }

    /// Token sequence `[B, N + 1, d]`: projected patches plus position and
    /// side-information embeddings, with the class token prepended.
    pub fn patchify_embed(&self, batch: &Batch) -> Result<Tensor> {
        let b = batch.len();
        let d = self.cfg.embed_dim;
        let (_, n, pd) = batch.patches.dims3()?;
        if n != self.cfg.num_patches() || pd != self.cfg.patch_dim() {
            return Err(Error::contract(format!("patch tensor [{b}, {n}, {pd}] does not match the model")));
        }
        let tokens = self.patch_embed.forward(&batch.patches)?;
        let cls = self.cls_token.broadcast_as((b, 1, d))?;
        let x = Tensor::cat(&[&cls, &tokens], 1)?.broadcast_add(&self.pos_embed)?;
        let sie = self.sie_embed.index_select(&batch.cameras, 0)?.unsqueeze(1)?;
        Ok(x.broadcast_add(&sie)?)
    }

    pub fn forward_shared(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut x = tokens.clone();
        for blk in &self.shared {
            x = blk.forward(&x)?;
        }
        Ok(x)
    }

    /// `(f_g, id logits)`.
    pub fn forward_global(&self, encoded: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let br = self.global.as_ref().ok_or_else(|| Error::contract("model has no global branch"))?;
        let cls = br.norm.forward(&br.block.forward(encoded)?)?.i((.., 0))?;
        let feat = br.neck.forward(&cls, train)?;
        let logits = br.classifier.forward(&feat)?;
        Ok((feat, logits))
    }

    /// `(k local features, k id logits)`.
    pub fn forward_jigsaw(&self, encoded: &Tensor, shuffle_seed: u64, train: bool) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let br = self.jigsaw.as_ref().ok_or_else(|| Error::contract("model has no jigsaw branch"))?;
        let (b, _, d) = encoded.dims3()?;
        let k = self.cfg.k_groups;
        let groups = jigsaw_groups(self.cfg.num_patches(), k, shuffle_seed, self.cfg.jigsaw_remainder)?;
        let g = groups[0].len();
        // patch token j sits at sequence position j + 1
        let order: Vec<u32> = groups.iter().flatten().map(|&j| (j + 1) as u32).collect();
        let order = Tensor::from_vec(order, k * g, encoded.device())?;
        let shuffled = encoded
            .index_select(&order, 1)?
            .reshape((b, k, g, d))?
            .transpose(0, 1)?
            .reshape((k * b, g, d))?;
        let cls = encoded.i((.., 0..1))?;
        let cls = Tensor::cat(&vec![&cls; k], 0)?;
        let seq = Tensor::cat(&[&cls, &shuffled], 1)?;
        let out = br.norm.forward(&br.block.forward(&seq)?)?.i((.., 0))?.reshape((k, b, d))?;
        let mut feats = Vec::with_capacity(k);
        let mut logits = Vec::with_capacity(k);
        for j in 0..k {
            let f = br.necks[j].forward(&out.get(j)?, train)?;
            logits.push(br.classifiers[j].forward(&f)?);
            feats.push(f);
        }
        Ok((feats, logits))
    }

    /// `(damage logits [B, 7], branch class token [B, d])`.
    pub fn forward_damage(&self, encoded: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let br = self.damage.as_ref().ok_or_else(|| Error::contract("model has no damage branch"))?;
        let cls = br.norm.forward(&br.block.forward(encoded)?)?.i((.., 0))?;
        let normed = br.neck.normalize(&cls, train)?.unsqueeze(1)?;
        let per_head = normed.broadcast_mul(&br.head_gamma)?.broadcast_add(&br.head_beta)?;
        let logits = per_head
            .broadcast_mul(&br.fc_weight)?
            .sum(D::Minus1)?
            .broadcast_add(&br.fc_bias)?;
        Ok((logits, cls))
    }

    /// Run the requested branches. Unavailable branches are skipped silently.
    pub fn forward(&self, batch: &Batch, tasks: Tasks, shuffle_seed: u64, train: bool) -> Result<BranchOutputs> {
        let tasks = self.available(tasks);
        let encoded = self.forward_shared(&self.patchify_embed(batch)?)?;
        let backbone_cls = encoded.i((.., 0))?;
        let (global_feat, global_logits, local_feats, local_logits) = if tasks.reid {
            let (f, l) = self.forward_global(&encoded, train)?;
            let (lf, ll) = self.forward_jigsaw(&encoded, shuffle_seed, train)?;
            (Some(f), Some(l), lf, ll)
        } else {
            (None, None, Vec::new(), Vec::new())
        };
        let (damage_logits, damage_cls) = if tasks.damage {
            let (l, c) = self.forward_damage(&encoded, train)?;
            (Some(l), Some(c))
        } else {
            (None, None)
        };
        Ok(BranchOutputs {
            global_feat,
            global_logits,
            local_feats,
            local_logits,
            damage_logits,
            backbone_cls,
            damage_cls,
        })
    }

    /// Retrieval embedding `[B, (k + 1)·d]`: global and local features
    /// concatenated and L2-normalised, using a fixed shuffle.
    pub fn inference_embedding(&self, batch: &Batch, shuffle_seed: u64) -> Result<Tensor> {
        if !self.cfg.branches.has_reid() {
            return Err(Error::contract("model has no re-identification branches"));
        }
        let out = self.forward(batch, Tasks { reid: true, damage: false }, shuffle_seed, false)?;
        let mut parts = vec![out.global_feat.expect("reid requested")];
        parts.extend(out.local_feats);
        l2_normalize(&Tensor::cat(&parts, 1)?)
    }

    /// Names of parameters belonging to a branch prefix (`global`, `jigsaw`, `damage`, ...).
    pub fn param_names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.store.params().keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }
}

/// Seeded partition of `num_patches` token indices into `k` equal groups.
pub fn jigsaw_groups(num_patches: usize, k: usize, shuffle_seed: u64, remainder: JigsawRemainder) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > num_patches {
        return Err(Error::config(format!("{k} groups invalid for {num_patches} tokens")));
    }
    if remainder == JigsawRemainder::Reject && !num_patches.is_multiple_of(k) {
        return Err(Error::config(format!("{k} groups do not divide {num_patches} tokens")));
    }
    let mut perm: Vec<usize> = (0..num_patches).collect();
    perm.shuffle(&mut seed::derived_rng(shuffle_seed, &[b"jigsaw"]));
    let g = num_patches / k;
    Ok(perm[..g * k].chunks(g).map(|c| c.to_vec()).collect())
}
