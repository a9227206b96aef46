use serde::{Deserialize, Serialize};

use crate::synthgen::render::NUM_CAMERAS;
use crate::{Error, Result};

/// Number of damage outputs: bent, broken and the five part-missing flags.
pub const DAMAGE_OUTPUTS: usize = 7;

/// Which task branches a network carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchSet {
    /// Global, jigsaw and damage branches.
    MultiTask,
    /// Global and jigsaw branches only.
    ReidOnly,
    /// Damage branch only.
    DamageOnly,
}

impl BranchSet {
    pub fn has_reid(self) -> bool {
        !matches!(self, BranchSet::DamageOnly)
    }

    pub fn has_damage(self) -> bool {
        !matches!(self, BranchSet::ReidOnly)
    }
}

/// What the jigsaw branch does when the group count does not divide the patch count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JigsawRemainder {
    /// Refuse the configuration.
    Reject,
    /// Leave the last `N mod k` shuffled tokens out of every group.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub embed_dim: usize,
    /// Total depth: `depth − 1` shared layers plus one dedicated layer per branch.
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub k_groups: usize,
    pub jigsaw_remainder: JigsawRemainder,
    pub num_ids: usize,
    pub num_parts: usize,
    pub num_cameras: usize,
    pub num_models: usize,
    pub branches: BranchSet,
    /// Standard deviation of the truncated-normal weight init.
    pub init_std: f64,
}

impl ModelConfig {
    /// CPU-friendly preset: 64 px input, 10 px patches at stride 6 (100 tokens).
    pub fn desk(num_ids: usize) -> Self {
        Self {
            image_size: 64,
            patch_size: 10,
            patch_stride: 6,
            embed_dim: 192,
            depth: 4,
            num_heads: 3,
            mlp_ratio: 4,
            k_groups: 4,
            jigsaw_remainder: JigsawRemainder::Reject,
            num_ids,
            num_parts: 5,
            num_cameras: NUM_CAMERAS,
            num_models: 0,
            branches: BranchSet::MultiTask,
            init_std: 0.02,
        }
    }

    /// Full-size preset: 256 px input, 16 px patches at stride 12 (441 tokens), ViT-Base width.
    pub fn paper(num_ids: usize) -> Self {
        Self {
            image_size: 256,
            patch_size: 16,
            patch_stride: 12,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            // 441 tokens do not split into 4 groups; the leftover token is dropped
            jigsaw_remainder: JigsawRemainder::Drop,
            ..Self::desk(num_ids)
        }
    }

    /// Look up a preset by name (`desk` or `paper`).
    pub fn preset(name: &str, num_ids: usize) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(num_ids)),
            "paper" => Ok(Self::paper(num_ids)),
            other => Err(Error::config(format!("unknown model preset `{other}`"))),
        }
    }

    /// Patches along one side.
    pub fn grid_side(&self) -> usize {
        (self.image_size - self.patch_size) / self.patch_stride + 1
    }

    /// Patch token count `N` (the sequence is `N + 1` with the class token).
    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// Tokens per jigsaw group.
    pub fn group_len(&self) -> usize {
        self.num_patches() / self.k_groups
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Width of the concatenated retrieval embedding.
    pub fn embedding_dim(&self) -> usize {
        (self.k_groups + 1) * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.patch_size == 0 || self.patch_stride == 0 || self.patch_size > self.image_size {
            return fail(format!(
                "patch size {} / stride {} invalid for image size {}",
                self.patch_size, self.patch_stride, self.image_size
            ));
        }
        if !(self.image_size - self.patch_size).is_multiple_of(self.patch_stride) {
            return fail(format!(
                "(image_size − patch_size) = {} is not divisible by the stride {}",
                self.image_size - self.patch_size,
                self.patch_stride
            ));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.num_heads));
        }
        if self.depth < 2 {
            return fail("depth must be at least 2 (shared layers plus one branch layer)".into());
        }
        if self.k_groups == 0 || self.k_groups > self.num_patches() {
            return fail(format!("{} groups invalid for {} patch tokens", self.k_groups, self.num_patches()));
        }
        if self.jigsaw_remainder == JigsawRemainder::Reject && !self.num_patches().is_multiple_of(self.k_groups) {
            return fail(format!("{} groups do not divide {} patch tokens", self.k_groups, self.num_patches()));
        }
        if self.branches.has_reid() && self.num_ids == 0 {
            return fail("num_ids must be positive when the re-identification branches are present".into());
        }
        if self.num_parts != 5 {
            return fail("num_parts must be 5".into());
        }
        if self.num_cameras == 0 || self.mlp_ratio == 0 {
            return fail("num_cameras and mlp_ratio must be positive".into());
        }
        Ok(())
    }
}
