//! Whole-dataset generation: instances, damage, renders, metadata, splits and manifest.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::damage::{sample_damage, DamageProbabilities, DamageState};
use super::instance::{sample_instance, BikeInstance};
use super::library::ModelLibrary;
use super::render::{RenderConfig, Renderer};
use crate::datamodel::labels::{Domain, Phase, Split};
use crate::datamodel::metadata::{write_metadata, MetadataRecord};
use crate::datamodel::normalize::{compute_normalization, NormStats};
use crate::datamodel::record::{ImageRef, SampleRecord};
use crate::datamodel::split::{split_dataset, write_splits, SplitPolicy};
use crate::imageio;
use crate::seed::derive_seed;
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Give up on finding an unused material assignment after this many redraws.
const MAX_MATERIAL_ATTEMPTS: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Models to generate, in order; empty means every library model.
    pub models: Vec<String>,
    pub ids_per_model: usize,
    /// Renders per identity, split evenly into before and after.
    pub renders_per_id: usize,
    pub probs: DamageProbabilities,
    pub render: RenderConfig,
    /// Empty policy puts every model in train.
    pub split: SplitPolicy,
    /// Alternative geometry library (TOML); the built-in one otherwise.
    pub library: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            ids_per_model: 140,
            renders_per_id: 14,
            probs: DamageProbabilities::default(),
            render: RenderConfig::default(),
            split: SplitPolicy::default(),
            library: None,
        }
    }
}

impl GenConfig {
    pub fn load_library(&self) -> Result<ModelLibrary> {
        match &self.library {
            Some(p) => ModelLibrary::load(p),
            None => Ok(ModelLibrary::builtin()),
        }
    }

    pub fn validate(&self, library: &ModelLibrary) -> Result<()> {
        if self.renders_per_id == 0 || !self.renders_per_id.is_multiple_of(2) {
            return Err(Error::config(format!(
                "renders_per_id must be a positive even number, got {}",
                self.renders_per_id
            )));
        }
        if self.ids_per_model == 0 {
            return Err(Error::config("ids_per_model must be positive"));
        }
        self.probs.validate()?;
        self.render.validate()?;
        self.split.validate()?;
        for m in self.model_names(library) {
            library.get(&m)?;
        }
        Ok(())
    }

    pub fn model_names(&self, library: &ModelLibrary) -> Vec<String> {
        if self.models.is_empty() {
            library.names()
        } else {
            self.models.clone()
        }
    }

    fn policy(&self, library: &ModelLibrary) -> SplitPolicy {
        if self.split.is_empty() {
            SplitPolicy::all_train(&self.model_names(library))
        } else {
            self.split.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub images: usize,
    pub ids: usize,
    pub models: usize,
    pub before: usize,
    pub after: usize,
    /// Images per split.
    pub splits: BTreeMap<String, usize>,
}

impl DatasetCounts {
    pub fn of(records: &[SampleRecord]) -> Self {
        let mut c = Self {
            images: records.len(),
            ids: records.iter().map(|r| r.instance_id).collect::<HashSet<_>>().len(),
            models: records.iter().filter_map(|r| r.model.as_deref()).collect::<HashSet<_>>().len(),
            ..Default::default()
        };
        for r in records {
            match r.phase {
                Phase::Before => c.before += 1,
                Phase::After => c.after += 1,
                Phase::NotApplicable => {}
            }
            *c.splits.entry(r.split.as_str().to_string()).or_default() += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub config: GenConfig,
    pub counts: DatasetCounts,
    /// Pixel statistics of the synthetic training split at the rendered size.
    pub normalization: Option<NormStats>,
}

impl DatasetManifest {
    pub fn read(dataset_dir: &Path) -> Result<Self> {
        let path = dataset_dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::data(format!("unsupported manifest version {}", m.format_version)));
        }
        Ok(m)
    }
}

/// One identity with every render's damage state, before any pixels exist.
#[derive(Debug, Clone)]
pub struct PlannedIdentity {
    pub instance: BikeInstance,
    pub id_seed: u64,
    pub damages: Vec<DamageState>,
}

impl PlannedIdentity {
    pub fn render_seed(&self, render_index: usize) -> u64 {
        derive_seed(self.id_seed, &[b"render", &(render_index as u64).to_le_bytes()])
    }
}

/// Sample instances and damage for every identity without rendering.
///
/// Instances of one model are drawn in index order; a draw that repeats an
/// earlier material assignment is redrawn with an incremented attempt counter.
/// Each model's draws depend only on `(master_seed, model)`.
pub fn plan_dataset(cfg: &GenConfig, library: &ModelLibrary, master_seed: u64) -> Result<Vec<PlannedIdentity>> {
    cfg.validate(library)?;
    let models = cfg.model_names(library);
    let per_model: Vec<Vec<PlannedIdentity>> = models
        .par_iter()
        .enumerate()
        .map(|(m_idx, model)| {
            let mut used = HashSet::new();
            let mut out = Vec::with_capacity(cfg.ids_per_model);
            for idx in 0..cfg.ids_per_model {
                let id_seed = derive_seed(master_seed, &[model.as_bytes(), &(idx as u64).to_le_bytes()]);
                let mut attempt = 0u64;
                let mut instance = loop {
                    let s = if attempt == 0 {
                        id_seed
                    } else {
                        derive_seed(id_seed, &[b"redraw", &attempt.to_le_bytes()])
                    };
                    let inst = sample_instance(library, model, s)?;
                    if used.insert(inst.material_key()) {
                        break inst;
                    }
                    attempt += 1;
                    if attempt >= MAX_MATERIAL_ATTEMPTS {
                        return Err(Error::config(format!("could not find {} distinct materials for `{model}`", cfg.ids_per_model)));
                    }
                };
                instance.instance_id = (m_idx * cfg.ids_per_model + idx) as i64;
                let half = cfg.renders_per_id / 2;
                let damages = (0..cfg.renders_per_id)
                    .map(|r| {
                        let phase = if r < half { Phase::Before } else { Phase::After };
                        sample_damage(phase, derive_seed(id_seed, &[b"damage", &(r as u64).to_le_bytes()]), &cfg.probs)
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(PlannedIdentity { instance, id_seed, damages });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_model.into_iter().flatten().collect())
}

fn file_stem(id: i64, phase: Phase, render_index: usize) -> String {
    format!("{id}_{}_{render_index}", phase.as_str())
}

/// Generate a dataset into `out_dir`: images, optional segmentation,
/// `metadata.jsonl`, `splits.json` and `manifest.json`.
pub fn generate_dataset(cfg: &GenConfig, master_seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    let library = cfg.load_library()?;
    let plan = plan_dataset(cfg, &library, master_seed)?;
    let renderer = Renderer::new(library.clone(), cfg.render.clone())?;

    // records first (views and backgrounds come from the renderer, filled in below)
    let mut records = Vec::with_capacity(plan.len() * cfg.renders_per_id);
    for p in &plan {
        for (r, d) in p.damages.iter().enumerate() {
            let stem = file_stem(p.instance.instance_id, d.phase, r);
            records.push(SampleRecord {
                image: ImageRef::Path(PathBuf::from(&stem)),
                key: stem,
                instance_id: p.instance.instance_id,
                model: Some(p.instance.model_name.clone()),
                phase: d.phase,
                labels: d.labels(),
                dirt: d.dirt,
                view_index: 0,
                background_index: 0,
                render_index: r,
                domain: Domain::Synthetic,
                split: Split::Train,
            });
        }
    }
    let mut records = split_dataset(&records, &cfg.policy(&library), master_seed)?;

    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e));
    mkdir(out_dir)?;
    let splits_used: std::collections::BTreeSet<Split> = records.iter().map(|r| r.split).collect();
    for s in &splits_used {
        mkdir(&out_dir.join("images").join(s.as_str()))?;
        if cfg.render.emit_segmentation {
            mkdir(&out_dir.join("seg").join(s.as_str()))?;
        }
    }

    let per_id = cfg.renders_per_id;
    let rendered: Vec<(usize, usize)> = records
        .par_iter_mut()
        .enumerate()
        .map(|(i, rec)| {
            let p = &plan[i / per_id];
            let r = i % per_id;
            let out = renderer.render(&p.instance, &p.damages[r], p.render_seed(r))?;
            let rel = format!("images/{}/{}.png", rec.split.as_str(), rec.key);
            imageio::save_rgb(&out.image, &out_dir.join(&rel))?;
            if let Some(seg) = &out.segmentation {
                imageio::save_gray(seg, &out_dir.join(format!("seg/{}/{}.png", rec.split.as_str(), rec.key)))?;
            }
            rec.image = ImageRef::Path(out_dir.join(&rel));
            rec.key = rel;
            Ok((out.view_index, out.background_index))
        })
        .collect::<Result<_>>()?;
    for (rec, (view, bg)) in records.iter_mut().zip(rendered) {
        rec.view_index = view;
        rec.background_index = bg;
    }

    let meta: Vec<MetadataRecord> = records.iter().map(MetadataRecord::from_record).collect();
    write_metadata(&out_dir.join("metadata.jsonl"), &meta)?;
    write_splits(&out_dir.join("splits.json"), &records, master_seed)?;

    let normalization = if records.iter().any(|r| r.split == Split::Train) {
        Some(compute_normalization(&records, None)?)
    } else {
        None
    };
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        master_seed,
        config: cfg.clone(),
        counts: DatasetCounts::of(&records),
        normalization,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    log::info!("generated {} images into {}", records.len(), out_dir.display());
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::render::BackgroundMode;

    fn small(models: usize, ids: usize, renders: usize) -> GenConfig {
        let lib = ModelLibrary::builtin();
        GenConfig {
            models: lib.names().into_iter().take(models).collect(),
            ids_per_model: ids,
            renders_per_id: renders,
            render: RenderConfig {
                image_size: 32,
                background_mode: BackgroundMode::Uniform,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn odd_render_count_rejected() {
        let cfg = small(1, 1, 3);
        assert!(matches!(plan_dataset(&cfg, &ModelLibrary::builtin(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn plan_is_half_before_half_after_and_materials_unique() {
        let cfg = small(4, 10, 4);
        let plan = plan_dataset(&cfg, &ModelLibrary::builtin(), 9).unwrap();
        assert_eq!(plan.len(), 40);
        let phases: Vec<Phase> = plan.iter().flat_map(|p| p.damages.iter().map(|d| d.phase)).collect();
        assert_eq!(phases.iter().filter(|p| **p == Phase::Before).count(), 80);
        assert_eq!(phases.iter().filter(|p| **p == Phase::After).count(), 80);
        let keys: HashSet<_> = plan.iter().map(|p| p.instance.material_key()).collect();
        assert_eq!(keys.len(), 40);
    }

    #[test]
    fn model_plan_independent_of_other_models() {
        let lib = ModelLibrary::builtin();
        let names = lib.names();
        let mut a = small(0, 5, 2);
        a.models = vec![names[0].clone(), names[1].clone()];
        let mut b = a.clone();
        b.models = vec![names[1].clone()];
        let pa = plan_dataset(&a, &lib, 4).unwrap();
        let pb = plan_dataset(&b, &lib, 4).unwrap();
        let strip = |p: &PlannedIdentity| (p.instance.material_key(), p.id_seed, p.damages.clone());
        assert_eq!(pa[5..].iter().map(strip).collect::<Vec<_>>(), pb.iter().map(strip).collect::<Vec<_>>());
    }

    #[test]
    fn writes_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(2, 2, 2);
        let m = generate_dataset(&cfg, 1, dir.path()).unwrap();
        assert_eq!(m.counts.images, 8);
        assert_eq!(m.counts.before, 4);
        assert!(dir.path().join("metadata.jsonl").is_file());
        assert!(dir.path().join("splits.json").is_file());
        assert!(dir.path().join("images/train/0_before_0.png").is_file());
        assert!(dir.path().join("seg/train/0_before_0.png").is_file());
        assert_eq!(DatasetManifest::read(dir.path()).unwrap(), m);
    }
}
