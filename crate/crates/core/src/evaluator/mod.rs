//! Evaluation: embedding and damage-score inference, retrieval metrics,
//! per-label AUROC, multi-run reports, retrieval grids and embedding export.

pub mod metrics;
pub mod retrieval;

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{auroc, cmc_at_k, cosine_distance, distance_matrix, label_aurocs, mean_ap, rank_from_distances, rank_queries, LabelAurocs, RankingResult};
pub use retrieval::{retrieval_grid, retrieval_rows, retrieval_table, RetrievalHit, RetrievalRow};

use crate::datamodel::gallery::{build_query_gallery, QueryGallery};
use crate::datamodel::labels::{Domain, DAMAGE_LABEL_NAMES};
use crate::datamodel::record::SampleRecord;
use crate::imageio::FloatImage;
use crate::model::layers::l2_normalize;
use crate::model::{Batch, CheckpointHeader, Tasks, TransReid};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
pub const CMC_RANKS: [usize; 3] = [1, 5, 10];
const INFERENCE_BATCH: usize = 32;

/// Network outputs for a list of records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inference {
    /// L2-normalised retrieval embeddings, when the network has ReID branches.
    pub embeddings: Option<Vec<Vec<f64>>>,
    /// Sigmoid damage probabilities in head order, when it has a damage branch.
    pub damage_scores: Option<Vec<Vec<f64>>>,
}

/// Run the network in inference mode over `records`, in order.
pub fn infer(model: &TransReid, header: &CheckpointHeader, records: &[SampleRecord]) -> Result<Inference> {
    let cfg = model.config();
    let tasks = model.available(Tasks::ALL);
    let mut out = Inference {
        embeddings: tasks.reid.then(Vec::new),
        damage_scores: tasks.damage.then(Vec::new),
    };
    for chunk in records.chunks(INFERENCE_BATCH) {
        let images: Vec<FloatImage> = chunk
            .par_iter()
            .map(|r| r.image.load(Some(cfg.image_size)))
            .collect::<Result<_>>()?;
        let refs: Vec<&FloatImage> = images.iter().collect();
        let cams: Vec<usize> = chunk.iter().map(|r| r.view_index).collect();
        let batch = Batch::from_images(&refs, &cams, &header.normalization, cfg, model.dtype())?;
        let res = model.forward(&batch, tasks, header.inference_shuffle_seed, false)?;
        if let (Some(acc), Some(g)) = (out.embeddings.as_mut(), res.global_feat) {
            let mut parts = vec![g];
            parts.extend(res.local_feats);
            let e = l2_normalize(&Tensor::cat(&parts, 1)?)?;
            acc.extend(e.to_dtype(DType::F64)?.to_vec2::<f64>()?);
        }
        if let (Some(acc), Some(l)) = (out.damage_scores.as_mut(), res.damage_logits) {
            let p = candle_nn::ops::sigmoid(&l.to_dtype(DType::F64)?)?;
            acc.extend(p.to_vec2::<f64>()?);
        }
    }
    Ok(out)
}

/// Rankings of every query against the gallery, plus the embeddings used.
#[derive(Debug, Clone)]
pub struct ReidRun {
    pub rankings: Vec<RankingResult>,
    pub query_embeddings: Vec<Vec<f64>>,
    pub gallery_embeddings: Vec<Vec<f64>>,
}

pub fn run_reid(model: &TransReid, header: &CheckpointHeader, qg: &QueryGallery) -> Result<ReidRun> {
    let q = infer(model, header, &qg.queries)?
        .embeddings
        .ok_or_else(|| Error::contract("model has no re-identification branches"))?;
    let g = infer(model, header, &qg.gallery)?.embeddings.expect("same model");
    let qids: Vec<i64> = qg.queries.iter().map(|r| r.instance_id).collect();
    let gids: Vec<i64> = qg.gallery.iter().map(|r| r.instance_id).collect();
    Ok(ReidRun {
        rankings: rank_queries(&q, &qids, &g, &gids)?,
        query_embeddings: q,
        gallery_embeddings: g,
    })
}

/// Mean and sample standard deviation over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        // offset by the first value so identical runs reproduce it exactly
        let first = values.first().copied().unwrap_or(f64::NAN);
        let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            runs: values.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReidSection {
    pub queries: usize,
    pub gallery: usize,
    pub excluded_ids: Vec<i64>,
    pub map: Stat,
    pub cmc1: Stat,
    pub cmc5: Stat,
    pub cmc10: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageSection {
    pub samples: usize,
    pub auroc_macro: Option<Stat>,
    pub auroc_bent: Option<Stat>,
    pub auroc_broken: Option<Stat>,
    /// Every label by name; `None` where only one class is present.
    pub auroc_per_label: BTreeMap<String, Option<Stat>>,
    /// Labels left out of the macro mean.
    pub excluded_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub train_mode: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub split: String,
    pub runs: Vec<RunInfo>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reid: Option<ReidSection>,
    /// Damage detection on synthetic images.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub damage: Option<DamageSection>,
    /// Damage detection on real photographs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub real_damage: Option<DamageSection>,
    pub notices: Vec<String>,
}

impl MetricReport {
    /// Flat `key → mean` view with the stable key names.
    pub fn summary(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Some(r) = &self.reid {
            out.insert("map".into(), r.map.mean);
            out.insert("cmc1".into(), r.cmc1.mean);
            out.insert("cmc5".into(), r.cmc5.mean);
            out.insert("cmc10".into(), r.cmc10.mean);
        }
        for (prefix, sec) in [("", &self.damage), ("real_", &self.real_damage)] {
            let Some(d) = sec else { continue };
            let mut put = |k: &str, s: &Option<Stat>| {
                if let Some(s) = s {
                    out.insert(format!("{prefix}{k}"), s.mean);
                }
            };
            put("auroc_macro", &d.auroc_macro);
            put("auroc_bent", &d.auroc_bent);
            put("auroc_broken", &d.auroc_broken);
            for (name, s) in &d.auroc_per_label {
                put(&format!("auroc.{name}"), s);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn damage_section(per_run: &[LabelAurocs], samples: usize) -> DamageSection {
    let stat = |f: &dyn Fn(&LabelAurocs) -> Option<f64>| -> Option<Stat> {
        let v: Option<Vec<f64>> = per_run.iter().map(f).collect();
        v.map(|v| Stat::of(&v))
    };
    let first = &per_run[0];
    DamageSection {
        samples,
        auroc_macro: stat(&|a| a.macro_mean),
        auroc_bent: stat(&|a| a.per_label[0]),
        auroc_broken: stat(&|a| a.per_label[1]),
        auroc_per_label: DAMAGE_LABEL_NAMES
            .iter()
            .enumerate()
            .map(|(j, name)| (name.to_string(), stat(&|a| a.per_label[j])))
            .collect(),
        excluded_labels: first.excluded.iter().map(|&j| DAMAGE_LABEL_NAMES[j].to_string()).collect(),
    }
}

fn damage_aurocs(model: &TransReid, header: &CheckpointHeader, records: &[SampleRecord]) -> Result<Option<LabelAurocs>> {
    let Some(scores) = infer(model, header, records)?.damage_scores else {
        return Ok(None);
    };
    let labels: Vec<Vec<bool>> = records
        .iter()
        .map(|r| r.labels.to_vector().iter().map(|&v| v > 0.5).collect())
        .collect();
    Ok(Some(label_aurocs(&scores, &labels)))
}

/// Evaluate one or more trained networks (e.g. one per training seed) on a
/// split. Synthetic records feed the retrieval protocol and synthetic damage
/// AUROC; real records feed real damage AUROC only.
pub fn evaluate(
    runs: &[(&CheckpointHeader, &TransReid)],
    split: &str,
    synthetic: &[SampleRecord],
    real: &[SampleRecord],
) -> Result<MetricReport> {
    if runs.is_empty() {
        return Err(Error::config("no checkpoints to evaluate"));
    }
    if synthetic.iter().any(|r| r.domain != Domain::Synthetic) || real.iter().any(|r| r.domain != Domain::Real) {
        return Err(Error::contract("evaluation records are grouped by the wrong domain"));
    }
    let mut notices = Vec::new();
    let qg = build_query_gallery(synthetic);
    if !qg.excluded_ids.is_empty() {
        notices.push(format!("{} identities without a before image were excluded", qg.excluded_ids.len()));
    }
    let has_reid = runs.iter().all(|(_, m)| m.available(Tasks::ALL).reid);
    let has_damage = runs.iter().all(|(_, m)| m.available(Tasks::ALL).damage);

    let reid = if qg.is_empty() {
        notices.push("no before/after pairs in the split; re-identification section omitted".into());
        None
    } else if !has_reid {
        notices.push("networks lack re-identification branches; re-identification section omitted".into());
        None
    } else {
        let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (h, m) in runs {
            let r = run_reid(m, h, &qg)?.rankings;
            values.entry("map").or_default().push(mean_ap(&r)?);
            for (k, name) in CMC_RANKS.iter().zip(["cmc1", "cmc5", "cmc10"]) {
                values.entry(name).or_default().push(cmc_at_k(&r, *k)?);
            }
        }
        Some(ReidSection {
            queries: qg.queries.len(),
            gallery: qg.gallery.len(),
            excluded_ids: qg.excluded_ids.clone(),
            map: Stat::of(&values["map"]),
            cmc1: Stat::of(&values["cmc1"]),
            cmc5: Stat::of(&values["cmc5"]),
            cmc10: Stat::of(&values["cmc10"]),
        })
    };

    let mut section = |records: &[SampleRecord], what: &str| -> Result<Option<DamageSection>> {
        if records.is_empty() {
            return Ok(None);
        }
        if !has_damage {
            notices.push(format!("networks lack a damage branch; {what} damage section omitted"));
            return Ok(None);
        }
        let per_run = runs
            .iter()
            .map(|(h, m)| damage_aurocs(m, h, records).map(|a| a.expect("damage branch present")))
            .collect::<Result<Vec<_>>>()?;
        let sec = damage_section(&per_run, records.len());
        if !sec.excluded_labels.is_empty() {
            notices.push(format!(
                "{what} labels with a single class, excluded from the macro mean: {}",
                sec.excluded_labels.join(", ")
            ));
        }
        Ok(Some(sec))
    };
    let damage = section(synthetic, "synthetic")?;
    let real_damage = section(real, "real")?;
    for n in &notices {
        log::warn!("{n}");
    }
    Ok(MetricReport {
        format_version: REPORT_VERSION,
        split: split.to_string(),
        runs: runs
            .iter()
            .map(|(h, _)| RunInfo {
                train_mode: h.train_mode.clone(),
                seed: h.training.get("seed").and_then(|s| s.as_u64()),
            })
            .collect(),
        reid,
        damage,
        real_damage,
        notices,
    })
}

/// Write embeddings as CSV: `key,id,e0,e1,...`.
pub fn write_embeddings(path: &Path, records: &[SampleRecord], embeddings: &[Vec<f64>]) -> Result<()> {
    if records.len() != embeddings.len() {
        return Err(Error::contract("one embedding per record is required"));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["key".to_string(), "id".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    let csv_err = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for (r, e) in records.iter().zip(embeddings) {
        let mut row = vec![r.key.clone(), r.instance_id.to_string()];
        row.extend(e.iter().map(|v| format!("{v:.9}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
