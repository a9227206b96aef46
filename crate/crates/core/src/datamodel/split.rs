//! ID- and model-level train/val/stress partitioning.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::labels::{Domain, Phase, Split};
use super::record::SampleRecord;
use crate::seed;
use crate::{Error, Result};

/// How many of a model's IDs a split role takes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IdQuota {
    Count(usize),
    Fraction(f64),
    All(AllIds),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllIds {
    All,
}

impl IdQuota {
    pub const ALL: IdQuota = IdQuota::All(AllIds::All);

    fn resolve(self, available: usize) -> Result<usize> {
        match self {
            IdQuota::Count(n) => Ok(n.min(available)),
            IdQuota::Fraction(f) if (0.0..=1.0).contains(&f) => Ok((f * available as f64).round() as usize),
            IdQuota::Fraction(f) => Err(Error::Policy(format!("ID fraction {f} outside [0, 1]"))),
            IdQuota::All(_) => Ok(available),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPolicy {
    pub train_models: Vec<String>,
    /// Subset of `train_models` that also contribute held-out IDs to validation.
    pub val_seen_models: Vec<String>,
    /// Models that appear only in validation.
    pub val_unseen_models: Vec<String>,
    /// Models reserved for the stress test; never seen in train or val.
    pub stress_models: Vec<String>,
    pub train_ids_per_model: IdQuota,
    pub val_seen_ids_per_model: IdQuota,
    pub val_unseen_ids_per_model: IdQuota,
    pub stress_ids_per_model: IdQuota,
    /// Keep one before/after pair per evaluation ID (lowest render indices).
    pub eval_pairs_only: bool,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            train_models: Vec::new(),
            val_seen_models: Vec::new(),
            val_unseen_models: Vec::new(),
            stress_models: Vec::new(),
            train_ids_per_model: IdQuota::ALL,
            val_seen_ids_per_model: IdQuota::Fraction(0.1),
            val_unseen_ids_per_model: IdQuota::ALL,
            stress_ids_per_model: IdQuota::ALL,
            eval_pairs_only: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Train { also_val: bool },
    ValUnseen,
    Stress,
}

impl SplitPolicy {
    /// Every model trains; nothing is held out.
    pub fn all_train(models: &[String]) -> Self {
        Self {
            train_models: models.to_vec(),
            ..Default::default()
        }
    }

    /// The last `stress` models become the stress set, the rest train.
    pub fn holdout(models: &[String], stress: usize) -> Self {
        let cut = models.len().saturating_sub(stress);
        Self {
            train_models: models[..cut].to_vec(),
            stress_models: models[cut..].to_vec(),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.train_models.is_empty() && self.val_unseen_models.is_empty() && self.stress_models.is_empty()
    }

    fn roles(&self) -> Result<BTreeMap<&str, Role>> {
        let mut roles = BTreeMap::new();
        fn assign<'a>(m: &'a str, role: Role, roles: &mut BTreeMap<&'a str, Role>) -> Result<()> {
            if roles.insert(m, role).is_some() {
                return Err(Error::Policy(format!("model `{m}` is assigned to more than one role")));
            }
            Ok(())
        }
        let seen: BTreeSet<&str> = self.val_seen_models.iter().map(String::as_str).collect();
        for m in &self.train_models {
            assign(m, Role::Train { also_val: seen.contains(m.as_str()) }, &mut roles)?;
        }
        for m in &self.val_unseen_models {
            assign(m, Role::ValUnseen, &mut roles)?;
        }
        for m in &self.stress_models {
            assign(m, Role::Stress, &mut roles)?;
        }
        for m in &seen {
            if !matches!(roles.get(m), Some(Role::Train { .. })) {
                return Err(Error::Policy(format!("val_seen model `{m}` is not a train model")));
            }
        }
        Ok(roles)
    }

    pub fn validate(&self) -> Result<()> {
        self.roles().map(|_| ())
    }
}

/// Assign `split` to every synthetic record. Real records pass through untouched.
///
/// Each model's IDs are shuffled with a seed derived from `(seed, model)`, so the
/// assignment of one model does not depend on which other models are present.
pub fn split_dataset(records: &[SampleRecord], policy: &SplitPolicy, seed: u64) -> Result<Vec<SampleRecord>> {
    let roles = policy.roles()?;
    let mut ids_by_model: BTreeMap<&str, BTreeSet<i64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.domain == Domain::Synthetic) {
        let model = r
            .model
            .as_deref()
            .ok_or_else(|| Error::data(format!("synthetic record `{}` has no model", r.key)))?;
        if !roles.contains_key(model) {
            return Err(Error::Policy(format!("model `{model}` has no role in the split policy")));
        }
        ids_by_model.entry(model).or_default().insert(r.instance_id);
    }

    let mut id_split: BTreeMap<i64, Split> = BTreeMap::new();
    for (model, ids) in &ids_by_model {
        let mut ids: Vec<i64> = ids.iter().copied().collect();
        let mut rng = seed::derived_rng(seed, &[b"split", model.as_bytes()]);
        ids.shuffle(&mut rng);
        let mut plan: Vec<(Split, usize)> = Vec::new();
        let mut remaining = ids.len();
        let mut take = |split: Split, quota: IdQuota, plan: &mut Vec<(Split, usize)>| -> Result<()> {
            let n = quota.resolve(remaining)?;
            remaining -= n;
            plan.push((split, n));
            Ok(())
        };
        match roles[model] {
            Role::Train { also_val } => {
                if also_val {
                    take(Split::Val, policy.val_seen_ids_per_model, &mut plan)?;
                }
                take(Split::Train, policy.train_ids_per_model, &mut plan)?;
            }
            Role::ValUnseen => take(Split::Val, policy.val_unseen_ids_per_model, &mut plan)?,
            Role::Stress => take(Split::Stress, policy.stress_ids_per_model, &mut plan)?,
        }
        let mut it = ids.into_iter();
        for (split, n) in plan {
            for id in it.by_ref().take(n) {
                id_split.insert(id, split);
            }
        }
        for id in it {
            id_split.insert(id, Split::Unused);
        }
    }

    let mut out: Vec<SampleRecord> = records.to_vec();
    for r in out.iter_mut().filter(|r| r.domain == Domain::Synthetic) {
        r.split = id_split[&r.instance_id];
    }

    if policy.eval_pairs_only {
        // keep the lowest-index before and after render of each evaluation ID
        let mut keep: BTreeMap<(i64, bool), (usize, &str)> = BTreeMap::new();
        for r in out.iter().filter(|r| matches!(r.split, Split::Val | Split::Stress)) {
            let k = (r.instance_id, r.phase == Phase::After);
            let cand = (r.render_index, r.key.as_str());
            keep.entry(k).and_modify(|c| *c = (*c).min(cand)).or_insert(cand);
        }
        let keep: BTreeSet<String> = keep.values().map(|(_, key)| key.to_string()).collect();
        for r in out.iter_mut() {
            if matches!(r.split, Split::Val | Split::Stress) && !keep.contains(&r.key) {
                r.split = Split::Unused;
            }
        }
    }
    Ok(out)
}

/// `splits.json` sidecar: image key → split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsFile {
    pub format_version: u32,
    pub seed: u64,
    pub assignments: BTreeMap<String, Split>,
}

impl SplitsFile {
    pub const VERSION: u32 = 1;

    pub fn from_records(records: &[SampleRecord], seed: u64) -> Self {
        Self {
            format_version: Self::VERSION,
            seed,
            assignments: records.iter().map(|r| (r.key.clone(), r.split)).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: SplitsFile = serde_json::from_str(text)?;
        if f.format_version != Self::VERSION {
            return Err(Error::data(format!("unsupported splits.json version {}", f.format_version)));
        }
        Ok(f)
    }

    /// Overwrite each record's split with its assignment, when present.
    pub fn apply(&self, records: &mut [SampleRecord]) {
        for r in records {
            if let Some(s) = self.assignments.get(&r.key) {
                r.split = *s;
            }
        }
    }
}

pub fn write_splits(path: &Path, records: &[SampleRecord], seed: u64) -> Result<()> {
    let text = serde_json::to_string_pretty(&SplitsFile::from_records(records, seed))?;
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_splits(path: &Path) -> Result<SplitsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    SplitsFile::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::labels::DamageLabels;
    use crate::datamodel::record::ImageRef;
    use crate::synthgen::damage::Dirt;
    use std::path::PathBuf;

    /// Metadata-only population: `ids` IDs per model, `renders` renders per ID.
    pub(crate) fn population(models: &[String], ids: usize, renders: usize) -> Vec<SampleRecord> {
        let mut out = Vec::new();
        let mut next_id = 0i64;
        for m in models {
            for _ in 0..ids {
                for r in 0..renders {
                    let phase = if r < renders / 2 { Phase::Before } else { Phase::After };
                    let key = format!("{next_id}_{}_{r}.png", phase.as_str());
                    out.push(SampleRecord {
                        image: ImageRef::Path(PathBuf::from(&key)),
                        key,
                        instance_id: next_id,
                        model: Some(m.clone()),
                        phase,
                        labels: DamageLabels::default(),
                        dirt: Dirt::None,
                        view_index: 0,
                        background_index: 0,
                        render_index: r,
                        domain: Domain::Synthetic,
                        split: Split::Train,
                    });
                }
                next_id += 1;
            }
        }
        out
    }

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn tally(records: &[SampleRecord], split: Split) -> (usize, usize, usize) {
        let rs: Vec<_> = records.iter().filter(|r| r.split == split).collect();
        let ids: BTreeSet<i64> = rs.iter().map(|r| r.instance_id).collect();
        let models: BTreeSet<&str> = rs.iter().map(|r| r.model.as_deref().unwrap()).collect();
        (rs.len(), ids.len(), models.len())
    }

    #[test]
    fn paper_scale_split_counts() {
        let train = names("train", 14);
        let unseen = names("unseen", 3);
        let stress = names("stress", 3);
        let all: Vec<String> = train.iter().chain(&unseen).chain(&stress).cloned().collect();
        let records = population(&all, 150, 14);
        let policy = SplitPolicy {
            train_models: train.clone(),
            val_seen_models: train[..9].to_vec(),
            val_unseen_models: unseen,
            stress_models: stress,
            train_ids_per_model: IdQuota::Count(131),
            val_seen_ids_per_model: IdQuota::Count(16),
            val_unseen_ids_per_model: IdQuota::Count(140),
            stress_ids_per_model: IdQuota::Count(140),
            eval_pairs_only: true,
        };
        let out = split_dataset(&records, &policy, 0).unwrap();
        assert_eq!(tally(&out, Split::Train), (25_676, 1_834, 14));
        assert_eq!(tally(&out, Split::Val), (1_128, 564, 12));
        assert_eq!(tally(&out, Split::Stress), (840, 420, 3));
    }

    #[test]
    fn ids_are_disjoint_and_deterministic() {
        let models = names("m", 4);
        let records = population(&models, 10, 4);
        let mut policy = SplitPolicy::holdout(&models, 1);
        policy.val_seen_models = vec![models[0].clone()];
        policy.val_seen_ids_per_model = IdQuota::Fraction(0.3);
        let a = split_dataset(&records, &policy, 5).unwrap();
        assert_eq!(a, split_dataset(&records, &policy, 5).unwrap());
        let mut by_id: BTreeMap<i64, BTreeSet<Split>> = BTreeMap::new();
        for r in &a {
            by_id.entry(r.instance_id).or_default().insert(r.split);
        }
        for splits in by_id.values() {
            let evaluated: Vec<_> = splits.iter().filter(|s| **s != Split::Unused).collect();
            assert!(evaluated.len() <= 1, "{splits:?}");
        }
        for r in a.iter().filter(|r| r.split == Split::Stress) {
            assert_eq!(r.model.as_deref(), Some("m3"));
        }
        assert!(a.iter().any(|r| r.split == Split::Val));
    }

    #[test]
    fn empty_unseen_list_gives_seen_only_validation() {
        let models = names("m", 3);
        let records = population(&models, 10, 2);
        let policy = SplitPolicy {
            train_models: models.clone(),
            val_seen_models: models.clone(),
            ..Default::default()
        };
        let out = split_dataset(&records, &policy, 1).unwrap();
        assert!(out.iter().filter(|r| r.split == Split::Val).all(|r| models.contains(r.model.as_ref().unwrap())));
        assert_eq!(tally(&out, Split::Val).1, 3);
    }

    #[test]
    fn conflicting_roles_rejected() {
        let models = names("m", 2);
        let policy = SplitPolicy {
            train_models: models.clone(),
            stress_models: vec![models[0].clone()],
            ..Default::default()
        };
        assert!(matches!(policy.validate(), Err(Error::Policy(_))));
        let records = population(&names("x", 1), 2, 2);
        assert!(split_dataset(&records, &SplitPolicy::all_train(&models), 0).is_err());
    }

    #[test]
    fn quota_deserialises_from_toml() {
        #[derive(Deserialize)]
        struct Q {
            a: IdQuota,
            b: IdQuota,
            c: IdQuota,
        }
        let q: Q = toml::from_str("a = 16\nb = 0.25\nc = \"all\"").unwrap();
        assert_eq!(q.a, IdQuota::Count(16));
        assert_eq!(q.b, IdQuota::Fraction(0.25));
        assert_eq!(q.c, IdQuota::ALL);
    }
}
