//! `metadata.jsonl`: one JSON object per generated image.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::{DamageLabels, Domain, Phase, Split};
use super::record::{ImageRef, SampleRecord};
use crate::synthgen::damage::Dirt;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataRecord {
    pub image: String,
    pub model: String,
    pub instance_id: i64,
    pub phase: Phase,
    pub bent: u8,
    pub broken: u8,
    pub missing: [u8; 5],
    pub dirt: Dirt,
    pub view_index: usize,
    pub background_index: usize,
    pub domain: Domain,
    pub render_index: usize,
    pub split: Split,
}

fn bit(v: u8, field: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::data(format!("`{field}` must be 0 or 1, got {v}"))),
    }
}

impl MetadataRecord {
    pub fn labels(&self) -> Result<DamageLabels> {
        let mut missing = [false; 5];
        for (i, &m) in self.missing.iter().enumerate() {
            missing[i] = bit(m, "missing")?;
        }
        Ok(DamageLabels {
            bent: bit(self.bent, "bent")?,
            broken: bit(self.broken, "broken")?,
            missing,
        })
    }

    pub fn from_record(r: &SampleRecord) -> Self {
        Self {
            image: r.key.clone(),
            model: r.model.clone().unwrap_or_default(),
            instance_id: r.instance_id,
            phase: r.phase,
            bent: r.labels.bent as u8,
            broken: r.labels.broken as u8,
            missing: r.labels.missing.map(|m| m as u8),
            dirt: r.dirt,
            view_index: r.view_index,
            background_index: r.background_index,
            domain: r.domain,
            render_index: r.render_index,
            split: r.split,
        }
    }

    pub fn to_record(&self, dataset_dir: &Path) -> Result<SampleRecord> {
        let record = SampleRecord {
            image: ImageRef::Path(dataset_dir.join(&self.image)),
            key: self.image.clone(),
            instance_id: self.instance_id,
            model: Some(self.model.clone()),
            phase: self.phase,
            labels: self.labels()?,
            dirt: self.dirt,
            view_index: self.view_index,
            background_index: self.background_index,
            render_index: self.render_index,
            domain: self.domain,
            split: self.split,
        };
        if self.domain != Domain::Synthetic {
            return Err(Error::data("metadata.jsonl holds synthetic records only"));
        }
        if self.phase == Phase::NotApplicable {
            return Err(Error::data("synthetic records must be before or after"));
        }
        record.validate().map_err(|e| Error::data(e.to_string()))?;
        Ok(record)
    }
}

/// Parse one metadata line.
pub fn parse_metadata_line(line: &str) -> Result<MetadataRecord> {
    let rec: MetadataRecord = serde_json::from_str(line)?;
    rec.labels()?;
    Ok(rec)
}

/// Parse a whole metadata document; errors carry 1-based line numbers.
pub fn parse_metadata(text: &str) -> Result<Vec<MetadataRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_metadata_line(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Read `metadata.jsonl` from a dataset directory into sample records.
pub fn read_metadata(dataset_dir: &Path) -> Result<Vec<SampleRecord>> {
    let path = dataset_dir.join("metadata.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_metadata(&text)?
        .iter()
        .enumerate()
        .map(|(i, m)| {
            m.to_record(dataset_dir).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_metadata(path: &Path, records: &[MetadataRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(&buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}
