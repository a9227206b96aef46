//! Real-photograph ingestion.
//!
//! The labels table is comma- or tab-separated with the header
//! `image,frame_label,missing`. `frame_label` is one of `normal`, `bent`,
//! `broken`, `bent_broken`; `missing` is the five-character part string.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::labels::{decode_missing_parts, DamageLabels, Domain, Phase, Split};
use super::record::{ImageRef, SampleRecord, REAL_INSTANCE_ID};
use crate::seed;
use crate::synthgen::damage::Dirt;
use crate::synthgen::render::REAL_VIEW_INDEX;
use crate::{Error, Result};

/// Train/val/test proportions for real images.
pub const REAL_SPLIT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLabel {
    Normal,
    Bent,
    Broken,
    BentBroken,
}

impl FrameLabel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "normal" => Ok(Self::Normal),
            "bent" => Ok(Self::Bent),
            "broken" => Ok(Self::Broken),
            "bent_broken" => Ok(Self::BentBroken),
            other => Err(Error::data(format!("unknown frame label `{other}`"))),
        }
    }

    /// `(bent, broken)` bits.
    pub fn bits(self) -> (bool, bool) {
        match self {
            Self::Normal => (false, false),
            Self::Bent => (true, false),
            Self::Broken => (false, true),
            Self::BentBroken => (true, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealLabelRow {
    pub image: String,
    pub frame_label: FrameLabel,
    pub missing: [bool; 5],
}

impl RealLabelRow {
    pub fn labels(&self) -> DamageLabels {
        let (bent, broken) = self.frame_label.bits();
        DamageLabels {
            bent,
            broken,
            missing: self.missing,
        }
    }
}

#[derive(Deserialize)]
struct RawRow {
    image: String,
    frame_label: String,
    missing: String,
}

/// Parse the labels table. The delimiter is a tab when the header line contains one.
pub fn parse_real_labels(text: &str) -> Result<Vec<RealLabelRow>> {
    let header = text.lines().next().unwrap_or("");
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, raw) in reader.deserialize::<RawRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let at = |e: Error| Error::Parse {
            line,
            message: e.to_string(),
        };
        let raw = raw.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if raw.image.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty image path".into(),
            });
        }
        rows.push(RealLabelRow {
            frame_label: FrameLabel::parse(&raw.frame_label).map_err(at)?,
            missing: decode_missing_parts(&raw.missing).map_err(at)?,
            image: raw.image,
        });
    }
    Ok(rows)
}

/// Stratified 7:1.5:1.5 split, by frame label.
///
/// Rows are grouped by label (bent-bearing labels first so the bent
/// positives form a prefix), shuffled within each group, and then dealt out
/// by always giving the next row to the split furthest below its quota.
/// Every prefix of the dealt sequence is therefore within one sample of the
/// target proportions.
pub fn stratified_real_split(rows: &[RealLabelRow], seed: u64) -> Vec<Split> {
    let order_key = |l: FrameLabel| match l {
        FrameLabel::BentBroken => 0,
        FrameLabel::Bent => 1,
        FrameLabel::Broken => 2,
        FrameLabel::Normal => 3,
    };
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| (order_key(rows[i].frame_label), i));
    let mut rng = seed::derived_rng(seed, &[b"real-split"]);
    let mut start = 0;
    while start < order.len() {
        let key = order_key(rows[order[start]].frame_label);
        let end = start + order[start..].iter().take_while(|&&i| order_key(rows[i].frame_label) == key).count();
        order[start..end].shuffle(&mut rng);
        start = end;
    }
    let splits = [Split::RealTrain, Split::RealVal, Split::RealTest];
    let mut counts = [0usize; 3];
    let mut out = vec![Split::RealTrain; rows.len()];
    for (n, &i) in order.iter().enumerate() {
        let target = (n + 1) as f64;
        let pick = (0..3)
            .max_by(|&a, &b| {
                let da = REAL_SPLIT_RATIOS[a] * target - counts[a] as f64;
                let db = REAL_SPLIT_RATIOS[b] * target - counts[b] as f64;
                // ties go to the earlier split
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        counts[pick] += 1;
        out[i] = splits[pick];
    }
    out
}

/// Read a labels table and turn it into real-domain records with splits assigned.
pub fn ingest_real(image_dir: &Path, labels_file: &Path, seed: u64) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(labels_file)
        .map_err(|e| Error::io(format!("reading {}", labels_file.display()), e))?;
    let rows = parse_real_labels(&text)?;
    for row in &rows {
        let path = image_dir.join(&row.image);
        if !path.is_file() {
            return Err(Error::data(format!("real image {} does not exist", path.display())));
        }
    }
    Ok(real_records(image_dir, &rows, seed))
}

/// Records for already-parsed rows; image paths are resolved against `image_dir`.
pub fn real_records(image_dir: &Path, rows: &[RealLabelRow], seed: u64) -> Vec<SampleRecord> {
    let splits = stratified_real_split(rows, seed);
    rows.iter()
        .zip(splits)
        .enumerate()
        .map(|(i, (row, split))| SampleRecord {
            image: ImageRef::Path(image_dir.join(&row.image)),
            key: format!("real/{}", row.image),
            instance_id: REAL_INSTANCE_ID,
            model: None,
            phase: Phase::NotApplicable,
            labels: row.labels(),
            dirt: Dirt::None,
            view_index: REAL_VIEW_INDEX,
            background_index: 0,
            render_index: i,
            domain: Domain::Real,
            split,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(counts: [(FrameLabel, usize); 4]) -> Vec<RealLabelRow> {
        let mut out = Vec::new();
        for (label, n) in counts {
            for _ in 0..n {
                out.push(RealLabelRow {
                    image: format!("{}.jpg", out.len()),
                    frame_label: label,
                    missing: [false; 5],
                });
            }
        }
        out
    }

    #[test]
    fn parses_csv_and_tsv() {
        let csv = "image,frame_label,missing\na.jpg,bent_broken,10100\nb.jpg,normal,00000\n";
        let tsv = csv.replace(',', "\t");
        for text in [csv.to_string(), tsv] {
            let r = parse_real_labels(&text).unwrap();
            assert_eq!(r.len(), 2);
            let l = r[0].labels();
            assert!(l.bent && l.broken);
            assert_eq!(l.missing, [true, false, true, false, false]);
        }
    }

    #[test]
    fn bad_rows_report_line() {
        let e = parse_real_labels("image,frame_label,missing\na.jpg,normal,00000\nb.jpg,twisted,00000\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_real_labels("image,frame_label,missing\na.jpg,normal,0000\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = parse_real_labels("image,frame_label,missing\na.jpg,normal,00x00\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn paper_sized_corpus_counts() {
        // 64 bent-flagged and 52 broken-flagged out of 6,292, with some overlap
        let rs = rows([
            (FrameLabel::BentBroken, 10),
            (FrameLabel::Bent, 54),
            (FrameLabel::Broken, 42),
            (FrameLabel::Normal, 6_292 - 106),
        ]);
        let recs = real_records(Path::new("img"), &rs, 3);
        assert_eq!(recs.len(), 6_292);
        assert_eq!(recs.iter().filter(|r| r.labels.bent).count(), 64);
        assert_eq!(recs.iter().filter(|r| r.labels.broken).count(), 52);
        assert!(recs.iter().all(|r| r.instance_id == REAL_INSTANCE_ID && r.validate().is_ok()));
    }

    #[test]
    fn stratification_keeps_bent_share_within_one_sample() {
        let rs = rows([
            (FrameLabel::BentBroken, 10),
            (FrameLabel::Bent, 54),
            (FrameLabel::Broken, 42),
            (FrameLabel::Normal, 1_000),
        ]);
        let splits = stratified_real_split(&rs, 11);
        let total_bent = rs.iter().filter(|r| r.labels().bent).count() as f64;
        for (k, s) in [Split::RealTrain, Split::RealVal, Split::RealTest].into_iter().enumerate() {
            let bent = rs.iter().zip(&splits).filter(|(r, sp)| **sp == s && r.labels().bent).count() as f64;
            assert!((bent - REAL_SPLIT_RATIOS[k] * total_bent).abs() <= 1.0, "{s:?}: {bent}");
            let n = splits.iter().filter(|sp| **sp == s).count() as f64;
            assert!((n - REAL_SPLIT_RATIOS[k] * rs.len() as f64).abs() <= 1.0);
        }
        assert_eq!(splits, stratified_real_split(&rs, 11));
    }
}
