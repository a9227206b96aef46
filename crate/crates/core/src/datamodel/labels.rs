//! Label vocabulary shared by the generator, the model and the evaluator.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Removable parts, in the fixed order used by every label vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    FrontWheel,
    RearWheel,
    Seat,
    Handlebar,
    Pedals,
}

impl Part {
    pub const ALL: [Part; 5] = [
        Part::FrontWheel,
        Part::RearWheel,
        Part::Seat,
        Part::Handlebar,
        Part::Pedals,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::FrontWheel => "front_wheel",
            Part::RearWheel => "rear_wheel",
            Part::Seat => "seat",
            Part::Handlebar => "handlebar",
            Part::Pedals => "pedals",
        }
    }
}

/// Names of the seven damage outputs, in head order.
pub const DAMAGE_LABEL_NAMES: [&str; 7] = [
    "bent",
    "broken",
    "front_wheel",
    "rear_wheel",
    "seat",
    "handlebar",
    "pedals",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "before")]
    Before,
    #[serde(rename = "after")]
    After,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Before => "before",
            Phase::After => "after",
            Phase::NotApplicable => "n/a",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Stress,
    RealTrain,
    RealVal,
    RealTest,
    /// Held back by the split policy (e.g. surplus renders of evaluation IDs).
    Unused,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Stress => "stress",
            Split::RealTrain => "real_train",
            Split::RealVal => "real_val",
            Split::RealTest => "real_test",
            Split::Unused => "unused",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        Ok(match s {
            "train" => Split::Train,
            "val" => Split::Val,
            "stress" => Split::Stress,
            "real_train" => Split::RealTrain,
            "real_val" => Split::RealVal,
            "real_test" => Split::RealTest,
            "unused" => Split::Unused,
            other => return Err(Error::config(format!("unknown split `{other}`"))),
        })
    }
}

/// The seven binary damage attributes: frame bent, frame broken, and one
/// missing flag per [`Part`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DamageLabels {
    pub bent: bool,
    pub broken: bool,
    pub missing: [bool; 5],
}

impl DamageLabels {
    /// Labels as a 7-vector in head order (bent, broken, parts...).
    pub fn to_vector(&self) -> [f32; 7] {
        let mut out = [0f32; 7];
        out[0] = self.bent as u8 as f32;
        out[1] = self.broken as u8 as f32;
        for (i, &m) in self.missing.iter().enumerate() {
            out[2 + i] = m as u8 as f32;
        }
        out
    }

    pub fn frame_damaged(&self) -> bool {
        self.bent || self.broken
    }
}

/// Encode missing parts as a 5-character string, `'1'` marking a missing part.
pub fn encode_missing_parts(labels: &DamageLabels) -> String {
    labels.missing.iter().map(|&m| if m { '1' } else { '0' }).collect()
}

/// Inverse of [`encode_missing_parts`].
pub fn decode_missing_parts(s: &str) -> Result<[bool; 5]> {
    let bytes = s.as_bytes();
    if bytes.len() != 5 {
        return Err(Error::data(format!(
            "missing-part string `{s}` must have exactly 5 characters"
        )));
    }
    let mut out = [false; 5];
    for (i, b) in bytes.iter().enumerate() {
        out[i] = match b {
            b'0' => false,
            b'1' => true,
            _ => {
                return Err(Error::data(format!(
                    "missing-part string `{s}` contains a non-binary character"
                )))
            }
        };
    }
    Ok(out)
}
