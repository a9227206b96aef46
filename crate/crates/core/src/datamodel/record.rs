use std::path::PathBuf;
use std::sync::Arc;

use super::labels::{DamageLabels, Domain, Phase, Split};
use crate::imageio::{self, FloatImage};
use crate::synthgen::damage::Dirt;
use crate::{Error, Result};

/// Instance id carried by real photographs, which have no identity label.
pub const REAL_INSTANCE_ID: i64 = -1;

#[derive(Debug, Clone, PartialEq)]
pub enum ImageRef {
    Path(PathBuf),
    Memory(Arc<FloatImage>),
}

impl ImageRef {
    /// Load (or clone) the pixels, resized to `size × size` when given.
    pub fn load(&self, size: Option<usize>) -> Result<FloatImage> {
        match self {
            ImageRef::Path(p) => imageio::load_float(p, size),
            ImageRef::Memory(img) => Ok(match size {
                Some(s) if s != img.width || s != img.height => img.resize(s, s),
                _ => (**img).clone(),
            }),
        }
    }
}

/// One image with every label the toolkit uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: ImageRef,
    /// Stable key: dataset-relative path for files, a caller-chosen name otherwise.
    pub key: String,
    pub instance_id: i64,
    pub model: Option<String>,
    pub phase: Phase,
    pub labels: DamageLabels,
    pub dirt: Dirt,
    pub view_index: usize,
    pub background_index: usize,
    pub render_index: usize,
    pub domain: Domain,
    pub split: Split,
}

impl SampleRecord {
    pub fn validate(&self) -> Result<()> {
        if self.domain == Domain::Real && self.instance_id != REAL_INSTANCE_ID {
            return Err(Error::contract(format!("real record `{}` has an instance id", self.key)));
        }
        if self.phase == Phase::Before && self.labels.frame_damaged() {
            return Err(Error::contract(format!("before record `{}` carries frame damage", self.key)));
        }
        Ok(())
    }
}
