//! Bicycle geometry library.
//!
//! Geometry lives in TOML data files; the default library is compiled in from
//! `data/bike_models.toml`. Frame space is the unit square with `y` pointing up.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::labels::Part;
use crate::{Error, Result};

const BUILTIN: &str = include_str!("../../data/bike_models.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "MTB")]
    Mtb,
    Enduro,
    Road,
    Circuit,
    Gravel,
    Cruiser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarStyle {
    Flat,
    Riser,
    Drop,
    Swept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub name: String,
    pub from: String,
    pub to: String,
    pub thickness: f64,
    #[serde(default)]
    pub breakable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartAnchors {
    pub seat: String,
    pub handlebar: String,
    pub pedals: String,
    pub front_wheel: String,
    pub rear_wheel: String,
}

impl PartAnchors {
    pub fn get(&self, part: Part) -> &str {
        match part {
            Part::FrontWheel => &self.front_wheel,
            Part::RearWheel => &self.rear_wheel,
            Part::Seat => &self.seat,
            Part::Handlebar => &self.handlebar,
            Part::Pedals => &self.pedals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BikeModelSpec {
    pub name: String,
    pub category: Category,
    /// Wheel radius as a fraction of the frame-space height.
    pub wheel_radius: f64,
    /// Exposed seat post length above the seat cluster.
    pub seatpost: f64,
    pub bar_style: BarStyle,
    pub keypoints: Vec<Keypoint>,
    pub tubes: Vec<Tube>,
    pub anchors: PartAnchors,
}

impl BikeModelSpec {
    pub fn keypoint(&self, name: &str) -> Option<[f64; 2]> {
        self.keypoints
            .iter()
            .find(|k| k.name == name)
            .map(|k| [k.x, k.y])
    }

    pub fn anchor(&self, part: Part) -> [f64; 2] {
        self.keypoint(self.anchors.get(part))
            .expect("anchors validated against keypoints")
    }

    /// Indices into `tubes` of the tubes that may be cut.
    pub fn breakable_tubes(&self) -> Vec<usize> {
        self.tubes
            .iter()
            .enumerate()
            .filter(|(_, t)| t.breakable)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("bike model `{}`: {msg}", self.name)));
        if self.tubes.len() < 6 {
            return bad(format!("needs at least 6 tubes, has {}", self.tubes.len()));
        }
        let mut names = HashSet::new();
        for k in &self.keypoints {
            if !(0.0..=1.0).contains(&k.x) || !(0.0..=1.0).contains(&k.y) {
                return bad(format!("keypoint `{}` lies outside the unit square", k.name));
            }
            if !names.insert(k.name.as_str()) {
                return bad(format!("duplicate keypoint `{}`", k.name));
            }
        }
        for t in &self.tubes {
            if !names.contains(t.from.as_str()) || !names.contains(t.to.as_str()) {
                return bad(format!("tube `{}` references an unknown keypoint", t.name));
            }
            if !(t.thickness > 0.0 && t.thickness < 0.2) {
                return bad(format!("tube `{}` has thickness {}", t.name, t.thickness));
            }
        }
        if self.breakable_tubes().is_empty() {
            return bad("no breakable tube".into());
        }
        for part in Part::ALL {
            if !names.contains(self.anchors.get(part)) {
                return bad(format!("anchor for {} references an unknown keypoint", part.name()));
            }
        }
        if !(self.wheel_radius > 0.0 && self.wheel_radius < 0.5) {
            return bad(format!("wheel radius {} out of range", self.wheel_radius));
        }
        if !(0.0..0.5).contains(&self.seatpost) {
            return bad(format!("seatpost {} out of range", self.seatpost));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct LibraryFile {
    model: Vec<BikeModelSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLibrary {
    models: Vec<BikeModelSpec>,
}

impl ModelLibrary {
    /// The shipped 20-model library.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN).expect("builtin bike library is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: LibraryFile =
            toml::from_str(text).map_err(|e| Error::config(format!("bike library: {e}")))?;
        let mut seen = HashSet::new();
        for m in &file.model {
            m.validate()?;
            if !seen.insert(m.name.clone()) {
                return Err(Error::config(format!("duplicate bike model `{}`", m.name)));
            }
        }
        if file.model.is_empty() {
            return Err(Error::config("bike library is empty"));
        }
        Ok(Self { models: file.model })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading bike library {}", path.display()), e))?;
        Self::from_toml_str(&text)
    }

    pub fn get(&self, name: &str) -> Result<&BikeModelSpec> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn models(&self) -> &[BikeModelSpec] {
        &self.models
    }

    pub fn names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name.clone()).collect()
    }

    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut counts = BTreeMap::new();
        for m in &self.models {
            *counts.entry(m.category).or_default() += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_library_partition() {
        let lib = ModelLibrary::builtin();
        assert_eq!(lib.models().len(), 20);
        let counts = lib.category_counts();
        assert_eq!(counts[&Category::Mtb], 6);
        assert_eq!(counts[&Category::Enduro], 1);
        assert_eq!(counts[&Category::Road], 6);
        assert_eq!(counts[&Category::Circuit], 1);
        assert_eq!(counts[&Category::Gravel], 1);
        assert_eq!(counts[&Category::Cruiser], 5);
        assert!(lib.get("rondo").is_ok());
    }

    #[test]
    fn unknown_model_is_a_lookup_error() {
        let lib = ModelLibrary::builtin();
        assert!(matches!(lib.get("penny-farthing"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut text = BUILTIN.to_string();
        text = text.replacen("x = 0.161", "x = 1.5", 1);
        assert!(ModelLibrary::from_toml_str(&text).is_err());
        let dangling = BUILTIN.replacen("seat = \"seat_top\"", "seat = \"nowhere\"", 1);
        assert!(ModelLibrary::from_toml_str(&dangling).is_err());
    }
}
