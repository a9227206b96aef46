//! Run configuration: one TOML document with a section per pipeline stage,
//! plus dotted `key=value` overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{JigsawRemainder, ModelConfig};
use crate::synthgen::GenConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Architecture: a named preset with optional field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    pub image_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub patch_stride: Option<usize>,
    pub embed_dim: Option<usize>,
    pub depth: Option<usize>,
    pub num_heads: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub k_groups: Option<usize>,
    pub jigsaw_remainder: Option<JigsawRemainder>,
    pub init_std: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            image_size: None,
            patch_size: None,
            patch_stride: None,
            embed_dim: None,
            depth: None,
            num_heads: None,
            mlp_ratio: None,
            k_groups: None,
            jigsaw_remainder: None,
            init_std: None,
        }
    }
}

impl ModelSection {
    /// Architecture template; identity and model counts are filled in by the trainer.
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::preset(&self.preset, 1)?;
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { m.$f = v; } )* };
        }
        apply!(image_size, patch_size, patch_stride, embed_dim, depth, num_heads, mlp_ratio, k_groups, jigsaw_remainder, init_std);
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Split to evaluate: `val`, `stress`, `train` or a real split.
    pub split: String,
    /// Real split to score for damage detection alongside, if real data is configured.
    pub real_split: Option<String>,
    pub top_k: usize,
    /// Query rows in the retrieval grid.
    pub max_rows: usize,
    /// Tile side of the retrieval grid, pixels.
    pub tile: u32,
    pub export_embeddings: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: "val".into(),
            real_split: None,
            top_k: 5,
            max_rows: 16,
            tile: 64,
            export_embeddings: false,
        }
    }
}

/// Real photographs: an image directory and a label table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RealConfig {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Seed of the stratified train/val/test split, independent of run seeds.
    pub split_seed: u64,
}

impl RealConfig {
    pub fn is_configured(&self) -> bool {
        self.images.is_some() && self.labels.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub real: RealConfig,
}

pub const SECTIONS: [&str; 5] = ["gen", "model", "train", "eval", "real"];

/// Split `a.b.c=value` into its key path and TOML value. Values that do not
/// parse as TOML are taken as bare strings.
pub fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{text}` is not of the form key=value")))?;
    let keys: Vec<String> = key.trim().split('.').map(|k| k.trim().to_string()).collect();
    if keys.iter().any(|k| k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')) {
        return Err(Error::config(format!("override key `{key}` is not a dotted identifier")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) if t.len() == 1 => t.remove("v").expect("single key"),
        _ => toml::Value::String(raw.to_string()),
    };
    Ok((keys, value))
}

fn set_path(table: &mut toml::Table, keys: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = keys.split_last().expect("non-empty key path");
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override path crosses non-table key `{k}`")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_table(toml::from_str(text).map_err(|e| Error::config(e.to_string()))?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))
    }

    /// Load a config file (or defaults), then apply overrides in order.
    /// Override keys not starting with a section name are taken relative to
    /// `default_section`.
    pub fn load(path: Option<&Path>, overrides: &[String], default_section: &str) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("cannot read config file {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (mut keys, value) = parse_override(o)?;
            if !SECTIONS.contains(&keys[0].as_str()) {
                keys.insert(0, default_section.to_string());
            }
            log::info!("override {} = {}", keys.join("."), value);
            set_path(&mut table, &keys, value)?;
        }
        let cfg = Self::from_table(table)?;
        if let Some(p) = path {
            return cfg.with_relative_paths(p.parent().unwrap_or(Path::new(".")));
        }
        Ok(cfg)
    }

    /// Resolve relative file paths against the config file's directory.
    fn with_relative_paths(mut self, base: &Path) -> Result<Self> {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.real.images);
        fix(&mut self.real.labels);
        fix(&mut self.gen.library);
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values() {
        let (k, v) = parse_override("gen.probs.after_frame=0").unwrap();
        assert_eq!(k, vec!["gen", "probs", "after_frame"]);
        assert_eq!(v, toml::Value::Integer(0));
        assert_eq!(parse_override("train.mode=pada").unwrap().1, toml::Value::String("pada".into()));
        assert_eq!(parse_override("a=[1, 2]").unwrap().1.as_array().unwrap().len(), 2);
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn overrides_apply_relative_to_section() {
        let cfg = RunConfig::load(None, &["probs.after_frame=0.0".into(), "train.epochs=3".into()], "gen").unwrap();
        assert_eq!(cfg.gen.probs.after_frame, 0.0);
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn unknown_keys_and_bad_types_rejected() {
        assert!(RunConfig::load(None, &["train.epoch=3".into()], "train").is_err());
        assert!(RunConfig::load(None, &["train.epochs=many".into()], "train").is_err());
        assert!(RunConfig::parse("[bogus]\n").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::load(None, &["model.embed_dim=96".into()], "train").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert_eq!(cfg.model.resolve().unwrap().embed_dim, 96);
    }

    #[test]
    fn missing_file_names_path() {
        let err = RunConfig::load(Some(Path::new("/nonexistent/cfg.toml")), &[], "gen").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.toml"));
    }
}
