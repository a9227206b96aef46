//! Procedural before/after bicycle generator.
//!
//! Geometry comes from a data-driven model library; each identity gets a
//! material assignment, each render a damage state, view and background.
//! Every random draw is derived from the master seed and stable labels, so
//! output does not depend on generation order or thread count.

pub mod damage;
pub mod dataset;
pub mod instance;
pub mod library;
pub mod palette;
pub mod render;

pub use damage::{sample_damage, DamageProbabilities, DamageState, Dirt};
pub use dataset::{generate_dataset, plan_dataset, DatasetCounts, DatasetManifest, GenConfig};
pub use instance::{sample_instance, BikeInstance};
pub use library::{BikeModelSpec, Category, ModelLibrary};
pub use render::{render_sample, BackgroundMode, RenderConfig, RenderOutput, Renderer, View};
