//! Damaged-object re-identification toolkit.
//!
//! The crate is organised around the pipeline:
//!
//! - [`synthgen`]: deterministic procedural generator of labelled before/after bicycle renders.
//! - [`datamodel`]: sample records, splits, query/gallery construction, real-image ingestion.
//! - [`model`]: the multi-task transformer (global ReID, jigsaw and damage branches).
//! - [`losses`]: ID cross-entropy, batch-hard triplet and weighted damage losses.
//! - [`domadapt`]: gradient reversal, domain discriminator and partial-adaptation weighting.
//! - [`trainer`]: PK sampling, augmentation, schedule and the training loop.
//! - [`evaluator`]: ranking, CMC, mAP, AUROC, reports and retrieval grids.
//! - [`audit`]: empirical label statistics of a generated dataset against its configuration.

pub mod audit;
pub mod config;
pub mod datamodel;
pub mod domadapt;
pub mod error;
pub mod evaluator;
pub mod imageio;
pub mod losses;
pub mod model;
pub mod seed;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
