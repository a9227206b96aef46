//! Dataset schema, split policy, query/gallery construction, real-image
//! ingestion and normalisation statistics.

pub mod gallery;
pub mod labels;
pub mod metadata;
pub mod normalize;
pub mod real;
pub mod record;
pub mod split;

pub use gallery::{build_query_gallery, QueryGallery};
pub use labels::{decode_missing_parts, encode_missing_parts, DamageLabels, Domain, Part, Phase, Split};
pub use metadata::{read_metadata, write_metadata, MetadataRecord};
pub use normalize::{compute_normalization, NormStats};
pub use real::{ingest_real, parse_real_labels, FrameLabel, RealLabelRow};
pub use record::{ImageRef, SampleRecord};
pub use split::{read_splits, split_dataset, write_splits, IdQuota, SplitPolicy, SplitsFile};
