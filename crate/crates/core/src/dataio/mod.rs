//! Dataset persistence, splits, frame subsampling, and augmentation.

pub mod augment;
pub mod generate;
pub mod split;
pub mod store;
pub mod subsample;

pub use augment::{augment, AugmentConfig};
pub use generate::{dataset_hash_all, generate_dataset, read_stamp, DatasetSummary};
pub use split::split_tasks;
pub use store::{
    dataset_hash, hex_digest, read_dataset, write_dataset, DatasetManifest, DatasetReader,
    DatasetWriter, ManifestEntry, SplitTag,
};
pub use subsample::{subsample_indices, FrameSampleConfig, SampleMode};
