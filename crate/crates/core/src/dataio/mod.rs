//! On-disk formats and dataset construction.
//!
//! - feature files (`.tgaf`): magic `TGAF`, `u32` version, `u32` num_units,
//!   `u32` feature_dim, then row-major little-endian `f32`
//! - checkpoints (`.tgac`): magic `TGAC`, `u32` version, `u32` tensor count,
//!   then per tensor `u16` name length, UTF-8 name, `u8` rank, `u32` dims and
//!   little-endian `f32` data
//! - `manifest.json` / `vocab.json`: see [`manifest`]

mod bytes;
pub mod checkpoint;
pub mod features;
pub mod manifest;
pub mod synth;

pub use checkpoint::{load_checkpoint, load_checkpoint_tensors, save_checkpoint};
pub use features::{read_feature_header, read_features, write_features, VideoFeatures};
pub use manifest::{
    load_dataset, load_manifest, Dataset, DatasetManifest, Moment, SentenceQuery, Split,
    VideoEntry, Vocabulary,
};
pub use synth::{generate_synthetic, SplitCounts, SynthStats, SyntheticConfig};
