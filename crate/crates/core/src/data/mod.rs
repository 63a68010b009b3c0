//! Dataset ingestion, taxonomy, splits, query extraction, training-pair
//! sampling, augmentation and the synthetic toy dataset.

mod augment;
mod manifest;
mod onset;
mod queries;
mod sampling;
mod splits;
mod synth;
pub mod taxonomy;

pub use augment::{augment, AugmentConfig, StemAugmentation};
pub use manifest::{
    scan_dataset, Manifest, SongMetadata, SongRecord, StemMetadata, StemRecord, METADATA_FILE,
};
pub use onset::{
    extract_query, improves, onset_strength, strongest_window, window_frames, QueryWindow,
    ONSET_HOP,
};
pub use queries::{extract_all_queries, QueryIndex, QueryIndexEntry, QUERY_WINDOW_SECS};
pub use sampling::{
    conform, AudioBank, ChunkChoice, ChunkPolicy, PairSampler, QueryRef, RmsLadder, RmsTier, SamplingStrategy,
    SongAudio, TrainingExample,
};
pub use splits::{make_splits, RoleMap, SplitAssignment, SplitRole};
pub use synth::{synth_stem, synth_toy_dataset, SynthConfig, MIXTURE_FILE};
pub use taxonomy::StemRoster;
