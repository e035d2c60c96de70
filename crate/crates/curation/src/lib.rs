//! Content-aware clip curation: shot splitting, quality and motion scoring,
//! embedding deduplication, bucketing and post-training selection.

pub mod bucket;
pub mod dedup;
pub mod embed;
pub mod error;
pub mod fixtures;
pub mod flow;
pub mod frame;
pub mod manifest;
pub mod motion;
pub mod pipeline;
pub mod quality;
pub mod scene;
pub mod select;

pub use bucket::{assign_bucket, Aspect, Bucket, BucketConfig};
pub use dedup::{kmeans, kmeans_dedup, pairwise_dedup};
pub use error::{CurationError, Result};
pub use flow::{estimate_flow, fit_background_transform, AffineFit, FlowField};
pub use manifest::{read_manifest, write_manifest, ClipRecord, DropReason};
pub use motion::{motion_scores, MotionScores};
pub use pipeline::{curate, load_corpus, write_corpus, CurationConfig, SourceVideo};
pub use quality::{laplacian_blur_score, AestheticScorer, StubAesthetic};
pub use scene::{detect_scene_cuts, split_clips};
pub use select::select_top_percentile;
