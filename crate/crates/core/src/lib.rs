//! Coarse retrieval half of a training-free visual place recognition pipeline.
//!
//! Per-image transformer features ([`FeatureSet`], stored as VPRF files) are
//! pooled into unit-norm global descriptors, either by taking the CLS token or
//! by GeM pooling over patch tokens. A [`DescriptorIndex`] answers exact top-k
//! cosine queries, and the [`eval`] module scores ranked candidate lists with
//! Recall@K against ground-truth poses.
//!
//! Descriptor math is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar for the common cases: the pipeline runs in `f32`,
//! matching feature storage, while `f64` is available where tighter numerical
//! checks are needed.

mod codec;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod index;
pub mod scalar;

pub use dataset::{
    feature_file_name, load_manifest, parse_manifest, read_feature_file, write_feature_file,
    write_manifest, FeatureSet, ImageRecord, Pose, Split,
};
pub use descriptor::{
    aggregate, aggregate_cls, aggregate_gem, cosine_similarity, gem_pool, Aggregation,
    AggregationConfig, AggregationMethod, GemForm, GlobalDescriptor,
};
pub use error::{Error, Result};
pub use eval::{
    format_delta, geo_distance, parse_report, recall_at_k, subsample_queries, EvalConfig,
    EvalReport, PoseTable, QueryOutcome, RankedList, RankingMethod, RecallReport, ReportHeader,
};
pub use index::{build_index, load_index, save_index, Candidate, CandidateSet, DescriptorIndex};
pub use scalar::Scalar;

/// Single-precision descriptor, the pipeline default.
pub type Descriptor = GlobalDescriptor<f32>;
/// Double-precision descriptor.
pub type Descriptor64 = GlobalDescriptor<f64>;
/// Single-precision reference index.
pub type Index = DescriptorIndex<f32>;
/// Double-precision reference index.
pub type Index64 = DescriptorIndex<f64>;
/// Single-precision candidate list.
pub type Candidates = CandidateSet<f32>;
