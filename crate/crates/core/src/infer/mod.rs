//! Full-track inference: query selection, segmented separation with
//! overlap-add reassembly, and fine/coarse evaluation.

mod evaluate;
mod query_select;
mod separate;

pub use evaluate::{
    evaluate, EvalSetup, Evaluation, ModelEstimator, OracleEstimator, QueryRecord, StemEstimator,
    StemLevel, ZeroEstimator,
};
pub use query_select::{select_query, QueryMode, QuerySelection, QueryTier};
pub use separate::{segment_layout, separate_track, InferenceConfig};
