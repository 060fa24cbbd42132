//! Segmentation of registered dynamic image sequences into regions whose
//! time curves are statistically equivalent.
//!
//! The pipeline stabilizes the noise of every voxel's time curve, compares
//! average curves of candidate regions with a multi-scale equivalence test
//! and agglomerates regions hierarchically until a control function on the
//! test's p-values stops the merging.

pub mod clustering;
pub mod diagnostics;
pub mod dyadic;
pub mod equivtest;
mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod labels;
pub mod model;
pub mod special;
pub mod synth;

pub use clustering::{
    auto_delta, control, segment, segment_stabilized, DeltaSelection, MergeRecord, Phase, SegmentParams, Segmentation,
};
pub use dyadic::{DyadicScheme, ScaleStats};
pub use equivtest::{
    min_margin, noncentral_chisq_cdf, pair_pvalue, wrong_binding_bound, MarginSpec, PairPValue, PairTest,
};
pub use error::{Error, Result};
pub use grid::{Connectivity, Grid};
pub use labels::LabelMap;
pub use model::{normalized_residuals, remove_baseline, stabilize, RawSequence, ResidualField, StabilizedSequence};
