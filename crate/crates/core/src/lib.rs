//! Urban vitality analytics engine.
//!
//! Builds a per-area Current Vitality Index from preprocessed indicators,
//! groups areas into sectors with fixed-centroid k-means, tracks a per-sector
//! Long-Term Vitality Index across census years with one-step forecasts, and
//! explains the results with tree-ensemble importances and exact TreeSHAP.

pub mod cluster;
pub mod cvi;
pub mod data;
pub mod explain;
pub mod geo;
pub mod learners;
pub mod lvi;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
