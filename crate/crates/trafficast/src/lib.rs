//! Network-scale short-term traffic prediction.
//!
//! The library implements a two-stage pipeline over per-segment speed series:
//!
//! 1. **Clustering** ([`deepcluster`]): daily sub-series are rasterized into
//!    binary shape images ([`raster`]), embedded by a small convolutional
//!    network trained with a triplet loss ([`nn`]), and road segments are
//!    grouped by k-means over their averaged embeddings.
//! 2. **Prediction** ([`predict`]): one recurrent predictor is trained per
//!    group on the pooled samples of its member segments (a group-based
//!    model, GM) and evaluated against per-segment baselines (IM) with
//!    relative-error metrics.
//!
//! Supporting modules cover CSV ingestion and calendar filtering
//! ([`ingest`]), sub-series slicing and autocorrelation analysis
//! ([`series`]), labeled synthetic network generation ([`synth`]),
//! configuration ([`config`]), and artifact emission ([`report`], [`plot`]).
//! [`pipeline`] wires the stages end to end; every stage draws its
//! randomness from a named sub-seed of one root seed ([`rng`]).

pub mod config;
pub mod deepcluster;
pub mod error;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod predict;
pub mod raster;
pub mod report;
pub mod rng;
pub mod series;
pub mod synth;

pub use error::Error;
