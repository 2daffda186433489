//! Adaptive block-based change-point detection for high-dimensional and
//! image time series.
//!
//! The detector targets distributional changes confined to a small,
//! spatially clustered subset of components. Components are partitioned
//! into contiguous blocks at several granularities; each block gets a
//! k-MST similarity graph and a max-type edge-count scan statistic, the
//! per-structure maxima are averaged into an ensemble curve, and
//! significance comes from permutation resampling. Seeded binary
//! segmentation extends the single test to multiple change-points, and a
//! preprocessing pipeline turns raw band stacks into the probability
//! series the detector consumes.
//!
//! With the default `parallel` feature, block graphs, permutation
//! replicates, simulation trials and per-pixel fits spread across a rayon
//! pool; outputs are bit-identical across thread counts and to the
//! sequential fallback.

pub mod blocking;
pub mod detect;
pub mod edgecount;
mod error;
mod exec;
pub mod pipeline;
pub mod rng;
pub mod segment;
pub mod series;
pub mod simgraph;
pub mod simlab;

pub use error::{Error, Result};
