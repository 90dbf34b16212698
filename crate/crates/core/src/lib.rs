//! Graph learning on multivariate time-series connectivity.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`cohort`] loads or synthesises subject time series (regions x time).
//! 2. [`fc`] turns a series into static, per-segment and ODE-effective
//!    connectivity matrices.
//! 3. [`khop`] mixes forward and backward dynamic connectivity over `k`
//!    hops, gates it with the static matrix and normalises it into the
//!    convolution filters `Phi_k(t)`.
//! 4. [`gcn`] runs the age-modulated k-hop convolution with residual
//!    temporal updates, and trains it with reverse-mode gradients from
//!    [`tape`].
//! 5. [`cmfc`] is the contrastive masked connectivity-strength loss.
//! 6. [`scoring`] ranks regions, and [`tree`] prunes the connectivity graph
//!    into a spanning tree and extracts hierarchical trunk paths.

pub mod cmfc;
pub mod cohort;
pub mod fc;
pub mod gcn;
pub mod khop;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod tape;
pub mod tree;

mod error;

pub use error::{Error, Result};

pub use cmfc::{ContrastMasks, FcStrength, StrengthLatent, StrengthProjection};
pub use cohort::{BoldSeries, Cohort, Network, SynthSpec};
pub use fc::{ConnectivityKind, ConnectivityMatrix, DynamicBackend, OdeParams};
pub use gcn::{GcnModel, Task, TrainConfig, TrainMetrics};
pub use khop::{KHopConfig, KHopOperator, ProfileRow};
pub use scoring::NodeScores;
pub use tree::{PathWeightConfig, PrunedTree, TrunkHierarchy, WeightedGraph};

/// Dense real matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;

/// Ages are divided by this before entering the dynamics or the age
/// modulation, so `rho * theta` stays O(1).
pub const AGE_SCALE: f64 = 100.0;

/// Standardised age used by every age-dependent term.
#[inline]
pub fn standardize_age(age_years: f64) -> f64 {
    age_years / AGE_SCALE
}
