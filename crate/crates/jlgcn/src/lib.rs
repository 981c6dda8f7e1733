//! Joint learning of graph structure and node features for graph
//! convolutional networks.
//!
//! The pipeline implemented here learns, per layer, a low-rank Mahalanobis
//! metric factor `R` (so the metric is `M = R Rᵀ`), turns pairwise metric
//! distances into a Gaussian-kernel adjacency, accumulates that adjacency
//! with the previous layer's graph, renormalizes symmetrically, and
//! propagates node features through the resulting operator. Training
//! minimizes masked cross-entropy plus a λ-weighted graph Laplacian
//! regularizer; every gradient is hand-derived and checked against central
//! finite differences.
//!
//! Module map:
//!
//! - [`linalg`] — dense row-major matrices, deterministic RNG, elementary
//!   neural ops. Everything else is built on this.
//! - [`graphlearn`] — metric distances, kernel adjacency, Laplacian,
//!   renormalization, the regularizer, and their analytic gradients.
//! - [`layer`] — one graph-learning convolution layer (plain GCN, metric,
//!   and concatenation variants) with forward/backward.
//! - [`model`] — node-classification and graph-classification networks.
//! - [`lossopt`] — masked cross-entropy, the joint objective, Adam with a
//!   step learning-rate schedule.
//! - [`data`] — TSV dataset ingestion, split masks, perturbations, and
//!   synthetic generators.
//! - [`train`] — config-driven training loops, multi-seed reports, sweeps.
//! - [`checkpoint`] — versioned binary parameter container.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graphlearn;
pub mod layer;
pub mod linalg;
pub mod lossopt;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, Rng, Scalar};
