//! Single-layer graph convolutional networks built from first principles,
//! together with the machinery needed to study their algorithmic stability:
//!
//! - [`graph`]: undirected graphs and the sparse `A + I`, `D^{-1/2} A D^{-1/2} + I`
//!   and `D^{-1} A + I` convolution filters.
//! - [`spectral`]: power iteration for the filter operator norm, a cyclic Jacobi
//!   oracle, and the ego-graph interlacing check.
//! - [`ego`]: ego-graph extraction, feature normalization and the empirical `g_λ`.
//! - [`model`]: activations and losses with certified Lipschitz/smoothness constants,
//!   the forward pass and the closed-form parameter gradient.
//! - [`trainer`]: batch-size-one SGD and coupled twin runs on `S` and `S^i`.
//! - [`stability`]: closed-form uniform-stability and generalization-gap bounds, and
//!   their empirical counterparts.
//! - [`datasets`]: canonical on-disk format and seeded synthetic tasks.
//! - [`report`]: CSV emission with fixed 17-significant-digit floats.

pub mod datasets;
pub mod ego;
mod error;
pub mod graph;
pub mod model;
pub mod report;
pub mod spectral;
pub mod stability;
pub mod trainer;

pub use error::{Error, Result, RunError};
