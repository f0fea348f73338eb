//! Metric-optimized example weights (MOEW).
//!
//! The outer loop searches a low-dimensional parameter `alpha` of an example
//! weighting function `w(x, y; alpha) = c * pi(y) * sigmoid(z(x, y) . alpha)`,
//! the inner loop trains a weighted-loss model for each candidate, and the
//! candidate whose model scores best on a black-box validation metric wins.
//!
//! Module map:
//!
//! - [`data`]: datasets, CSV ingestion, the synthetic two-feature task, label transforms.
//! - [`nn`]: sigmoid feed-forward networks, weighted losses, Adam training.
//! - [`embed`]: autoencoder and label-passthrough embeddings `z(x, y)`.
//! - [`weights`]: importance tables, the weighting function and baseline weightings.
//! - [`metrics`]: validation/test metrics, all oriented so larger is better.
//! - [`gpr`]: exact GP regression with an RBF kernel and Gaussian quantiles.
//! - [`search`]: candidate generators (GP-BUCB, uniform ball sampling, epsilon-cover grid).
//! - [`driver`]: end-to-end experiments, baselines and repeat summaries.
//! - [`persist`]: plain-text model files.

pub mod data;
pub mod driver;
pub mod embed;
mod error;
pub mod gpr;
pub mod metrics;
pub mod nn;
pub mod persist;
pub mod search;
pub mod seed;
pub mod weights;

pub use error::{MoewError, Result};
