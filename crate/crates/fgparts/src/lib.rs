//! Saliency-guided part estimation for fine-grained image classification.
//!
//! The library trains a small convolutional feature extractor, selects the
//! feature channels that matter for a class with an L1-regularized
//! one-vs-rest linear classifier, derives a saliency map from the input
//! gradients of just those channels, turns the thresholded map into ranked
//! part bounding boxes (non-maximum suppression + seeded k-means), and
//! classifies with part features concatenated onto the global feature.
//!
//! Entry points:
//! - [`synthgen`]: deterministic synthetic glyph datasets for benchmarks.
//! - [`backbone`]: feature extractor, input gradients, training.
//! - [`sparse_linear`]: L1/L2 one-vs-rest linear models.
//! - [`saliency`]: gradient aggregation, normalization, thresholding.
//! - [`parts`]: peak picking, clustering, box estimation.
//! - [`pipeline`]: the end-to-end flow plus evaluation reports.
//! - [`cli`]: the `synth` / `train` / `parts` / `eval` commands.

pub mod backbone;
mod error;
pub mod grid;
pub mod parts;
pub mod pipeline;
pub mod saliency;
pub mod synthgen;
pub mod sparse_linear;

pub use error::{Error, Result};
