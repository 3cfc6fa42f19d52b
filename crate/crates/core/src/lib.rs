//! Moving-object detection for event cameras.
//!
//! Events are cut into windows at frame timestamps, uniformly sampled,
//! embedded in a scaled `(x, y, t)` space and denoised through the connected
//! components of a k-NN graph. The survivors are clustered with k-means, the
//! cluster count chosen by the mean silhouette, and each cluster becomes a
//! bounding box. DBSCAN, mean shift and a Gaussian mixture are provided as
//! alternative clusterers, along with an IoU coverage evaluator and a
//! synthetic scene generator with exact ground truth.

pub mod baselines;
pub mod clustering;
pub mod error;
pub mod eval;
pub mod event;
mod kdtree;
pub mod knn;
pub mod pipeline;
pub mod render;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
