//! Unsupervised change detection for bi-temporal, co-registered hyperspectral
//! image pairs.
//!
//! The pipeline maps both images through the encoder of a feature-fusion
//! convolutional autoencoder (FFCAE) trained on the pair itself, discards
//! feature maps whose difference carries no entropy, forms a difference image
//! (absolute difference or spectral angle) and splits the pixels into
//! changed / unchanged with 2-means clustering.
//!
//! Modules:
//! - [`io`]: hyperspectral containers, PGM label maps, synthetic scene pairs
//! - [`nn`]: tensors, same-padded convolution with exact gradients, MSE, Adam
//! - [`ffcae`]: the autoencoder, its training loop and checkpoints
//! - [`change`]: entropy filtering, AD / SAM differencing, k-means decision
//! - [`metrics`]: confusion matrix and accuracy / agreement scores
//! - [`stats`]: method ranking and Tukey HSD Q statistics
//! - [`pipeline`]: file-level orchestration used by the `hsicd` binary

pub mod change;
pub mod error;
pub mod ffcae;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod stats;

pub use error::{Error, Result};
