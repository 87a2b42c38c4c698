//! Embedded pseudo-labeling at desk scale.
//!
//! The pipeline trains a small contrastive encoder (NT-Xent, SupCon or a
//! SimCLR pre-train followed by a SupCon fine-tune), projects the latent
//! features to 2D with exact t-SNE, propagates the few supervised labels
//! through the projection with an optimum-path forest, and measures how data
//! separation, visual separation and downstream classifier performance move
//! together.
//!
//! Modules map onto pipeline stages:
//!
//! * [`dataset`]: ingestion, synthetic blobs, stratified S/U/T splits, label vectors.
//! * [`metrics`]: confusion matrices, accuracy, Cohen's kappa, k-NN label consistency.
//! * [`opf`]: OPFSemi propagation, OPFSup classifier, MST and a minimax oracle.
//! * [`projection`]: perplexity-calibrated affinities and exact t-SNE.
//! * [`contrastive`]: encoder, losses with analytic gradients, training loops.
//! * [`probe`]: linear hinge probe and the softmax network trained on pseudo-labels.

pub mod checkpoint;
pub mod contrastive;
pub mod dataset;
mod error;
pub mod matrix;
pub mod metrics;
pub mod opf;
pub mod probe;
pub mod projection;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::Matrix;
