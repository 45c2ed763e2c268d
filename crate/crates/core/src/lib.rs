//! Anchor-free Siamese visual tracking.
//!
//! A template patch and a search region go through a shared backbone whose
//! three tap outputs are stacked along channels. Search features are
//! correlated channel-by-channel against template features, reduced with a
//! 1×1 convolution, and fed to a head that predicts, for every cell of the
//! response map, a foreground score, a center-ness score and the distances
//! `(l, t, r, b)` to the four sides of the target box.
//!
//! The crate also carries everything needed to train and evaluate that
//! network at desk scale: a small dense tensor library with reverse-mode
//! gradients, a synthetic sequence generator, an SGD trainer, the tracking
//! loop and GOT-10k/OTB style metrics.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod autograd;
pub mod bbox;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod head;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod targets;
pub mod tensor;
pub mod train;
pub mod tracker;

pub use bbox::BBox;
pub use error::{Error, Result};
pub use tensor::Tensor;
