//! A small dense/convolutional network engine with explicit reverse-mode
//! gradients.
//!
//! Parameters live in one flat `Vec<f64>` per network. That layout makes
//! per-sample gradient clipping, weight clipping, checksums and
//! serialization trivial, and lets a frozen network be shared read-only
//! across threads since forward passes return their own [`Trace`].

pub mod arch;
mod layer;
mod network;
pub mod optim;

pub use layer::LayerSpec;
pub use network::{Architecture, Network, Trace};
pub use optim::{Optimizer, OptimizerConfig};
pub(crate) use layer::sigmoid as sigmoid_fn;
