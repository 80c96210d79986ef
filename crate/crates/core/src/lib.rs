//! Differentially private synthetic image release.
//!
//! Private images are inverted into the latent space of a generator trained
//! on public data, a small Wasserstein GAN is fit to the private latent
//! vectors with DPSGD, and synthetic images are released by chaining the two
//! generators. Releasing samples is post-processing, so the privacy record
//! of the latent GAN carries through unchanged.
//!
//! Module map:
//!
//! - [`partition`]: labeling / public / private split of a training set
//! - [`gan`]: generator and critic types, adversarial values, public GAN training
//! - [`inversion`]: model inversion by density-constrained projection or by
//!   the Gaussian-modulated objective
//! - [`dp`]: per-sample clipping, Gaussian noise, Rényi accountant
//! - [`latent_gan`]: DPSGD Wasserstein GAN over private latents
//! - [`synthesis`]: sampling through both generators
//! - [`evaluation`]: FID, Inception Score, labeling and downstream precision
//! - [`pipeline`]: end-to-end orchestration with manifest chaining

pub mod audit;
pub mod dataset;
pub mod dp;
pub mod error;
pub mod evaluation;
pub mod gan;
pub mod inversion;
pub mod io;
pub mod latent_gan;
pub mod manifest;
pub mod nn;
pub mod partition;
pub mod pipeline;
pub mod prior;
pub mod synthesis;

pub use dataset::{LabeledDataset, ToyMixture};
pub use error::{Error, Result};
pub use gan::{CriticMode, Discriminator, Generator, LatentMap};
pub use inversion::{InversionConfig, InversionMethod, InversionResult, ObjectiveForm};
pub use latent_gan::{DpGanConfig, LatentDataset};
pub use manifest::{PrivacyRecord, RunManifest};
pub use partition::DatasetSplit;
pub use prior::LatentPrior;

pub(crate) use nn::sigmoid_fn as nn_sigmoid;
