//! Multimodal deformable 3D image registration.
//!
//! The crate pairs a small reverse-mode differentiation engine with the
//! pieces needed to register volumes of different modalities:
//!
//! - [`similarity`]: local normalized cross correlation (plain and squared),
//!   MIND-SSC descriptors and MSE, all differentiable.
//! - [`icon`]: the gradient inverse consistency regularizer and the symmetric
//!   registration objectives built on it, including the variant whose
//!   similarity is evaluated on a different co-registered pair than the one
//!   used to predict the maps.
//! - [`pipeline`]: the TwoStep/DownSample multi-resolution composition and
//!   Adam-based instance optimization of per-level displacement grids.
//! - [`sampling`]: dataset manifests, the B/F/R loss-pair strategies,
//!   weighted epoch assembly and a check for input/loss pair aliasing.
//! - [`metrics`], [`transforms`], [`volume`], [`synthetic`]: evaluation,
//!   displacement-field algebra, file formats and preprocessing, and
//!   ground-truth phantoms.

pub mod autodiff;
pub mod error;
pub mod icon;
pub mod metrics;
pub mod pipeline;
pub mod sampling;
pub mod similarity;
pub mod synthetic;
pub mod transforms;
pub mod volume;

pub use error::{Error, Result};
