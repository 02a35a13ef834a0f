//! Unsupervised deformable 3D image registration.
//!
//! A coarse-to-fine fusion pyramid network predicts a dense displacement
//! field aligning a moving volume to a fixed volume. Training minimizes a
//! dual-scale local normalized cross-correlation similarity plus a diffusion
//! regularizer. Evaluation covers Dice, target registration error, 95%
//! Hausdorff surface distance, and non-diffeomorphic volume.
//!
//! All grid math is generic over the scalar type ([`Scalar`]); the shipping
//! pipeline runs in `f32`, test oracles in `f64`.

pub mod data;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod scalar;
pub mod train;
pub mod volgrid;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Production-precision volume.
pub type Volume32 = volgrid::Volume<f32>;
/// Production-precision displacement field.
pub type Field32 = volgrid::DisplacementField<f32>;
/// Production-precision feature grid.
pub type FeatureGrid32 = volgrid::FeatureGrid<f32>;
/// Oracle-precision volume.
pub type Volume64 = volgrid::Volume<f64>;
/// Oracle-precision displacement field.
pub type Field64 = volgrid::DisplacementField<f64>;
