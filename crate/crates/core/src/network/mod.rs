//! The registration model: a shared encoder, a shared auxiliary decoder,
//! and a fusion pyramid decoder that predicts a displacement residual at
//! each of five scales and composes them coarse-to-fine into the final
//! field.

pub mod checkpoint;
mod model;
mod weights;

pub use model::{aux_decode, encode, register, register_on_tape, RegistrationNodes};
pub use weights::{ConvParamsOf, LinearParamsOf, ModelParamsOf, ModelWeights, MsfbParamsOf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volgrid::{DisplacementField, FeatureGrid};

/// How displacement residuals from successive scales are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// Function composition: `phi(x) = delta(x) + prev(x + delta(x))`.
    #[default]
    Warp,
    /// Plain vector addition (ablation fallback).
    Add,
}

/// Architecture hyperparameters. Channel lists are per level, index 0 =
/// full resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_scales: usize,
    pub encoder_channels: Vec<usize>,
    pub aux_decoder_channels: Vec<usize>,
    pub msfb_bottleneck_ratio: usize,
    pub negative_slope: f64,
    /// Zero-initialize the residual prediction heads so an untrained model
    /// is exactly the identity transform.
    pub head_init_zero: bool,
    #[serde(default)]
    pub composition: Composition,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_scales: 5,
            encoder_channels: vec![8, 16, 32, 64, 128],
            aux_decoder_channels: vec![16, 16, 16, 32, 64],
            msfb_bottleneck_ratio: 4,
            negative_slope: 0.2,
            head_init_zero: true,
            composition: Composition::Warp,
        }
    }
}

impl ModelConfig {
    /// A small configuration for toy-scale runs and tests.
    pub fn slim() -> Self {
        Self {
            encoder_channels: vec![4, 8, 16, 16, 16],
            aux_decoder_channels: vec![4, 6, 8, 12, 16],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_scales != 5 {
            return Err(Error::Config(format!(
                "num_scales must be 5, got {}",
                self.num_scales
            )));
        }
        for (name, list) in [
            ("encoder_channels", &self.encoder_channels),
            ("aux_decoder_channels", &self.aux_decoder_channels),
        ] {
            if list.len() != self.num_scales {
                return Err(Error::Config(format!(
                    "{name} must list {} entries, got {}",
                    self.num_scales,
                    list.len()
                )));
            }
            if list.iter().any(|&c| c == 0) {
                return Err(Error::Config(format!("{name} entries must be >= 1")));
            }
        }
        if self.msfb_bottleneck_ratio == 0 {
            return Err(Error::Config("msfb_bottleneck_ratio must be >= 1".into()));
        }
        if self.negative_slope < 0.0 {
            return Err(Error::Config("negative_slope must be >= 0".into()));
        }
        Ok(())
    }

    /// Input extents must be divisible by this so each level halves
    /// exactly.
    pub fn shape_divisor(&self) -> usize {
        1 << (self.num_scales - 1)
    }

    pub fn check_input_shape(&self, shape: [usize; 3]) -> Result<()> {
        let d = self.shape_divisor();
        if shape.iter().any(|&n| n % d != 0 || n == 0) {
            return Err(Error::Contract(format!(
                "input shape {shape:?} must be divisible by {d}"
            )));
        }
        Ok(())
    }

    /// Spatial shape of pyramid level `k` (0 = full resolution).
    pub fn level_shape(&self, input: [usize; 3], k: usize) -> [usize; 3] {
        [input[0] >> k, input[1] >> k, input[2] >> k]
    }

    /// Channels of the fused feature grid at level `k`.
    pub(crate) fn fused_channels(&self, k: usize) -> usize {
        2 * self.encoder_channels[k]
    }

    /// Channels entering the fusion block at level `k`: both images'
    /// encoder and auxiliary features plus the 3-channel upsampled field.
    pub(crate) fn msfb_input_channels(&self, k: usize) -> usize {
        2 * self.encoder_channels[k] + 2 * self.aux_decoder_channels[k] + 3
    }

    /// Channels of the coarsest-scale merge convolution.
    pub(crate) fn coarse_merge_channels(&self) -> usize {
        2 * self.encoder_channels[self.num_scales - 1]
    }
}

/// Per-scale feature grids for one image, index 0 = full resolution
/// (coarsest last).
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<FeatureGrid<T>>,
}

/// Everything the registration forward pass produces.
#[derive(Debug, Clone)]
pub struct RegistrationOutput<T> {
    /// Composed field at full resolution.
    pub phi: DisplacementField<T>,
    /// Composed field at half resolution, before the final refinement.
    pub phi_hat: DisplacementField<T>,
    /// Residual fields per scale, coarsest first, each in the voxel units
    /// of its own grid.
    pub per_scale_deltas: Vec<DisplacementField<T>>,
}

impl<T: Scalar> RegistrationOutput<T> {
    /// Recompose `per_scale_deltas` into the full-resolution field; used to
    /// verify the invariant `phi == recompose(deltas)`.
    pub fn recompose(&self, composition: Composition) -> Result<DisplacementField<T>> {
        let mut field = self.per_scale_deltas[0].clone();
        for delta in &self.per_scale_deltas[1..] {
            let up = crate::volgrid::upsample_field(&field, 2)?;
            field = match composition {
                Composition::Warp => crate::volgrid::compose_fields(&up, delta)?,
                Composition::Add => crate::volgrid::compose_fields_additive(&up, delta)?,
            };
        }
        Ok(field)
    }
}
