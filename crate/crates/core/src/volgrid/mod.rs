//! Grid substrate: volumes, displacement fields, warping, resampling, field
//! composition, and finite-difference Jacobians.
//!
//! Conventions used throughout the crate:
//! - A grid shape is `[n0, n1, n2]` = (x, y, z) extents; linear index is
//!   `(i0 * n1 + i1) * n2 + i2` (axis 2 fastest).
//! - Displacement vectors live in voxel units of their own grid; component
//!   `j` displaces along axis `j`. Physical (mm) conversion happens only in
//!   metrics.
//! - Out-of-bounds samples clamp to the border.

mod field;
mod gradient;
pub(crate) mod interp;
mod warp;

pub use field::{compose_fields, compose_fields_additive, resample_field, upsample_field};
pub use gradient::{jacobian_determinants, spatial_gradient, DiffSide, Stencil};
pub use interp::{resample_volume, sample_field, sample_trilinear};
pub use warp::{warp, warp_feature_grid, warp_labels};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 3D scalar intensity grid with physical voxel spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub values: Vec<T>,
}

/// Dense per-voxel 3-vector displacement grid, in voxel units of its own
/// grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField<T> {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub vectors: Vec<[T; 3]>,
}

/// Multi-channel feature grid at one pyramid scale, channel-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    pub channels: usize,
    pub shape: [usize; 3],
    pub values: Vec<T>,
}

/// Integer class-ID grid; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub shape: [usize; 3],
    pub values: Vec<u32>,
}

/// Point set in mm (physical space of the volume, origin at voxel 0).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 3]>,
}

#[inline]
pub(crate) fn num_voxels(shape: [usize; 3]) -> usize {
    shape[0] * shape[1] * shape[2]
}

#[inline]
pub(crate) fn lin_index(shape: [usize; 3], i0: usize, i1: usize, i2: usize) -> usize {
    (i0 * shape[1] + i1) * shape[2] + i2
}

pub(crate) fn check_same_shape(
    a: [usize; 3],
    b: [usize; 3],
    context: &'static str,
) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: a,
            got: b,
            context,
        })
    }
}

impl<T: Scalar> Volume<T> {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], values: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::Contract(format!("volume shape {shape:?} has a zero extent")));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Contract(format!("volume spacing {spacing:?} must be positive")));
        }
        if values.len() != num_voxels(shape) {
            return Err(Error::Contract(format!(
                "volume buffer holds {} values, shape {shape:?} needs {}",
                values.len(),
                num_voxels(shape)
            )));
        }
        Ok(Self { shape, spacing, values })
    }

    pub fn zeros(shape: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            shape,
            spacing,
            values: vec![T::zero(); num_voxels(shape)],
        }
    }

    /// Build a volume by evaluating `f(i0, i1, i2)` at every voxel.
    pub fn from_fn(shape: [usize; 3], spacing: [f64; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(num_voxels(shape));
        for i0 in 0..shape[0] {
            for i1 in 0..shape[1] {
                for i2 in 0..shape[2] {
                    values.push(f(i0, i1, i2));
                }
            }
        }
        Self { shape, spacing, values }
    }

    #[inline]
    pub fn at(&self, i0: usize, i1: usize, i2: usize) -> T {
        self.values[lin_index(self.shape, i0, i1, i2)]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> DisplacementField<T> {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], vectors: Vec<[T; 3]>) -> Result<Self> {
        if vectors.len() != num_voxels(shape) {
            return Err(Error::Contract(format!(
                "field buffer holds {} vectors, shape {shape:?} needs {}",
                vectors.len(),
                num_voxels(shape)
            )));
        }
        Ok(Self { shape, spacing, vectors })
    }

    /// The identity transform: all vectors exactly zero.
    pub fn identity(shape: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            shape,
            spacing,
            vectors: vec![[T::zero(); 3]; num_voxels(shape)],
        }
    }

    pub fn from_fn(shape: [usize; 3], spacing: [f64; 3], mut f: impl FnMut(usize, usize, usize) -> [T; 3]) -> Self {
        let mut vectors = Vec::with_capacity(num_voxels(shape));
        for i0 in 0..shape[0] {
            for i1 in 0..shape[1] {
                for i2 in 0..shape[2] {
                    vectors.push(f(i0, i1, i2));
                }
            }
        }
        Self { shape, spacing, vectors }
    }

    #[inline]
    pub fn at(&self, i0: usize, i1: usize, i2: usize) -> [T; 3] {
        self.vectors[lin_index(self.shape, i0, i1, i2)]
    }

    pub fn all_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// Split into three scalar component planes (component-major).
    pub fn component_planes(&self) -> Vec<T> {
        let n = self.vectors.len();
        let mut out = vec![T::zero(); 3 * n];
        for (i, v) in self.vectors.iter().enumerate() {
            out[i] = v[0];
            out[n + i] = v[1];
            out[2 * n + i] = v[2];
        }
        out
    }

    /// Inverse of [`component_planes`](Self::component_planes).
    pub fn from_component_planes(
        shape: [usize; 3],
        spacing: [f64; 3],
        planes: &[T],
    ) -> Result<Self> {
        let n = num_voxels(shape);
        if planes.len() != 3 * n {
            return Err(Error::Contract(format!(
                "component buffer holds {} values, shape {shape:?} needs {}",
                planes.len(),
                3 * n
            )));
        }
        let vectors = (0..n)
            .map(|i| [planes[i], planes[n + i], planes[2 * n + i]])
            .collect();
        Self::new(shape, spacing, vectors)
    }
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn new(channels: usize, shape: [usize; 3], values: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Contract("feature grid needs at least one channel".into()));
        }
        if values.len() != channels * num_voxels(shape) {
            return Err(Error::Contract(format!(
                "feature buffer holds {} values, {channels}x{shape:?} needs {}",
                values.len(),
                channels * num_voxels(shape)
            )));
        }
        Ok(Self { channels, shape, values })
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let n = num_voxels(self.shape);
        &self.values[c * n..(c + 1) * n]
    }
}

impl LabelMap {
    pub fn new(shape: [usize; 3], values: Vec<u32>) -> Result<Self> {
        if values.len() != num_voxels(shape) {
            return Err(Error::Contract(format!(
                "label buffer holds {} values, shape {shape:?} needs {}",
                values.len(),
                num_voxels(shape)
            )));
        }
        Ok(Self { shape, values })
    }

    #[inline]
    pub fn at(&self, i0: usize, i1: usize, i2: usize) -> u32 {
        self.values[lin_index(self.shape, i0, i1, i2)]
    }

    /// Sorted distinct class IDs, background excluded.
    pub fn classes(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.values.iter().copied().filter(|&c| c != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Check every point lies inside the voxel bounds of `shape` under
    /// `spacing` (mm -> voxel conversion, origin at voxel 0).
    pub fn check_in_bounds(&self, shape: [usize; 3], spacing: [f64; 3]) -> Result<()> {
        for (index, p) in self.points.iter().enumerate() {
            for axis in 0..3 {
                let vox = p[axis] / spacing[axis];
                if !(vox >= 0.0 && vox <= (shape[axis] - 1) as f64) {
                    return Err(Error::LandmarkOutOfBounds { index, point: *p });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
