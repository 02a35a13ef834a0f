//! Warping of volumes, feature grids, and label maps by a displacement
//! field.

use rayon::prelude::*;

use super::interp::{sample_nearest_u32, trilinear_support};
use super::{check_same_shape, num_voxels, DisplacementField, FeatureGrid, LabelMap, Volume};
use crate::error::Result;
use crate::scalar::{cast, Scalar};

/// Warp one scalar channel: `out(x) = in(x + u(x))`, trilinear, clamped.
pub(crate) fn warp_channel<T: Scalar>(
    values: &[T],
    shape: [usize; 3],
    field: &DisplacementField<T>,
    out: &mut [T],
) {
    let n12 = shape[1] * shape[2];
    out.par_chunks_mut(n12).enumerate().for_each(|(i0, slab)| {
        let x0 = cast::<T>(i0 as f64);
        for i1 in 0..shape[1] {
            let x1 = cast::<T>(i1 as f64);
            for i2 in 0..shape[2] {
                let u = field.vectors[i0 * n12 + i1 * shape[2] + i2];
                let (idx, w, _) = trilinear_support(
                    shape,
                    x0 + u[0],
                    x1 + u[1],
                    cast::<T>(i2 as f64) + u[2],
                );
                let mut acc = T::zero();
                for k in 0..8 {
                    acc = acc + w[k] * values[idx[k]];
                }
                slab[i1 * shape[2] + i2] = acc;
            }
        }
    });
}

/// Warp a volume: `out(x) = v(x + u(x))` with trilinear interpolation and
/// border clamping.
pub fn warp<T: Scalar>(v: &Volume<T>, field: &DisplacementField<T>) -> Result<Volume<T>> {
    check_same_shape(v.shape, field.shape, "warp(volume, field)")?;
    let mut out = vec![T::zero(); v.values.len()];
    warp_channel(&v.values, v.shape, field, &mut out);
    Ok(Volume {
        shape: v.shape,
        spacing: v.spacing,
        values: out,
    })
}

/// Warp every channel of a feature grid independently with the same field.
pub fn warp_feature_grid<T: Scalar>(
    g: &FeatureGrid<T>,
    field: &DisplacementField<T>,
) -> Result<FeatureGrid<T>> {
    check_same_shape(g.shape, field.shape, "warp(features, field)")?;
    let n = num_voxels(g.shape);
    let mut out = vec![T::zero(); g.values.len()];
    for c in 0..g.channels {
        warp_channel(&g.values[c * n..(c + 1) * n], g.shape, field, &mut out[c * n..(c + 1) * n]);
    }
    Ok(FeatureGrid {
        channels: g.channels,
        shape: g.shape,
        values: out,
    })
}

/// Warp a label map with nearest-neighbor sampling (class IDs must not be
/// blended).
pub fn warp_labels<T: Scalar>(labels: &LabelMap, field: &DisplacementField<T>) -> Result<LabelMap> {
    check_same_shape(labels.shape, field.shape, "warp(labels, field)")?;
    let shape = labels.shape;
    let n12 = shape[1] * shape[2];
    let mut out = vec![0u32; labels.values.len()];
    out.par_chunks_mut(n12).enumerate().for_each(|(i0, slab)| {
        for i1 in 0..shape[1] {
            for i2 in 0..shape[2] {
                let u = field.vectors[i0 * n12 + i1 * shape[2] + i2];
                slab[i1 * shape[2] + i2] = sample_nearest_u32(
                    &labels.values,
                    shape,
                    i0 as f64 + u[0].to_f64().unwrap(),
                    i1 as f64 + u[1].to_f64().unwrap(),
                    i2 as f64 + u[2].to_f64().unwrap(),
                );
            }
        }
    });
    Ok(LabelMap {
        shape,
        values: out,
    })
}
