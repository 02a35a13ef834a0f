//! Trilinear interpolation primitives with border clamping.

use super::{lin_index, num_voxels, DisplacementField, Volume};
use crate::scalar::{cast, Scalar};

/// The eight corner weights, linear indices, and per-axis fractional
/// offsets for a clamped trilinear sample at continuous voxel coordinate
/// `(x0, x1, x2)`.
///
/// Coordinates outside `[0, n-1]` clamp to the border before corner
/// selection, so the weights always sum to one.
#[inline]
pub(crate) fn trilinear_support<T: Scalar>(
    shape: [usize; 3],
    x0: T,
    x1: T,
    x2: T,
) -> ([usize; 8], [T; 8], [T; 3]) {
    let mut base = [0usize; 3];
    let mut step = [0usize; 3]; // 0 when the upper corner collapses onto base
    let mut frac = [T::zero(); 3];
    let coords = [x0, x1, x2];
    for axis in 0..3 {
        let max = cast::<T>((shape[axis] - 1) as f64);
        let c = coords[axis].max(T::zero()).min(max);
        let f = c.floor();
        let mut lo = f.to_usize().unwrap_or(0);
        if lo >= shape[axis] - 1 {
            lo = shape[axis] - 1;
        }
        let hi = (lo + 1).min(shape[axis] - 1);
        base[axis] = lo;
        step[axis] = hi - lo;
        frac[axis] = c - cast::<T>(lo as f64);
    }

    let s12 = shape[1] * shape[2];
    let origin = (base[0] * shape[1] + base[1]) * shape[2] + base[2];
    let d0 = step[0] * s12;
    let d1 = step[1] * shape[2];
    let d2 = step[2];

    let one = T::one();
    let (f0, f1, f2) = (frac[0], frac[1], frac[2]);
    let (g0, g1, g2) = (one - f0, one - f1, one - f2);

    let idx = [
        origin,
        origin + d2,
        origin + d1,
        origin + d1 + d2,
        origin + d0,
        origin + d0 + d2,
        origin + d0 + d1,
        origin + d0 + d1 + d2,
    ];
    let w = [
        g0 * g1 * g2,
        g0 * g1 * f2,
        g0 * f1 * g2,
        g0 * f1 * f2,
        f0 * g1 * g2,
        f0 * g1 * f2,
        f0 * f1 * g2,
        f0 * f1 * f2,
    ];
    (idx, w, frac)
}

/// Trilinear sample of a scalar grid at a continuous voxel coordinate,
/// clamped to the border.
#[inline]
pub fn sample_trilinear<T: Scalar>(values: &[T], shape: [usize; 3], x0: T, x1: T, x2: T) -> T {
    let (idx, w, _) = trilinear_support(shape, x0, x1, x2);
    let mut acc = T::zero();
    for k in 0..8 {
        acc = acc + w[k] * values[idx[k]];
    }
    acc
}

/// Trilinear sample of a displacement field at a continuous voxel
/// coordinate, clamped to the border.
#[inline]
pub fn sample_field<T: Scalar>(field: &DisplacementField<T>, x0: T, x1: T, x2: T) -> [T; 3] {
    let (idx, w, _) = trilinear_support(field.shape, x0, x1, x2);
    let mut acc = [T::zero(); 3];
    for k in 0..8 {
        let v = field.vectors[idx[k]];
        for c in 0..3 {
            acc[c] = acc[c] + w[k] * v[c];
        }
    }
    acc
}

/// Resample a scalar grid onto `target` voxels using the origin-aligned
/// pure-ratio mapping `src = dst * n_src / n_dst`.
///
/// Constants are reproduced exactly at every voxel; linear ramps are exact
/// wherever the source coordinate lands in bounds.
pub(crate) fn resample_values<T: Scalar>(
    values: &[T],
    shape: [usize; 3],
    target: [usize; 3],
) -> Vec<T> {
    if shape == target {
        return values.to_vec();
    }
    let ratio = [
        shape[0] as f64 / target[0] as f64,
        shape[1] as f64 / target[1] as f64,
        shape[2] as f64 / target[2] as f64,
    ];
    let mut out = Vec::with_capacity(num_voxels(target));
    for i0 in 0..target[0] {
        let x0 = cast::<T>(i0 as f64 * ratio[0]);
        for i1 in 0..target[1] {
            let x1 = cast::<T>(i1 as f64 * ratio[1]);
            for i2 in 0..target[2] {
                let x2 = cast::<T>(i2 as f64 * ratio[2]);
                out.push(sample_trilinear(values, shape, x0, x1, x2));
            }
        }
    }
    out
}

/// Trilinear resample of a volume to a new grid shape. Values only; the
/// caller decides what the new spacing means.
pub fn resample_volume<T: Scalar>(v: &Volume<T>, target: [usize; 3], spacing: [f64; 3]) -> Volume<T> {
    Volume {
        shape: target,
        spacing,
        values: resample_values(&v.values, v.shape, target),
    }
}

/// Nearest-neighbor sample with border clamping (for label grids).
#[inline]
pub(crate) fn sample_nearest_u32(
    values: &[u32],
    shape: [usize; 3],
    x0: f64,
    x1: f64,
    x2: f64,
) -> u32 {
    let c = [x0, x1, x2];
    let mut idx = [0usize; 3];
    for axis in 0..3 {
        let max = (shape[axis] - 1) as f64;
        let r = c[axis].max(0.0).min(max).round();
        idx[axis] = r as usize;
    }
    values[lin_index(shape, idx[0], idx[1], idx[2])]
}
