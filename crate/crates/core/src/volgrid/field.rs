//! Displacement-field resampling and composition.

use super::interp::trilinear_support;
use super::{check_same_shape, num_voxels, DisplacementField};
use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

fn resample_vectors<T: Scalar>(
    field: &DisplacementField<T>,
    target: [usize; 3],
) -> Vec<[T; 3]> {
    let src = field.shape;
    let ratio = [
        src[0] as f64 / target[0] as f64,
        src[1] as f64 / target[1] as f64,
        src[2] as f64 / target[2] as f64,
    ];
    let mut out = Vec::with_capacity(num_voxels(target));
    for i0 in 0..target[0] {
        let x0 = cast::<T>(i0 as f64 * ratio[0]);
        for i1 in 0..target[1] {
            let x1 = cast::<T>(i1 as f64 * ratio[1]);
            for i2 in 0..target[2] {
                let x2 = cast::<T>(i2 as f64 * ratio[2]);
                let (idx, w, _) = trilinear_support(src, x0, x1, x2);
                let mut acc = [T::zero(); 3];
                for k in 0..8 {
                    let v = field.vectors[idx[k]];
                    for c in 0..3 {
                        acc[c] = acc[c] + w[k] * v[c];
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Upsample a field to `factor`x resolution and rescale the vectors into
/// the new voxel units (multiply by `factor`).
pub fn upsample_field<T: Scalar>(
    field: &DisplacementField<T>,
    factor: usize,
) -> Result<DisplacementField<T>> {
    if factor < 2 {
        return Err(Error::Contract(format!("upsample factor {factor} must be >= 2")));
    }
    let target = [
        field.shape[0] * factor,
        field.shape[1] * factor,
        field.shape[2] * factor,
    ];
    let scale = cast::<T>(factor as f64);
    let mut vectors = resample_vectors(field, target);
    for v in &mut vectors {
        for c in 0..3 {
            v[c] = v[c] * scale;
        }
    }
    Ok(DisplacementField {
        shape: target,
        spacing: [
            field.spacing[0] / factor as f64,
            field.spacing[1] / factor as f64,
            field.spacing[2] / factor as f64,
        ],
        vectors,
    })
}

/// Resample a field onto an arbitrary grid shape, rescaling each vector
/// component by the per-axis shape ratio.
pub fn resample_field<T: Scalar>(
    field: &DisplacementField<T>,
    target: [usize; 3],
) -> Result<DisplacementField<T>> {
    if target.iter().any(|&n| n == 0) {
        return Err(Error::Contract(format!("resample target {target:?} has a zero extent")));
    }
    if target == field.shape {
        return Ok(field.clone());
    }
    let scale = [
        cast::<T>(target[0] as f64 / field.shape[0] as f64),
        cast::<T>(target[1] as f64 / field.shape[1] as f64),
        cast::<T>(target[2] as f64 / field.shape[2] as f64),
    ];
    let mut vectors = resample_vectors(field, target);
    for v in &mut vectors {
        for c in 0..3 {
            v[c] = v[c] * scale[c];
        }
    }
    Ok(DisplacementField {
        shape: target,
        spacing: [
            field.spacing[0] * field.shape[0] as f64 / target[0] as f64,
            field.spacing[1] * field.shape[1] as f64 / target[1] as f64,
            field.spacing[2] * field.shape[2] as f64 / target[2] as f64,
        ],
        vectors,
    })
}

/// True function composition of two displacement fields:
/// `phi(x) = delta(x) + prev(x + delta(x))`.
///
/// Applying `phi` is then equivalent to applying `delta` first and `prev`
/// to the result.
pub fn compose_fields<T: Scalar>(
    prev_up: &DisplacementField<T>,
    delta: &DisplacementField<T>,
) -> Result<DisplacementField<T>> {
    check_same_shape(prev_up.shape, delta.shape, "compose_fields")?;
    let shape = delta.shape;
    let mut vectors = Vec::with_capacity(delta.vectors.len());
    let mut i = 0usize;
    for i0 in 0..shape[0] {
        let x0 = cast::<T>(i0 as f64);
        for i1 in 0..shape[1] {
            let x1 = cast::<T>(i1 as f64);
            for i2 in 0..shape[2] {
                let d = delta.vectors[i];
                let (idx, w, _) = trilinear_support(
                    shape,
                    x0 + d[0],
                    x1 + d[1],
                    cast::<T>(i2 as f64) + d[2],
                );
                let mut acc = d;
                for k in 0..8 {
                    let v = prev_up.vectors[idx[k]];
                    for c in 0..3 {
                        acc[c] = acc[c] + w[k] * v[c];
                    }
                }
                vectors.push(acc);
                i += 1;
            }
        }
    }
    Ok(DisplacementField {
        shape,
        spacing: delta.spacing,
        vectors,
    })
}

/// Additive fallback for ablation: `phi(x) = prev(x) + delta(x)`.
pub fn compose_fields_additive<T: Scalar>(
    prev_up: &DisplacementField<T>,
    delta: &DisplacementField<T>,
) -> Result<DisplacementField<T>> {
    check_same_shape(prev_up.shape, delta.shape, "compose_fields_additive")?;
    let vectors = prev_up
        .vectors
        .iter()
        .zip(&delta.vectors)
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
        .collect();
    Ok(DisplacementField {
        shape: delta.shape,
        spacing: delta.spacing,
        vectors,
    })
}
