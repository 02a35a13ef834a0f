//! Target registration error over landmark pairs.

use crate::error::{Error, Result};
use crate::scalar::{up, Scalar};
use crate::volgrid::{DisplacementField, LandmarkSet};

/// Trilinear field sample at a continuous voxel coordinate, evaluated in
/// f64 regardless of the field's scalar type.
fn sample_field_f64<T: Scalar>(field: &DisplacementField<T>, p: [f64; 3]) -> [f64; 3] {
    let shape = field.shape;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for axis in 0..3 {
        let max = (shape[axis] - 1) as f64;
        let c = p[axis].clamp(0.0, max);
        let mut lo = c.floor() as usize;
        if lo >= shape[axis] - 1 {
            lo = shape[axis] - 1;
        }
        base[axis] = lo;
        frac[axis] = c - lo as f64;
    }
    let mut acc = [0.0f64; 3];
    for b0 in 0..2usize {
        let i0 = (base[0] + b0).min(shape[0] - 1);
        let w0 = if b0 == 0 { 1.0 - frac[0] } else { frac[0] };
        for b1 in 0..2usize {
            let i1 = (base[1] + b1).min(shape[1] - 1);
            let w1 = if b1 == 0 { 1.0 - frac[1] } else { frac[1] };
            for b2 in 0..2usize {
                let i2 = (base[2] + b2).min(shape[2] - 1);
                let w2 = if b2 == 0 { 1.0 - frac[2] } else { frac[2] };
                let v = field.at(i0, i1, i2);
                let w = w0 * w1 * w2;
                for c in 0..3 {
                    acc[c] += w * up(v[c]);
                }
            }
        }
    }
    acc
}

/// Mean distance in mm between each moving landmark and its fixed partner
/// displaced by the field: `|| p_m - (p_f + u(p_f)) ||`.
///
/// The field maps fixed-grid coordinates to moving-image sample locations
/// (the same convention `warp` uses); `u` is interpolated trilinearly at
/// the fixed landmark and converted from voxel units to mm via `spacing`.
pub fn tre<T: Scalar>(
    fixed_pts: &LandmarkSet,
    moving_pts: &LandmarkSet,
    phi: &DisplacementField<T>,
    spacing: [f64; 3],
) -> Result<f64> {
    if fixed_pts.len() != moving_pts.len() {
        return Err(Error::Contract(format!(
            "landmark counts differ: {} fixed vs {} moving",
            fixed_pts.len(),
            moving_pts.len()
        )));
    }
    if fixed_pts.is_empty() {
        return Err(Error::Contract("tre needs at least one landmark pair".into()));
    }
    fixed_pts.check_in_bounds(phi.shape, spacing)?;
    moving_pts.check_in_bounds(phi.shape, spacing)?;

    let mut acc = 0.0f64;
    for (pf, pm) in fixed_pts.points.iter().zip(&moving_pts.points) {
        let vox = [
            pf[0] / spacing[0],
            pf[1] / spacing[1],
            pf[2] / spacing[2],
        ];
        let u = sample_field_f64(phi, vox);
        let mut d2 = 0.0f64;
        for c in 0..3 {
            let displaced = pf[c] + u[c] * spacing[c];
            d2 += (pm[c] - displaced) * (pm[c] - displaced);
        }
        acc += d2.sqrt();
    }
    Ok(acc / fixed_pts.len() as f64)
}
