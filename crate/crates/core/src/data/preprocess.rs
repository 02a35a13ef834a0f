//! Volume ingestion and conforming: normalization, 1 mm resampling, center
//! crop/pad.

use std::path::Path;

use super::nifti;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::volgrid::{resample_volume, Volume};

/// Min-max normalize to `[0, 1]` in place; constant volumes map to zeros.
pub fn normalize_minmax<T: Scalar>(v: &mut Volume<T>) {
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for &x in &v.values {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let range = hi - lo;
    if range <= T::zero() {
        for x in &mut v.values {
            *x = T::zero();
        }
        return;
    }
    for x in &mut v.values {
        *x = (*x - lo) / range;
    }
}

/// Load a NIfTI volume: spacing from the header, intensities min-max
/// normalized to `[0, 1]`.
pub fn load_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let mut v = nifti::read_volume(path)?;
    normalize_minmax(&mut v);
    Ok(v)
}

/// Center crop or zero-pad one axis: returns (src_start, dst_start, len).
fn crop_pad_extent(n: usize, target: usize) -> (usize, usize, usize) {
    if n >= target {
        ((n - target) / 2, 0, target)
    } else {
        (0, (target - n) / 2, n)
    }
}

/// Conform a volume: trilinear resample to 1 mm spacing, then center
/// crop/zero-pad to `target_shape`. Already-conforming volumes pass through
/// unchanged.
pub fn preprocess<T: Scalar>(v: &Volume<T>, target_shape: [usize; 3]) -> Volume<T> {
    let resampled = if v.spacing == [1.0, 1.0, 1.0] {
        v.clone()
    } else {
        let target = [
            ((v.shape[0] as f64 * v.spacing[0]).round() as usize).max(1),
            ((v.shape[1] as f64 * v.spacing[1]).round() as usize).max(1),
            ((v.shape[2] as f64 * v.spacing[2]).round() as usize).max(1),
        ];
        resample_volume(v, target, [1.0, 1.0, 1.0])
    };
    if resampled.shape == target_shape {
        return resampled;
    }

    let s = resampled.shape;
    let mut out = Volume::zeros(target_shape, [1.0, 1.0, 1.0]);
    let (src0, dst0, len0) = crop_pad_extent(s[0], target_shape[0]);
    let (src1, dst1, len1) = crop_pad_extent(s[1], target_shape[1]);
    let (src2, dst2, len2) = crop_pad_extent(s[2], target_shape[2]);
    for a in 0..len0 {
        for b in 0..len1 {
            let src_base = ((src0 + a) * s[1] + (src1 + b)) * s[2] + src2;
            let dst_base =
                ((dst0 + a) * target_shape[1] + (dst1 + b)) * target_shape[2] + dst2;
            out.values[dst_base..dst_base + len2]
                .copy_from_slice(&resampled.values[src_base..src_base + len2]);
        }
    }
    out
}

/// Smallest target a volume needs so every extent is divisible by
/// `divisor` (used to pick toy-run shapes).
pub fn conforming_shape(shape: [usize; 3], divisor: usize) -> [usize; 3] {
    let round_up = |n: usize| n.div_ceil(divisor) * divisor;
    [round_up(shape[0]), round_up(shape[1]), round_up(shape[2])]
}
