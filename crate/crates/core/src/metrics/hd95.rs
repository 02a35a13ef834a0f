//! 95% Hausdorff surface distance between binary masks.
//!
//! Boundary voxels are foreground voxels with at least one six-connected
//! background neighbor (out-of-volume counts as background). The pooled
//! bidirectional surface-to-surface distances are reduced with a linearly
//! interpolated 95th percentile, in mm. Nearest distances come from an
//! exact anisotropic Euclidean distance transform, O(N) per mask.

use crate::error::{Error, Result};
use crate::volgrid::{check_same_shape, lin_index, LabelMap};

/// Foreground voxels with a six-connected background neighbor.
fn boundary_voxels(mask: &LabelMap) -> Vec<[usize; 3]> {
    let s = mask.shape;
    let mut out = Vec::new();
    for i0 in 0..s[0] {
        for i1 in 0..s[1] {
            for i2 in 0..s[2] {
                if mask.at(i0, i1, i2) == 0 {
                    continue;
                }
                let pos = [i0 as isize, i1 as isize, i2 as isize];
                let mut is_boundary = false;
                'neigh: for axis in 0..3 {
                    for step in [-1isize, 1] {
                        let mut q = pos;
                        q[axis] += step;
                        let outside = (0..3).any(|a| q[a] < 0 || q[a] as usize >= s[a]);
                        if outside
                            || mask.at(q[0] as usize, q[1] as usize, q[2] as usize) == 0
                        {
                            is_boundary = true;
                            break 'neigh;
                        }
                    }
                }
                if is_boundary {
                    out.push([i0, i1, i2]);
                }
            }
        }
    }
    out
}

/// One pass of the exact 1-D squared-distance transform (lower envelope of
/// parabolas) over samples at positions `i * step`.
fn dt_1d(f: &[f64], step: f64, d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let x = |i: usize| i as f64 * step;
    let mut started = f[0].is_finite();
    if !started {
        // seek the first finite parabola
        let mut first = None;
        for (i, &fi) in f.iter().enumerate() {
            if fi.is_finite() {
                first = Some(i);
                break;
            }
        }
        match first {
            Some(i) => {
                v[0] = i;
                started = true;
            }
            None => {
                d[..n].fill(f64::INFINITY);
                return;
            }
        }
    }
    debug_assert!(started);
    let start = v[0] + 1;
    for q in start..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * (x(q) - x(p)));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < x(q) {
            k += 1;
        }
        let diff = x(q) - x(v[k]);
        d[q] = diff * diff + f[v[k]];
    }
}

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// seed voxel, with per-axis spacing.
fn edt_sq(shape: [usize; 3], spacing: [f64; 3], seeds: &[[usize; 3]]) -> Vec<f64> {
    let n = shape[0] * shape[1] * shape[2];
    let mut dist = vec![f64::INFINITY; n];
    for s in seeds {
        dist[lin_index(shape, s[0], s[1], s[2])] = 0.0;
    }
    let max_extent = shape.iter().copied().max().unwrap();
    let mut f = vec![0.0f64; max_extent];
    let mut d = vec![0.0f64; max_extent];
    let mut v = vec![0usize; max_extent];
    let mut z = vec![0.0f64; max_extent + 1];

    // axis 2 (contiguous rows)
    for i0 in 0..shape[0] {
        for i1 in 0..shape[1] {
            let base = (i0 * shape[1] + i1) * shape[2];
            f[..shape[2]].copy_from_slice(&dist[base..base + shape[2]]);
            dt_1d(&f[..shape[2]], spacing[2], &mut d, &mut v, &mut z);
            dist[base..base + shape[2]].copy_from_slice(&d[..shape[2]]);
        }
    }
    // axis 1
    for i0 in 0..shape[0] {
        for i2 in 0..shape[2] {
            for i1 in 0..shape[1] {
                f[i1] = dist[lin_index(shape, i0, i1, i2)];
            }
            dt_1d(&f[..shape[1]], spacing[1], &mut d, &mut v, &mut z);
            for i1 in 0..shape[1] {
                dist[lin_index(shape, i0, i1, i2)] = d[i1];
            }
        }
    }
    // axis 0
    for i1 in 0..shape[1] {
        for i2 in 0..shape[2] {
            for i0 in 0..shape[0] {
                f[i0] = dist[lin_index(shape, i0, i1, i2)];
            }
            dt_1d(&f[..shape[0]], spacing[0], &mut d, &mut v, &mut z);
            for i0 in 0..shape[0] {
                dist[lin_index(shape, i0, i1, i2)] = d[i0];
            }
        }
    }
    dist
}

/// Linearly interpolated percentile of a sorted sample (numpy "linear").
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// 95th percentile of the pooled symmetric boundary-to-boundary distances
/// between the foregrounds of `a` and `b`, in mm. Nonzero labels count as
/// foreground.
pub fn hd95(a: &LabelMap, b: &LabelMap, spacing: [f64; 3]) -> Result<f64> {
    check_same_shape(a.shape, b.shape, "hd95")?;
    let ba = boundary_voxels(a);
    let bb = boundary_voxels(b);
    if ba.is_empty() {
        return Err(Error::EmptyMask("hd95: first mask has no foreground"));
    }
    if bb.is_empty() {
        return Err(Error::EmptyMask("hd95: second mask has no foreground"));
    }

    let dist_to_b = edt_sq(a.shape, spacing, &bb);
    let dist_to_a = edt_sq(a.shape, spacing, &ba);
    let mut pooled = Vec::with_capacity(ba.len() + bb.len());
    for p in &ba {
        pooled.push(dist_to_b[lin_index(a.shape, p[0], p[1], p[2])].sqrt());
    }
    for p in &bb {
        pooled.push(dist_to_a[lin_index(a.shape, p[0], p[1], p[2])].sqrt());
    }
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(percentile(&pooled, 0.95))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(shape: [usize; 3], f: impl Fn(usize, usize, usize) -> bool) -> LabelMap {
        let mut values = Vec::new();
        for i0 in 0..shape[0] {
            for i1 in 0..shape[1] {
                for i2 in 0..shape[2] {
                    values.push(f(i0, i1, i2) as u32);
                }
            }
        }
        LabelMap::new(shape, values).unwrap()
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let m = mask([8, 8, 8], |a, b, c| (2..6).contains(&a) && b < 4 && c > 1);
        assert_eq!(hd95(&m, &m, [1.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn single_voxels_three_apart() {
        let a = mask([8, 8, 8], |x, y, z| (x, y, z) == (2, 4, 4));
        let b = mask([8, 8, 8], |x, y, z| (x, y, z) == (5, 4, 4));
        assert_eq!(hd95(&a, &b, [1.0; 3]).unwrap(), 3.0);
    }

    #[test]
    fn six_connected_dilation_is_one_mm_away() {
        let in_cube = |x: usize, y: usize, z: usize| {
            (3..7).contains(&x) && (3..7).contains(&y) && (3..7).contains(&z)
        };
        let a = mask([10, 10, 10], in_cube);
        // dilate by one voxel in the six axis directions: every boundary
        // voxel of either mask then sits exactly one voxel from the other
        let b = mask([10, 10, 10], |x, y, z| {
            in_cube(x, y, z)
                || (x > 0 && in_cube(x - 1, y, z))
                || in_cube(x + 1, y, z)
                || (y > 0 && in_cube(x, y - 1, z))
                || in_cube(x, y + 1, z)
                || (z > 0 && in_cube(x, y, z - 1))
                || in_cube(x, y, z + 1)
        });
        let d = hd95(&a, &b, [1.0; 3]).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn empty_mask_is_an_error() {
        let a = mask([4, 4, 4], |_, _, _| false);
        let b = mask([4, 4, 4], |x, _, _| x == 1);
        assert!(matches!(hd95(&a, &b, [1.0; 3]), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn anisotropic_spacing_scales_distances() {
        let a = mask([8, 8, 8], |x, y, z| (x, y, z) == (2, 4, 4));
        let b = mask([8, 8, 8], |x, y, z| (x, y, z) == (4, 4, 4));
        assert_eq!(hd95(&a, &b, [2.5, 1.0, 1.0]).unwrap(), 5.0);
    }
}
