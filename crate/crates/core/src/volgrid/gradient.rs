//! Finite-difference gradients and Jacobian determinants of displacement
//! fields.

use super::{lin_index, num_voxels, DisplacementField};
use crate::scalar::Scalar;

/// Which one-sided difference a stencil takes along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffSide {
    Forward,
    Backward,
}

/// One of the eight `{forward, backward}^3` one-sided difference
/// combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stencil {
    pub sides: [DiffSide; 3],
}

impl Stencil {
    /// All eight stencils, in bitmask order (bit `j` set = backward along
    /// axis `j`).
    pub fn all() -> [Stencil; 8] {
        let mut out = [Stencil {
            sides: [DiffSide::Forward; 3],
        }; 8];
        for (mask, st) in out.iter_mut().enumerate() {
            for axis in 0..3 {
                st.sides[axis] = if mask >> axis & 1 == 1 {
                    DiffSide::Backward
                } else {
                    DiffSide::Forward
                };
            }
        }
        out
    }

    /// The all-forward stencil.
    pub fn forward() -> Stencil {
        Stencil {
            sides: [DiffSide::Forward; 3],
        }
    }
}

/// One-sided difference of component `comp` along `axis` at `(i0, i1, i2)`,
/// in voxel units. Falls back to the available side at axis boundaries.
#[inline]
fn one_sided<T: Scalar>(
    field: &DisplacementField<T>,
    comp: usize,
    axis: usize,
    side: DiffSide,
    i: [usize; 3],
) -> T {
    let n = field.shape[axis];
    let side = match side {
        DiffSide::Forward if i[axis] + 1 >= n => DiffSide::Backward,
        DiffSide::Backward if i[axis] == 0 => DiffSide::Forward,
        s => s,
    };
    let mut a = i;
    let mut b = i;
    match side {
        DiffSide::Forward => a[axis] += 1,
        DiffSide::Backward => b[axis] -= 1,
    }
    let va = field.vectors[lin_index(field.shape, a[0], a[1], a[2])][comp];
    let vb = field.vectors[lin_index(field.shape, b[0], b[1], b[2])][comp];
    va - vb
}

/// Per-voxel gradient tensor `[i][j] = d u_i / d x_j` using forward
/// differences, with a backward fallback on the last slice along each axis.
pub fn spatial_gradient<T: Scalar>(field: &DisplacementField<T>) -> Vec<[[T; 3]; 3]> {
    let shape = field.shape;
    let mut out = Vec::with_capacity(num_voxels(shape));
    for i0 in 0..shape[0] {
        for i1 in 0..shape[1] {
            for i2 in 0..shape[2] {
                let i = [i0, i1, i2];
                let mut g = [[T::zero(); 3]; 3];
                for comp in 0..3 {
                    for axis in 0..3 {
                        g[comp][axis] = one_sided(field, comp, axis, DiffSide::Forward, i);
                    }
                }
                out.push(g);
            }
        }
    }
    out
}

#[inline]
fn det3<T: Scalar>(m: [[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `det(I + grad u)` at every voxel for one one-sided stencil.
pub fn jacobian_determinants<T: Scalar>(
    field: &DisplacementField<T>,
    stencil: Stencil,
) -> Vec<T> {
    let shape = field.shape;
    let mut out = Vec::with_capacity(num_voxels(shape));
    for i0 in 0..shape[0] {
        for i1 in 0..shape[1] {
            for i2 in 0..shape[2] {
                let i = [i0, i1, i2];
                let mut j = [[T::zero(); 3]; 3];
                for comp in 0..3 {
                    for axis in 0..3 {
                        j[comp][axis] = one_sided(field, comp, axis, stencil.sides[axis], i);
                    }
                }
                for d in 0..3 {
                    j[d][d] = j[d][d] + T::one();
                }
                out.push(det3(j));
            }
        }
    }
    out
}
