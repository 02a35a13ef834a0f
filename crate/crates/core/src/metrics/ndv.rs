//! Non-diffeomorphic volume from one-sided finite-difference Jacobians.

use crate::scalar::{up, Scalar};
use crate::volgrid::{jacobian_determinants, DisplacementField, Stencil};

/// Percentage of deformed volume with negative Jacobian determinant,
/// averaged over the eight `{forward, backward}^3` one-sided stencils:
/// `100 * (1/|O|) * sum_x (1/8) * sum_s max(0, -det J_s(x))`.
///
/// Evaluated in f64 regardless of the field's scalar type; the inner
/// reduction runs voxels outer, stencils inner.
pub fn ndv<T: Scalar>(phi: &DisplacementField<T>) -> f64 {
    let phi64 = DisplacementField::<f64> {
        shape: phi.shape,
        spacing: phi.spacing,
        vectors: phi
            .vectors
            .iter()
            .map(|v| [up(v[0]), up(v[1]), up(v[2])])
            .collect(),
    };
    let dets: Vec<Vec<f64>> = Stencil::all()
        .iter()
        .map(|&s| jacobian_determinants(&phi64, s))
        .collect();
    let n = phi64.vectors.len();
    let mut total = 0.0f64;
    for x in 0..n {
        for det in &dets {
            total += (-det[x]).max(0.0);
        }
    }
    100.0 * total / (8.0 * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_field_has_no_folding() {
        let phi = DisplacementField::<f32>::identity([6, 6, 6], [1.0; 3]);
        assert_eq!(ndv(&phi), 0.0);
    }

    #[test]
    fn strong_contraction_folds() {
        // u_x = -2x gives det = -1 at every stencil in the interior
        let phi =
            DisplacementField::<f32>::from_fn([8, 8, 8], [1.0; 3], |x, _, _| {
                [-2.0 * x as f32, 0.0, 0.0]
            });
        let v = ndv(&phi);
        assert!((v - 100.0).abs() < 1e-9, "v = {v}");
    }

    #[test]
    fn translation_invariance() {
        // values quantized to 1/64 voxel so the constant shift is exact in
        // f32 and the finite differences are bit-identical
        let q = |v: i64| (v % 33 - 16) as f32 / 64.0;
        let base = DisplacementField::<f32>::from_fn([6, 7, 5], [1.0; 3], |x, y, z| {
            let h = (x * 73 + y * 31 + z * 7) as i64;
            [q(h), q(h * 5 + 1), q(h * 11 + 2)]
        });
        let shifted = DisplacementField::<f32> {
            shape: base.shape,
            spacing: base.spacing,
            vectors: base
                .vectors
                .iter()
                .map(|v| [v[0] + 5.0, v[1] - 3.0, v[2] + 11.0])
                .collect(),
        };
        assert_eq!(ndv(&base), ndv(&shifted));
    }
}
