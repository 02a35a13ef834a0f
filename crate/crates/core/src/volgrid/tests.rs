//! Oracle-backed tests for the grid substrate. The trilinear oracle here is
//! an independent f64 re-derivation, not a call into the implementation.

use super::*;
use crate::scalar::up;

/// Independent brute-force trilinear interpolation with border clamping.
fn oracle_trilinear(values: &[f64], shape: [usize; 3], p: [f64; 3]) -> f64 {
    let clamp = |v: f64, n: usize| v.max(0.0).min((n - 1) as f64);
    let c = [
        clamp(p[0], shape[0]),
        clamp(p[1], shape[1]),
        clamp(p[2], shape[2]),
    ];
    let f = [c[0].floor(), c[1].floor(), c[2].floor()];
    let mut acc = 0.0;
    for b0 in 0..2 {
        for b1 in 0..2 {
            for b2 in 0..2 {
                let q = [
                    ((f[0] as usize) + b0).min(shape[0] - 1),
                    ((f[1] as usize) + b1).min(shape[1] - 1),
                    ((f[2] as usize) + b2).min(shape[2] - 1),
                ];
                let w = (if b0 == 0 { 1.0 - (c[0] - f[0]) } else { c[0] - f[0] })
                    * (if b1 == 0 { 1.0 - (c[1] - f[1]) } else { c[1] - f[1] })
                    * (if b2 == 0 { 1.0 - (c[2] - f[2]) } else { c[2] - f[2] });
                acc += w * values[(q[0] * shape[1] + q[1]) * shape[2] + q[2]];
            }
        }
    }
    acc
}

fn ramp_x(shape: [usize; 3]) -> Volume<f64> {
    Volume::from_fn(shape, [1.0; 3], |x, _, _| x as f64)
}

#[test]
fn warp_with_zero_field_is_bitwise_identity() {
    let v = Volume::<f32>::from_fn([6, 5, 7], [1.0; 3], |a, b, c| {
        (a as f32 * 0.731 + b as f32 * 1.113 - c as f32 * 0.377).sin()
    });
    let phi = DisplacementField::identity(v.shape, v.spacing);
    let w = warp(&v, &phi).unwrap();
    assert_eq!(w.values, v.values);
}

#[test]
fn unit_translation_of_ramp_matches_oracle() {
    let v = ramp_x([8, 8, 8]);
    let phi = DisplacementField::from_fn(v.shape, [1.0; 3], |_, _, _| [1.0, 0.0, 0.0]);
    let w = warp(&v, &phi).unwrap();
    for i0 in 0..8 {
        for i1 in 0..8 {
            for i2 in 0..8 {
                let expect = oracle_trilinear(
                    &v.values,
                    v.shape,
                    [i0 as f64 + 1.0, i1 as f64, i2 as f64],
                );
                assert!((w.at(i0, i1, i2) - expect).abs() < 1e-12);
                if i0 < 7 {
                    assert_eq!(w.at(i0, i1, i2), i0 as f64 + 1.0);
                }
            }
        }
    }
}

#[test]
fn half_voxel_translation_matches_oracle() {
    let v = ramp_x([8, 8, 8]);
    let phi = DisplacementField::from_fn(v.shape, [1.0; 3], |_, _, _| [0.5, 0.0, 0.0]);
    let w = warp(&v, &phi).unwrap();
    for i0 in 0..7 {
        assert!((w.at(i0, 3, 3) - (i0 as f64 + 0.5)).abs() < 1e-12);
    }
    // border clamps
    assert_eq!(w.at(7, 3, 3), 7.0);
}

#[test]
fn warp_general_field_matches_oracle_everywhere() {
    let v = Volume::<f64>::from_fn([6, 7, 5], [1.0; 3], |a, b, c| {
        ((a * 31 + b * 17 + c * 3) % 23) as f64 * 0.17
    });
    let phi = DisplacementField::from_fn(v.shape, [1.0; 3], |a, b, c| {
        [
            ((a + 2 * b) % 5) as f64 * 0.31 - 0.7,
            ((b + 3 * c) % 7) as f64 * 0.23 - 0.6,
            ((c + a) % 3) as f64 * 0.41 - 0.4,
        ]
    });
    let w = warp(&v, &phi).unwrap();
    for i0 in 0..6 {
        for i1 in 0..7 {
            for i2 in 0..5 {
                let u = phi.at(i0, i1, i2);
                let expect = oracle_trilinear(
                    &v.values,
                    v.shape,
                    [i0 as f64 + u[0], i1 as f64 + u[1], i2 as f64 + u[2]],
                );
                assert!((w.at(i0, i1, i2) - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn warp_is_linear_in_intensities() {
    let a = Volume::<f64>::from_fn([6, 6, 6], [1.0; 3], |x, y, z| ((x * y + z) % 11) as f64);
    let b = Volume::<f64>::from_fn([6, 6, 6], [1.0; 3], |x, y, z| ((x + y * z) % 7) as f64);
    let phi = DisplacementField::from_fn([6, 6, 6], [1.0; 3], |x, y, z| {
        [x as f64 * 0.05, -(y as f64) * 0.07, z as f64 * 0.03]
    });
    let (alpha, beta) = (0.37, -1.21);
    let combo = Volume::new(
        a.shape,
        a.spacing,
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| alpha * x + beta * y)
            .collect(),
    )
    .unwrap();
    let wa = warp(&a, &phi).unwrap();
    let wb = warp(&b, &phi).unwrap();
    let wc = warp(&combo, &phi).unwrap();
    for i in 0..wc.values.len() {
        assert!((wc.values[i] - (alpha * wa.values[i] + beta * wb.values[i])).abs() < 1e-12);
    }
}

#[test]
fn warp_shape_mismatch_is_an_error() {
    let v = Volume::<f32>::zeros([4, 4, 4], [1.0; 3]);
    let phi = DisplacementField::identity([4, 4, 8], [1.0; 3]);
    assert!(matches!(warp(&v, &phi), Err(crate::Error::ShapeMismatch { .. })));
}

#[test]
fn feature_grid_channels_warp_independently() {
    let shape = [4usize, 4, 4];
    let n = 64;
    let mut values = Vec::new();
    for c in 0..3u32 {
        for i in 0..n {
            values.push((c as f32) * 100.0 + i as f32);
        }
    }
    let g = FeatureGrid::new(3, shape, values).unwrap();
    let phi = DisplacementField::from_fn(shape, [1.0; 3], |_, _, _| [0.5, 0.25, 0.0]);
    let wg = warp_feature_grid(&g, &phi).unwrap();
    for c in 0..3 {
        let single = Volume::new(shape, [1.0; 3], g.channel(c).to_vec()).unwrap();
        let ws = warp(&single, &phi).unwrap();
        assert_eq!(wg.channel(c), &ws.values[..]);
    }
}

#[test]
fn upsample_zero_and_constant_fields() {
    let zero = DisplacementField::<f32>::identity([4, 4, 4], [1.0; 3]);
    let up2 = upsample_field(&zero, 2).unwrap();
    assert_eq!(up2.shape, [8, 8, 8]);
    assert!(up2.vectors.iter().all(|v| *v == [0.0; 3]));

    let uni = DisplacementField::<f32>::from_fn([4, 4, 4], [1.0; 3], |_, _, _| [1.0, 0.0, 0.0]);
    let up2 = upsample_field(&uni, 2).unwrap();
    assert!(up2.vectors.iter().all(|v| *v == [2.0, 0.0, 0.0]));
}

#[test]
fn upsample_preserves_linear_coefficient_at_aligned_points() {
    let a = 0.25f64;
    let f = DisplacementField::from_fn([6, 6, 6], [1.0; 3], |x, _, _| [a * x as f64, 0.0, 0.0]);
    let up = upsample_field(&f, 2).unwrap();
    for x in 0..12 {
        // aligned points: even target indices map exactly onto source voxels
        if x % 2 == 0 {
            let got = up.at(x, 4, 4)[0];
            assert!((got - a * x as f64).abs() < 1e-12, "x={x} got={got}");
        }
    }
}

#[test]
fn resample_identity_and_constant_laws() {
    let zero = DisplacementField::<f32>::identity([4, 6, 4], [1.0; 3]);
    let r = resample_field(&zero, [9, 3, 13]).unwrap();
    assert_eq!(r.shape, [9, 3, 13]);
    assert!(r.vectors.iter().all(|v| *v == [0.0; 3]));

    let uni =
        DisplacementField::<f32>::from_fn([40, 56, 48], [1.0; 3], |_, _, _| [1.0, 1.0, 1.0]);
    let r = resample_field(&uni, [80, 112, 96]).unwrap();
    assert!(r.vectors.iter().all(|v| *v == [2.0, 2.0, 2.0]));

    // down then up returns a constant field exactly
    let c = DisplacementField::<f32>::from_fn([8, 8, 8], [1.0; 3], |_, _, _| [0.75, -1.5, 0.25]);
    let down = resample_field(&c, [4, 4, 4]).unwrap();
    let back = resample_field(&down, [8, 8, 8]).unwrap();
    assert_eq!(back.vectors, c.vectors);
}

#[test]
fn compose_zero_laws_are_exact() {
    let delta = DisplacementField::<f32>::from_fn([5, 5, 5], [1.0; 3], |x, y, z| {
        [x as f32 * 0.1, y as f32 * -0.2, z as f32 * 0.05]
    });
    let zero = DisplacementField::identity([5, 5, 5], [1.0; 3]);
    assert_eq!(compose_fields(&zero, &delta).unwrap().vectors, delta.vectors);
    assert_eq!(compose_fields(&delta, &zero).unwrap().vectors, delta.vectors);
}

#[test]
fn composing_uniform_translations_adds_them() {
    let t1 = DisplacementField::<f64>::from_fn([8, 8, 8], [1.0; 3], |_, _, _| [0.5, 1.0, -0.25]);
    let t2 = DisplacementField::<f64>::from_fn([8, 8, 8], [1.0; 3], |_, _, _| [1.25, -0.5, 0.75]);
    let phi = compose_fields(&t1, &t2).unwrap();
    // interior voxels (where x + t2 stays in bounds) see exactly t1 + t2
    for i0 in 1..7 {
        for i1 in 1..7 {
            for i2 in 1..7 {
                let v = phi.at(i0, i1, i2);
                assert!((v[0] - 1.75).abs() < 1e-12);
                assert!((v[1] - 0.5).abs() < 1e-12);
                assert!((v[2] - 0.5).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn composition_matches_sequential_warping() {
    // warp(v, compose(prev, delta)) == warp(warp(v, prev), delta) away from
    // borders
    let v = Volume::<f64>::from_fn([10, 10, 10], [1.0; 3], |x, y, z| {
        (x as f64 * 0.4).sin() + (y as f64 * 0.3).cos() + z as f64 * 0.02
    });
    let prev = DisplacementField::from_fn([10, 10, 10], [1.0; 3], |x, y, _| {
        [(x as f64 * 0.7).sin() * 0.4, (y as f64 * 0.5).cos() * 0.3, 0.2]
    });
    let delta = DisplacementField::from_fn([10, 10, 10], [1.0; 3], |_, y, z| {
        [0.3, (y as f64 * 0.9).sin() * 0.2, (z as f64 * 0.4).cos() * 0.25]
    });
    let composed = compose_fields(&prev, &delta).unwrap();
    let once = warp(&v, &composed).unwrap();
    let twice = warp(&warp(&v, &prev).unwrap(), &delta).unwrap();
    // the two differ by second-order interpolation error only; swapping the
    // composition arguments would produce errors an order of magnitude
    // larger, which is what this guards against
    for i0 in 2..8 {
        for i1 in 2..8 {
            for i2 in 2..8 {
                let d = (once.at(i0, i1, i2) - twice.at(i0, i1, i2)).abs();
                assert!(d < 3e-2, "({i0},{i1},{i2}): {d}");
            }
        }
    }
}

#[test]
fn spatial_gradient_of_constant_and_linear_fields() {
    let zero = DisplacementField::<f64>::identity([4, 4, 4], [1.0; 3]);
    assert!(spatial_gradient(&zero)
        .iter()
        .all(|g| g.iter().all(|row| row.iter().all(|&v| v == 0.0))));

    let t = DisplacementField::<f64>::from_fn([4, 4, 4], [1.0; 3], |_, _, _| [3.0, -2.0, 1.0]);
    assert!(spatial_gradient(&t)
        .iter()
        .all(|g| g.iter().all(|row| row.iter().all(|&v| v == 0.0))));

    let a = 0.35f64;
    let lin = DisplacementField::from_fn([5, 5, 5], [1.0; 3], |x, _, _| [a * x as f64, 0.0, 0.0]);
    for g in spatial_gradient(&lin) {
        assert!((g[0][0] - a).abs() < 1e-12);
        for (i, row) in g.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if (i, j) != (0, 0) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
}

#[test]
fn jacobian_determinant_analytic_cases() {
    let zero = DisplacementField::<f64>::identity([4, 5, 4], [1.0; 3]);
    for stencil in Stencil::all() {
        assert!(jacobian_determinants(&zero, stencil).iter().all(|&d| d == 1.0));
    }

    let a = 0.2f64;
    let lin = DisplacementField::from_fn([5, 5, 5], [1.0; 3], |x, _, _| [a * x as f64, 0.0, 0.0]);
    for stencil in Stencil::all() {
        for d in jacobian_determinants(&lin, stencil) {
            assert!((d - (1.0 + a)).abs() < 1e-12);
        }
    }

    let iso = DisplacementField::from_fn([5, 5, 5], [1.0; 3], |x, y, z| {
        [a * x as f64, a * y as f64, a * z as f64]
    });
    let expect = (1.0 + a).powi(3);
    for stencil in Stencil::all() {
        for d in jacobian_determinants(&iso, stencil) {
            assert!((d - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_and_jacobian_ignore_uniform_translations() {
    let base = DisplacementField::<f64>::from_fn([6, 5, 6], [1.0; 3], |x, y, z| {
        [
            (x as f64 * 0.8).sin() * 0.3,
            (y as f64 * 0.6).cos() * 0.2,
            (z as f64 * 1.1).sin() * 0.25,
        ]
    });
    let shifted = DisplacementField {
        shape: base.shape,
        spacing: base.spacing,
        vectors: base.vectors.iter().map(|v| [v[0] + 4.0, v[1] - 2.0, v[2] + 9.0]).collect(),
    };
    let ga = spatial_gradient(&base);
    let gb = spatial_gradient(&shifted);
    for (a, b) in ga.iter().zip(&gb) {
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-12);
            }
        }
    }
    for stencil in Stencil::all() {
        let da = jacobian_determinants(&base, stencil);
        let db = jacobian_determinants(&shifted, stencil);
        for (a, b) in da.iter().zip(&db) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn small_strain_fields_have_positive_determinants() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(97);
    for _ in 0..20 {
        // build a field by prefix-summing bounded increments so every
        // one-sided difference stays below 0.3 in magnitude
        let shape = [6usize, 6, 6];
        let mut f = DisplacementField::<f64>::identity(shape, [1.0; 3]);
        for comp in 0..3 {
            let mut grid = vec![0.0f64; 216];
            for i0 in 0..6 {
                for i1 in 0..6 {
                    for i2 in 0..6 {
                        let mut v = 0.0;
                        if i0 > 0 {
                            v = grid[((i0 - 1) * 6 + i1) * 6 + i2];
                        } else if i1 > 0 {
                            v = grid[(i0 * 6 + (i1 - 1)) * 6 + i2];
                        } else if i2 > 0 {
                            v = grid[(i0 * 6 + i1) * 6 + (i2 - 1)];
                        }
                        grid[(i0 * 6 + i1) * 6 + i2] = v + rng.gen_range(-0.09..0.09);
                    }
                }
            }
            for (vec, &g) in f.vectors.iter_mut().zip(&grid) {
                vec[comp] = g;
            }
        }
        // verify the strain bound actually holds, then positivity
        let gmax = spatial_gradient(&f)
            .iter()
            .flat_map(|m| m.iter().flat_map(|r| r.iter().cloned()))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax >= 0.3 {
            continue;
        }
        for stencil in Stencil::all() {
            for d in jacobian_determinants(&f, stencil) {
                assert!(d > 0.0, "det {d} with strain {gmax}");
            }
        }
    }
}

#[test]
fn volume_invariants_are_enforced() {
    assert!(Volume::<f32>::new([0, 4, 4], [1.0; 3], vec![]).is_err());
    assert!(Volume::<f32>::new([2, 2, 2], [1.0, 0.0, 1.0], vec![0.0; 8]).is_err());
    assert!(Volume::<f32>::new([2, 2, 2], [1.0; 3], vec![0.0; 7]).is_err());
    let v = Volume::<f32>::new([2, 2, 2], [1.0; 3], vec![0.0; 8]).unwrap();
    assert!(v.all_finite());
}

#[test]
fn component_planes_round_trip() {
    let f = DisplacementField::<f32>::from_fn([3, 4, 5], [1.0; 3], |x, y, z| {
        [x as f32, y as f32 * 2.0, z as f32 * 3.0]
    });
    let planes = f.component_planes();
    let back = DisplacementField::from_component_planes(f.shape, f.spacing, &planes).unwrap();
    assert_eq!(back.vectors, f.vectors);
}

#[test]
fn upsample_factor_below_two_is_rejected() {
    let f = DisplacementField::<f32>::identity([4, 4, 4], [1.0; 3]);
    assert!(upsample_field(&f, 1).is_err());
}

#[test]
fn warp_labels_uses_nearest_neighbor() {
    let labels = LabelMap::new(
        [4, 4, 4],
        (0..64).map(|i| if i < 32 { 1 } else { 2 }).collect(),
    )
    .unwrap();
    let phi = DisplacementField::<f32>::from_fn([4, 4, 4], [1.0; 3], |_, _, _| [0.4, 0.0, 0.0]);
    let w = warp_labels(&labels, &phi).unwrap();
    // displacement below 0.5 rounds back to the same voxel
    assert_eq!(w.values, labels.values);
    let phi2 = DisplacementField::<f32>::from_fn([4, 4, 4], [1.0; 3], |_, _, _| [0.6, 0.0, 0.0]);
    let w2 = warp_labels(&labels, &phi2).unwrap();
    assert_eq!(w2.at(1, 0, 0), labels.at(2, 0, 0));
}

#[test]
fn sample_trilinear_and_field_agree_with_oracle() {
    let values: Vec<f64> = (0..120).map(|i| ((i * 37) % 19) as f64 * 0.21).collect();
    let shape = [4, 5, 6];
    for &(a, b, c) in &[(0.0, 0.0, 0.0), (1.3, 2.7, 4.9), (-0.5, 6.4, 2.2), (3.0, 4.0, 5.0)] {
        let got = up(sample_trilinear(&values, shape, a, b, c));
        let expect = oracle_trilinear(&values, shape, [a, b, c]);
        assert!((got - expect).abs() < 1e-12);
    }
}
