//! Property tests for the spec-level invariants of the grid ops, losses,
//! and metrics.

use fusereg::losses::{diffusion_reg, lncc};
use fusereg::metrics::{dice, hd95, tre};
use fusereg::volgrid::{
    compose_fields, resample_field, upsample_field, warp, DisplacementField, LabelMap,
    LandmarkSet, Volume,
};
use proptest::prelude::*;

fn arb_shape() -> impl Strategy<Value = [usize; 3]> {
    (3usize..8, 3usize..8, 3usize..8).prop_map(|(a, b, c)| [a, b, c])
}

fn arb_volume(shape: [usize; 3]) -> impl Strategy<Value = Volume<f64>> {
    let n = shape[0] * shape[1] * shape[2];
    prop::collection::vec(-10.0f64..10.0, n)
        .prop_map(move |values| Volume::new(shape, [1.0; 3], values).unwrap())
}

fn arb_field(shape: [usize; 3], max: f64) -> impl Strategy<Value = DisplacementField<f64>> {
    let n = shape[0] * shape[1] * shape[2];
    prop::collection::vec((-max..max, -max..max, -max..max), n).prop_map(move |v| {
        DisplacementField::new(shape, [1.0; 3], v.into_iter().map(|(a, b, c)| [a, b, c]).collect())
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn warp_zero_field_is_identity(v in arb_shape().prop_flat_map(arb_volume)) {
        let phi = DisplacementField::identity(v.shape, v.spacing);
        let w = warp(&v, &phi).unwrap();
        prop_assert_eq!(w.values, v.values);
    }

    #[test]
    fn warp_is_linear(
        (v1, v2, phi) in arb_shape().prop_flat_map(|s| (arb_volume(s), arb_volume(s), arb_field(s, 2.0))),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let combo = Volume::new(
            v1.shape,
            v1.spacing,
            v1.values.iter().zip(&v2.values).map(|(a, b)| alpha * a + beta * b).collect(),
        ).unwrap();
        let wc = warp(&combo, &phi).unwrap();
        let w1 = warp(&v1, &phi).unwrap();
        let w2 = warp(&v2, &phi).unwrap();
        for i in 0..wc.values.len() {
            prop_assert!((wc.values[i] - (alpha * w1.values[i] + beta * w2.values[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_identity_laws(phi in arb_shape().prop_flat_map(|s| arb_field(s, 2.0))) {
        let zero = DisplacementField::identity(phi.shape, phi.spacing);
        prop_assert_eq!(&compose_fields(&zero, &phi).unwrap().vectors, &phi.vectors);
        prop_assert_eq!(&compose_fields(&phi, &zero).unwrap().vectors, &phi.vectors);
    }

    #[test]
    fn constant_fields_rescale_exactly(
        shape in (2usize..5, 2usize..5, 2usize..5).prop_map(|(a, b, c)| [a, b, c]),
        t in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
        factor in 2usize..4,
        target in (2usize..9, 2usize..9, 2usize..9).prop_map(|(a, b, c)| [a, b, c]),
    ) {
        let f = DisplacementField::from_fn(shape, [1.0; 3], |_, _, _| [t.0, t.1, t.2]);
        let up = upsample_field(&f, factor).unwrap();
        let k = factor as f64;
        for v in &up.vectors {
            prop_assert_eq!(*v, [t.0 * k, t.1 * k, t.2 * k]);
        }
        let r = resample_field(&f, target).unwrap();
        let ratio = [
            target[0] as f64 / shape[0] as f64,
            target[1] as f64 / shape[1] as f64,
            target[2] as f64 / shape[2] as f64,
        ];
        for v in &r.vectors {
            for c in 0..3 {
                let expect = [t.0, t.1, t.2][c] * ratio[c];
                prop_assert!((v[c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lncc_symmetry_and_range(
        (a, b) in (5usize..9, 5usize..9, 5usize..9)
            .prop_map(|(x, y, z)| [x, y, z])
            .prop_flat_map(|s| (arb_volume(s), arb_volume(s))),
    ) {
        let ab = lncc(&a, &b, 5, 1e-5).unwrap();
        let ba = lncc(&b, &a, 5, 1e-5).unwrap();
        prop_assert!((ab - ba).abs() < 1e-6);
        prop_assert!((-1.0 - 1e-3..=1.0 + 1e-3).contains(&ab));
    }

    #[test]
    fn diffusion_translation_invariant_zero(
        t in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
        shape in arb_shape(),
    ) {
        let f = DisplacementField::from_fn(shape, [1.0; 3], |_, _, _| [t.0, t.1, t.2]);
        prop_assert_eq!(diffusion_reg(&f), 0.0);
    }

    #[test]
    fn dice_symmetric_and_bounded(
        (va, vb) in (3usize..7, 3usize..7, 3usize..7).prop_flat_map(|(a, b, c)| {
            let n = a * b * c;
            (
                Just([a, b, c]),
                prop::collection::vec(0u32..4, n),
                prop::collection::vec(0u32..4, n),
            )
        }).prop_map(|(s, x, y)| (LabelMap::new(s, x).unwrap(), LabelMap::new(s, y).unwrap())),
    ) {
        let ab = dice(&va, &vb, None);
        let ba = dice(&vb, &va, None);
        match (ab, ba) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x.mean - y.mean).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&x.mean));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "symmetry broken in error behavior"),
        }
    }

    #[test]
    fn tre_zero_field_is_mean_raw_distance(
        pts in prop::collection::vec(((1.0f64..6.0), (1.0f64..6.0), (1.0f64..6.0)), 1..6),
        offsets in prop::collection::vec(((-1.0f64..1.0), (-1.0f64..1.0), (-1.0f64..1.0)), 6),
    ) {
        let fixed = LandmarkSet::new(pts.iter().map(|p| [p.0, p.1, p.2]).collect());
        let moving = LandmarkSet::new(
            pts.iter().zip(&offsets).map(|(p, o)| [p.0 + o.0, p.1 + o.1, p.2 + o.2]).collect(),
        );
        let phi = DisplacementField::<f64>::identity([8, 8, 8], [1.0; 3]);
        let got = tre(&fixed, &moving, &phi, [1.0; 3]).unwrap();
        let expect: f64 = fixed
            .points
            .iter()
            .zip(&moving.points)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
            .sum::<f64>() / fixed.len() as f64;
        prop_assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn hd95_symmetric_and_below_max_hausdorff(
        (shape, xa, xb) in (3usize..6, 3usize..6, 3usize..6).prop_flat_map(|(a, b, c)| {
            let n = a * b * c;
            (
                Just([a, b, c]),
                prop::collection::vec(prop::bool::weighted(0.3), n),
                prop::collection::vec(prop::bool::weighted(0.3), n),
            )
        }),
    ) {
        let ma = LabelMap::new(shape, xa.iter().map(|&b| b as u32).collect()).unwrap();
        let mb = LabelMap::new(shape, xb.iter().map(|&b| b as u32).collect()).unwrap();
        prop_assume!(ma.values.iter().any(|&v| v > 0) && mb.values.iter().any(|&v| v > 0));
        let ab = hd95(&ma, &mb, [1.0; 3]).unwrap();
        let ba = hd95(&mb, &ma, [1.0; 3]).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);

        // brute-force exact Hausdorff over boundary voxels dominates hd95
        let boundary = |m: &LabelMap| {
            let mut out = Vec::new();
            for i0 in 0..shape[0] as isize {
                for i1 in 0..shape[1] as isize {
                    for i2 in 0..shape[2] as isize {
                        if m.at(i0 as usize, i1 as usize, i2 as usize) == 0 { continue; }
                        let mut b = false;
                        for (d0, d1, d2) in [(1isize,0isize,0isize),(-1,0,0),(0,1,0),(0,-1,0),(0,0,1),(0,0,-1)] {
                            let (q0, q1, q2) = (i0 + d0, i1 + d1, i2 + d2);
                            if q0 < 0 || q1 < 0 || q2 < 0
                                || q0 >= shape[0] as isize || q1 >= shape[1] as isize || q2 >= shape[2] as isize
                                || m.at(q0 as usize, q1 as usize, q2 as usize) == 0 {
                                b = true;
                                break;
                            }
                        }
                        if b { out.push([i0 as f64, i1 as f64, i2 as f64]); }
                    }
                }
            }
            out
        };
        let ba_pts = boundary(&ma);
        let bb_pts = boundary(&mb);
        let dist = |p: &[f64; 3], q: &[f64; 3]| {
            ((p[0]-q[0]).powi(2) + (p[1]-q[1]).powi(2) + (p[2]-q[2]).powi(2)).sqrt()
        };
        let directed = |from: &[[f64; 3]], to: &[[f64; 3]]| {
            from.iter()
                .map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
                .fold(0.0f64, f64::max)
        };
        let hausdorff = directed(&ba_pts, &bb_pts).max(directed(&bb_pts, &ba_pts));
        prop_assert!(ab <= hausdorff + 1e-12, "hd95 {ab} > hausdorff {hausdorff}");
    }
}
