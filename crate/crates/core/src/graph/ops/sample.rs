//! Differentiable trilinear sampling: warping by a displacement field and
//! grid resampling with per-channel vector rescaling.

use rayon::prelude::*;

use crate::graph::{accumulate, NodeId, Tape, Tensor};
use crate::scalar::{cast, Scalar};
use crate::volgrid::interp::trilinear_support;

struct Support<T> {
    idx: [u32; 8],
    w: [T; 8],
    frac: [T; 3],
    // raw coordinate strictly inside (0, n-1): the sample depends on it
    live: [bool; 3],
}

fn support_at<T: Scalar>(shape: [usize; 3], raw: [T; 3]) -> Support<T> {
    let (idx, w, frac) = trilinear_support(shape, raw[0], raw[1], raw[2]);
    let mut live = [false; 3];
    for axis in 0..3 {
        let max = cast::<T>((shape[axis] - 1) as f64);
        live[axis] = raw[axis] > T::zero() && raw[axis] < max;
    }
    let mut idx32 = [0u32; 8];
    for k in 0..8 {
        idx32[k] = idx[k] as u32;
    }
    Support {
        idx: idx32,
        w,
        frac,
        live,
    }
}

/// Derivatives of the trilinear sample w.r.t. each raw coordinate, given
/// the eight corner values in bit order (b0*4 + b1*2 + b2).
#[inline]
fn trilinear_coord_grad<T: Scalar>(v: &[T; 8], frac: [T; 3], live: [bool; 3]) -> [T; 3] {
    let one = T::one();
    let (f0, f1, f2) = (frac[0], frac[1], frac[2]);
    let (g0, g1, g2) = (one - f0, one - f1, one - f2);
    let d0 = g1 * g2 * (v[4] - v[0])
        + g1 * f2 * (v[5] - v[1])
        + f1 * g2 * (v[6] - v[2])
        + f1 * f2 * (v[7] - v[3]);
    let d1 = g0 * g2 * (v[2] - v[0])
        + g0 * f2 * (v[3] - v[1])
        + f0 * g2 * (v[6] - v[4])
        + f0 * f2 * (v[7] - v[5]);
    let d2 = g0 * g1 * (v[1] - v[0])
        + g0 * f1 * (v[3] - v[2])
        + f0 * g1 * (v[5] - v[4])
        + f0 * f1 * (v[7] - v[6]);
    [
        if live[0] { d0 } else { T::zero() },
        if live[1] { d1 } else { T::zero() },
        if live[2] { d2 } else { T::zero() },
    ]
}

fn warp_supports<T: Scalar>(field: &Tensor<T>) -> Vec<Support<T>> {
    let (_, s) = field.chw();
    let n = s[0] * s[1] * s[2];
    let mut sup = Vec::with_capacity(n);
    for i0 in 0..s[0] {
        for i1 in 0..s[1] {
            for i2 in 0..s[2] {
                let v = (i0 * s[1] + i1) * s[2] + i2;
                let raw = [
                    cast::<T>(i0 as f64) + field.data[v],
                    cast::<T>(i1 as f64) + field.data[n + v],
                    cast::<T>(i2 as f64) + field.data[2 * n + v],
                ];
                sup.push(support_at(s, raw));
            }
        }
    }
    sup
}

/// Warp every channel of `x` by the displacement field `field` (a
/// `[3, n0, n1, n2]` tensor in voxel units): `out(p) = x(p + u(p))`,
/// trilinear with border clamping. Gradients flow into both the sampled
/// values and the field.
pub fn warp<T: Scalar>(tape: &mut Tape<T>, x: NodeId, field: NodeId) -> NodeId {
    let vx = tape.value(x);
    let vf = tape.value(field);
    let (c, s) = vx.chw();
    assert_eq!(vf.chw().1, s, "warp: field/input spatial mismatch");
    assert_eq!(vf.shape[0], 3, "warp: field must have 3 components");
    let n = s[0] * s[1] * s[2];

    let sup = warp_supports(vf);
    let mut out = vec![T::zero(); c * n];
    out.par_chunks_mut(n).enumerate().for_each(|(ci, och)| {
        let xch = vx.channel(ci);
        for (vox, o) in och.iter_mut().enumerate() {
            let sp = &sup[vox];
            let mut acc = T::zero();
            for k in 0..8 {
                acc += sp.w[k] * xch[sp.idx[k] as usize];
            }
            *o = acc;
        }
    });

    let req = tape.grad_enabled() && (tape.requires_grad(x) || tape.requires_grad(field));
    tape.push(
        Tensor::new(vx.shape.clone(), out),
        req,
        Some(Box::new(move |tape, gout, grads| {
            let vx = tape.value(x);
            let vf = tape.value(field);
            let sup = warp_supports(vf);
            if tape.requires_grad(x) {
                let mut gx = Tensor::zeros(vx.shape.clone());
                gx.data.par_chunks_mut(n).enumerate().for_each(|(ci, gch)| {
                    let goch = gout.channel(ci);
                    for (vox, sp) in sup.iter().enumerate() {
                        let g = goch[vox];
                        for k in 0..8 {
                            gch[sp.idx[k] as usize] += sp.w[k] * g;
                        }
                    }
                });
                accumulate(grads, x, gx);
            }
            if tape.requires_grad(field) {
                let mut gf = Tensor::zeros(vf.shape.clone());
                let (gf0, rest) = gf.data.split_at_mut(n);
                let (gf1, gf2) = rest.split_at_mut(n);
                gf0.par_iter_mut()
                    .zip(gf1.par_iter_mut())
                    .zip(gf2.par_iter_mut())
                    .enumerate()
                    .for_each(|(vox, ((g0, g1), g2))| {
                        let sp = &sup[vox];
                        let mut corners = [T::zero(); 8];
                        let mut acc = [T::zero(); 3];
                        for ci in 0..c {
                            let xch = vx.channel(ci);
                            for k in 0..8 {
                                corners[k] = xch[sp.idx[k] as usize];
                            }
                            let d = trilinear_coord_grad(&corners, sp.frac, sp.live);
                            let g = gout.channel(ci)[vox];
                            for a in 0..3 {
                                acc[a] += g * d[a];
                            }
                        }
                        *g0 = acc[0];
                        *g1 = acc[1];
                        *g2 = acc[2];
                    });
                accumulate(grads, field, gf);
            }
        })),
    )
}

fn resample_supports<T: Scalar>(src: [usize; 3], dst: [usize; 3]) -> Vec<([u32; 8], [T; 8])> {
    let ratio = [
        src[0] as f64 / dst[0] as f64,
        src[1] as f64 / dst[1] as f64,
        src[2] as f64 / dst[2] as f64,
    ];
    let mut sup = Vec::with_capacity(dst[0] * dst[1] * dst[2]);
    for i0 in 0..dst[0] {
        for i1 in 0..dst[1] {
            for i2 in 0..dst[2] {
                let (idx, w, _) = trilinear_support(
                    src,
                    cast::<T>(i0 as f64 * ratio[0]),
                    cast::<T>(i1 as f64 * ratio[1]),
                    cast::<T>(i2 as f64 * ratio[2]),
                );
                let mut idx32 = [0u32; 8];
                for k in 0..8 {
                    idx32[k] = idx[k] as u32;
                }
                sup.push((idx32, w));
            }
        }
    }
    sup
}

/// Trilinear resampling onto `target` voxels (origin-aligned pure-ratio
/// mapping) with an optional per-channel multiplier; used for feature
/// upsampling (scale 1) and for displacement-field up/resampling (vector
/// components rescaled by the shape ratio).
pub fn resample<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    target: [usize; 3],
    channel_scale: Option<Vec<f64>>,
) -> NodeId {
    let vx = tape.value(x);
    let (c, src) = vx.chw();
    if let Some(sc) = &channel_scale {
        assert_eq!(sc.len(), c, "resample: one scale per channel");
    }
    let n_out = target[0] * target[1] * target[2];
    let sup = resample_supports::<T>(src, target);
    let mut out = vec![T::zero(); c * n_out];
    let scale_of = |ci: usize| -> T {
        channel_scale
            .as_ref()
            .map(|s| cast::<T>(s[ci]))
            .unwrap_or_else(T::one)
    };
    out.par_chunks_mut(n_out).enumerate().for_each(|(ci, och)| {
        let xch = vx.channel(ci);
        let sc = scale_of(ci);
        for (o, (idx, w)) in och.iter_mut().zip(&sup) {
            let mut acc = T::zero();
            for k in 0..8 {
                acc += w[k] * xch[idx[k] as usize];
            }
            *o = acc * sc;
        }
    });

    let req = tape.grad_enabled() && tape.requires_grad(x);
    let n_in = src[0] * src[1] * src[2];
    tape.push(
        Tensor::new(vec![c, target[0], target[1], target[2]], out),
        req,
        Some(Box::new(move |tape, gout, grads| {
            if !tape.requires_grad(x) {
                return;
            }
            let sup = resample_supports::<T>(src, target);
            let mut gx = Tensor::zeros(tape.value(x).shape.clone());
            gx.data.par_chunks_mut(n_in).enumerate().for_each(|(ci, gch)| {
                let sc = channel_scale
                    .as_ref()
                    .map(|s| cast::<T>(s[ci]))
                    .unwrap_or_else(T::one);
                let goch = gout.channel(ci);
                for (vox, (idx, w)) in sup.iter().enumerate() {
                    let g = goch[vox] * sc;
                    for k in 0..8 {
                        gch[idx[k] as usize] += w[k] * g;
                    }
                }
            });
            accumulate(grads, x, gx);
        })),
    )
}

/// Upsample a displacement-field tensor to 2x resolution, rescaling all
/// components into the new voxel units.
pub fn upsample_field2<T: Scalar>(tape: &mut Tape<T>, field: NodeId) -> NodeId {
    let (_, s) = tape.value(field).chw();
    resample(
        tape,
        field,
        [2 * s[0], 2 * s[1], 2 * s[2]],
        Some(vec![2.0, 2.0, 2.0]),
    )
}

/// Resample a field tensor onto `target`, rescaling component `j` by the
/// axis-`j` shape ratio.
pub fn resample_field_to<T: Scalar>(
    tape: &mut Tape<T>,
    field: NodeId,
    target: [usize; 3],
) -> NodeId {
    let (_, s) = tape.value(field).chw();
    let scale = vec![
        target[0] as f64 / s[0] as f64,
        target[1] as f64 / s[1] as f64,
        target[2] as f64 / s[2] as f64,
    ];
    resample(tape, field, target, Some(scale))
}

/// Compose displacement fields on the tape:
/// `phi(p) = delta(p) + prev(p + delta(p))`.
pub fn compose<T: Scalar>(tape: &mut Tape<T>, prev_up: NodeId, delta: NodeId) -> NodeId {
    let warped_prev = warp(tape, prev_up, delta);
    super::add(tape, delta, warped_prev)
}

/// Additive composition fallback: `phi = prev + delta`.
pub fn compose_additive<T: Scalar>(tape: &mut Tape<T>, prev_up: NodeId, delta: NodeId) -> NodeId {
    super::add(tape, delta, prev_up)
}
