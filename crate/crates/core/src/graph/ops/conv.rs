//! 3D convolution with optional stride and fused activation.

use rayon::prelude::*;

use super::Activation;
use crate::graph::{accumulate, NodeId, Tape, Tensor};
use crate::scalar::Scalar;

/// Geometry of a conv3 call: cubic kernel `k`, symmetric padding `pad`,
/// isotropic stride.
#[derive(Debug, Clone, Copy)]
pub struct Conv3Spec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub act: Activation,
}

impl Conv3Spec {
    pub fn same(act: Activation) -> Self {
        Self { kernel: 3, stride: 1, pad: 1, act }
    }

    pub fn down(act: Activation) -> Self {
        Self { kernel: 3, stride: 2, pad: 1, act }
    }

    fn out_extent(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

fn conv3_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: Conv3Spec,
) -> Tensor<T> {
    let (ic, s) = x.chw();
    let oc = w.shape[0];
    debug_assert_eq!(w.shape[1], ic);
    let k = spec.kernel;
    let os = [spec.out_extent(s[0]), spec.out_extent(s[1]), spec.out_extent(s[2])];
    let on = os[0] * os[1] * os[2];
    let xn = s[0] * s[1] * s[2];
    let mut out = vec![T::zero(); oc * on];

    // One parallel unit per (oc, o0) output slab; inner sums are sequential
    // so results do not depend on the thread count.
    out.par_chunks_mut(os[1] * os[2]).enumerate().for_each(|(slab, orow)| {
        let co = slab / os[0];
        let o0 = slab % os[0];
        for e in orow.iter_mut() {
            *e = b.data[co];
        }
        for ci in 0..ic {
            let xch = &x.data[ci * xn..(ci + 1) * xn];
            for k0 in 0..k {
                let i0 = (spec.stride * o0 + k0) as isize - spec.pad as isize;
                if i0 < 0 || i0 as usize >= s[0] {
                    continue;
                }
                let i0 = i0 as usize;
                for o1 in 0..os[1] {
                    for k1 in 0..k {
                        let i1 = (spec.stride * o1 + k1) as isize - spec.pad as isize;
                        if i1 < 0 || i1 as usize >= s[1] {
                            continue;
                        }
                        let xrow = &xch[(i0 * s[1] + i1 as usize) * s[2]..][..s[2]];
                        let wrow = &w.data[(((co * ic + ci) * k + k0) * k + k1) * k..][..k];
                        let orow1 = &mut orow[o1 * os[2]..][..os[2]];
                        for (k2, &wv) in wrow.iter().enumerate() {
                            let shift = k2 as isize - spec.pad as isize;
                            if spec.stride == 1 {
                                let lo = (-shift).max(0) as usize;
                                let hi = os[2].min((s[2] as isize - shift).max(0) as usize);
                                for o2 in lo..hi {
                                    orow1[o2] += wv * xrow[(o2 as isize + shift) as usize];
                                }
                            } else {
                                for o2 in 0..os[2] {
                                    let i2 = (spec.stride * o2) as isize + shift;
                                    if i2 >= 0 && (i2 as usize) < s[2] {
                                        orow1[o2] += wv * xrow[i2 as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for e in orow.iter_mut() {
            *e = spec.act.apply(*e);
        }
    });
    Tensor::new(vec![oc, os[0], os[1], os[2]], out)
}

/// Gradient w.r.t. the input, gather-form over input voxels.
fn conv3_input_grad<T: Scalar>(
    gpre: &Tensor<T>,
    w: &Tensor<T>,
    in_shape: &[usize],
    spec: Conv3Spec,
) -> Tensor<T> {
    let (oc, os) = gpre.chw();
    let ic = w.shape[1];
    let k = spec.kernel;
    let s = [in_shape[1], in_shape[2], in_shape[3]];
    let on = os[0] * os[1] * os[2];
    let mut gx = vec![T::zero(); ic * s[0] * s[1] * s[2]];

    gx.par_chunks_mut(s[1] * s[2]).enumerate().for_each(|(slab, grow)| {
        let ci = slab / s[0];
        let i0 = slab % s[0];
        for co in 0..oc {
            let gch = &gpre.data[co * on..(co + 1) * on];
            for k0 in 0..k {
                // i0 = stride*o0 + k0 - pad  =>  o0 = (i0 + pad - k0)/stride
                let num = i0 as isize + spec.pad as isize - k0 as isize;
                if num < 0 || num as usize % spec.stride != 0 {
                    continue;
                }
                let o0 = num as usize / spec.stride;
                if o0 >= os[0] {
                    continue;
                }
                for i1 in 0..s[1] {
                    for k1 in 0..k {
                        let num = i1 as isize + spec.pad as isize - k1 as isize;
                        if num < 0 || num as usize % spec.stride != 0 {
                            continue;
                        }
                        let o1 = num as usize / spec.stride;
                        if o1 >= os[1] {
                            continue;
                        }
                        let grow1 = &mut grow[i1 * s[2]..][..s[2]];
                        let gorow = &gch[(o0 * os[1] + o1) * os[2]..][..os[2]];
                        let wrow = &w.data[(((co * ic + ci) * k + k0) * k + k1) * k..][..k];
                        for (k2, &wv) in wrow.iter().enumerate() {
                            let shift = spec.pad as isize - k2 as isize;
                            if spec.stride == 1 {
                                let lo = (-shift).max(0) as usize;
                                let hi = s[2].min((os[2] as isize - shift).max(0) as usize);
                                for i2 in lo..hi {
                                    grow1[i2] += wv * gorow[(i2 as isize + shift) as usize];
                                }
                            } else {
                                for i2 in 0..s[2] {
                                    let num = i2 as isize + shift;
                                    if num >= 0 && num as usize % spec.stride == 0 {
                                        let o2 = num as usize / spec.stride;
                                        if o2 < os[2] {
                                            grow1[i2] += wv * gorow[o2];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(in_shape.to_vec(), gx)
}

/// Gradients w.r.t. weights and bias, one parallel unit per output channel.
fn conv3_weight_grad<T: Scalar>(
    gpre: &Tensor<T>,
    x: &Tensor<T>,
    spec: Conv3Spec,
    w_shape: &[usize],
) -> (Tensor<T>, Tensor<T>) {
    let (oc, os) = gpre.chw();
    let (ic, s) = x.chw();
    let k = spec.kernel;
    let on = os[0] * os[1] * os[2];
    let xn = s[0] * s[1] * s[2];
    let kk = k * k * k;
    let mut gw = vec![T::zero(); oc * ic * kk];
    let mut gb = vec![T::zero(); oc];

    gw.par_chunks_mut(ic * kk)
        .zip(gb.par_iter_mut())
        .enumerate()
        .for_each(|(co, (gwc, gbc))| {
            let gch = &gpre.data[co * on..(co + 1) * on];
            *gbc = gch.iter().copied().sum();
            for ci in 0..ic {
                let xch = &x.data[ci * xn..(ci + 1) * xn];
                for k0 in 0..k {
                    for k1 in 0..k {
                        for k2 in 0..k {
                            let mut acc = T::zero();
                            for o0 in 0..os[0] {
                                let i0 = (spec.stride * o0 + k0) as isize - spec.pad as isize;
                                if i0 < 0 || i0 as usize >= s[0] {
                                    continue;
                                }
                                for o1 in 0..os[1] {
                                    let i1 = (spec.stride * o1 + k1) as isize - spec.pad as isize;
                                    if i1 < 0 || i1 as usize >= s[1] {
                                        continue;
                                    }
                                    let gorow = &gch[(o0 * os[1] + o1) * os[2]..][..os[2]];
                                    let xrow =
                                        &xch[(i0 as usize * s[1] + i1 as usize) * s[2]..][..s[2]];
                                    let shift = k2 as isize - spec.pad as isize;
                                    if spec.stride == 1 {
                                        let lo = (-shift).max(0) as usize;
                                        let hi =
                                            os[2].min((s[2] as isize - shift).max(0) as usize);
                                        for o2 in lo..hi {
                                            acc += gorow[o2] * xrow[(o2 as isize + shift) as usize];
                                        }
                                    } else {
                                        for o2 in 0..os[2] {
                                            let i2 = (spec.stride * o2) as isize + shift;
                                            if i2 >= 0 && (i2 as usize) < s[2] {
                                                acc += gorow[o2] * xrow[i2 as usize];
                                            }
                                        }
                                    }
                                }
                            }
                            gwc[(ci * k + k0) * k * k + k1 * k + k2] += acc;
                        }
                    }
                }
            }
        });
    (
        Tensor::new(w_shape.to_vec(), gw),
        Tensor::new(vec![oc], gb),
    )
}

/// Differentiable 3D convolution `act(w * x + b)` with weight layout
/// `[OC, IC, k, k, k]`.
pub fn conv3<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    spec: Conv3Spec,
) -> NodeId {
    let out = conv3_forward(tape.value(x), tape.value(w), tape.value(b), spec);
    let req = tape.grad_enabled()
        && (tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b));
    let out_id = tape.push(out, req, None);
    if req {
        tape.set_backward(
            out_id,
            Box::new(move |tape, gout, grads| {
                let vout = tape.value(out_id);
                let mut gpre = Tensor::new(gout.shape.clone(), gout.data.clone());
                for (g, o) in gpre.data.iter_mut().zip(&vout.data) {
                    *g = *g * spec.act.derivative_from_output(*o);
                }
                if tape.requires_grad(x) {
                    let gx = conv3_input_grad(&gpre, tape.value(w), &tape.value(x).shape, spec);
                    accumulate(grads, x, gx);
                }
                if tape.requires_grad(w) || tape.requires_grad(b) {
                    let (gw, gb) =
                        conv3_weight_grad(&gpre, tape.value(x), spec, &tape.value(w).shape);
                    if tape.requires_grad(w) {
                        accumulate(grads, w, gw);
                    }
                    if tape.requires_grad(b) {
                        accumulate(grads, b, gb);
                    }
                }
            }),
        );
    }
    out_id
}
