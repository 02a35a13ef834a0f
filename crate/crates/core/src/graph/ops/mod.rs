//! Differentiable operations. Each op appends one node to the tape; the
//! backward closure reads parent values by id and accumulates into the
//! gradient slots of parents that require it.

mod conv;
mod sample;

pub use conv::{conv3, Conv3Spec};
pub use sample::{compose, compose_additive, resample, resample_field_to, upsample_field2, warp};

use super::{accumulate, NodeId, Tape, Tensor};
use crate::scalar::{cast, Scalar};

/// Nonlinearity fused into an op's output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    #[inline]
    pub(crate) fn apply<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::None => pre,
            Activation::LeakyRelu(slope) => {
                if pre > T::zero() {
                    pre
                } else {
                    cast::<T>(slope) * pre
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-pre).exp()),
        }
    }

    /// Derivative expressed through the post-activation output.
    #[inline]
    pub(crate) fn derivative_from_output<T: Scalar>(self, out: T) -> T {
        match self {
            Activation::None => T::one(),
            Activation::LeakyRelu(slope) => {
                if out > T::zero() {
                    T::one()
                } else {
                    cast::<T>(slope)
                }
            }
            Activation::Sigmoid => out * (T::one() - out),
        }
    }
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Scalar>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> NodeId {
    let (va, vb) = (tape.value(a), tape.value(b));
    assert_eq!(va.shape, vb.shape, "add: shape mismatch");
    let data = va.data.iter().zip(&vb.data).map(|(x, y)| *x + *y).collect();
    let out = Tensor::new(va.shape.clone(), data);
    let req = tape.grad_enabled() && (tape.requires_grad(a) || tape.requires_grad(b));
    tape.push(
        out,
        req,
        Some(Box::new(move |tape, gout, grads| {
            for id in [a, b] {
                if tape.requires_grad(id) {
                    accumulate(grads, id, gout.clone());
                }
            }
        })),
    )
}

/// Multiply a tensor by a compile-time-known constant.
pub fn scale<T: Scalar>(tape: &mut Tape<T>, x: NodeId, factor: f64) -> NodeId {
    let v = tape.value(x);
    let c = cast::<T>(factor);
    let out = Tensor::new(v.shape.clone(), v.data.iter().map(|e| *e * c).collect());
    let req = tape.grad_enabled() && tape.requires_grad(x);
    tape.push(
        out,
        req,
        Some(Box::new(move |tape, gout, grads| {
            if tape.requires_grad(x) {
                let c = cast::<T>(factor);
                let g = Tensor::new(gout.shape.clone(), gout.data.iter().map(|e| *e * c).collect());
                accumulate(grads, x, g);
            }
        })),
    )
}

/// Linear combination of scalar nodes: `sum_i coeff_i * term_i`.
pub fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, terms: &[(NodeId, f64)]) -> NodeId {
    let mut acc = T::zero();
    for &(id, c) in terms {
        acc = acc + cast::<T>(c) * tape.value(id).item();
    }
    let req = tape.grad_enabled() && terms.iter().any(|&(id, _)| tape.requires_grad(id));
    let terms = terms.to_vec();
    tape.push(
        Tensor::scalar(acc),
        req,
        Some(Box::new(move |tape, gout, grads| {
            let g = gout.item();
            for &(id, c) in &terms {
                if tape.requires_grad(id) {
                    accumulate(grads, id, Tensor::scalar(cast::<T>(c) * g));
                }
            }
        })),
    )
}

/// Concatenate 4-D tensors along the channel axis.
pub fn concat_channels<T: Scalar>(tape: &mut Tape<T>, inputs: &[NodeId]) -> NodeId {
    assert!(!inputs.is_empty());
    let spatial = {
        let (_, s) = tape.value(inputs[0]).chw();
        s
    };
    let mut channels = 0usize;
    let mut data = Vec::new();
    for &id in inputs {
        let v = tape.value(id);
        let (c, s) = v.chw();
        assert_eq!(s, spatial, "concat_channels: spatial mismatch");
        channels += c;
        data.extend_from_slice(&v.data);
    }
    let out = Tensor::new(vec![channels, spatial[0], spatial[1], spatial[2]], data);
    let req = tape.grad_enabled() && inputs.iter().any(|&id| tape.requires_grad(id));
    let inputs = inputs.to_vec();
    tape.push(
        out,
        req,
        Some(Box::new(move |tape, gout, grads| {
            let n = spatial[0] * spatial[1] * spatial[2];
            let mut offset = 0usize;
            for &id in &inputs {
                let (c, _) = tape.value(id).chw();
                if tape.requires_grad(id) {
                    let g = Tensor::new(
                        vec![c, spatial[0], spatial[1], spatial[2]],
                        gout.data[offset..offset + c * n].to_vec(),
                    );
                    accumulate(grads, id, g);
                }
                offset += c * n;
            }
        })),
    )
}

/// Spatial average per channel: `[C, n0, n1, n2] -> [C]`.
pub fn global_avg_pool<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let v = tape.value(x);
    let (c, s) = v.chw();
    let n = s[0] * s[1] * s[2];
    let inv = cast::<T>(1.0 / n as f64);
    let data = (0..c)
        .map(|ci| v.channel(ci).iter().copied().sum::<T>() * inv)
        .collect();
    let req = tape.grad_enabled() && tape.requires_grad(x);
    tape.push(
        Tensor::new(vec![c], data),
        req,
        Some(Box::new(move |tape, gout, grads| {
            if !tape.requires_grad(x) {
                return;
            }
            let mut g = Tensor::zeros(tape.value(x).shape.clone());
            for ci in 0..c {
                let gv = gout.data[ci] * inv;
                for e in &mut g.data[ci * n..(ci + 1) * n] {
                    *e = gv;
                }
            }
            accumulate(grads, x, g);
        })),
    )
}

/// Channel-pooled statistics: `[C, ...] -> [2, ...]` holding the per-voxel
/// mean and max over channels.
pub fn channel_stats<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let v = tape.value(x);
    let (c, s) = v.chw();
    let n = s[0] * s[1] * s[2];
    let inv = cast::<T>(1.0 / c as f64);
    let mut data = vec![T::zero(); 2 * n];
    let mut argmax = vec![0u32; n];
    for vox in 0..n {
        let mut acc = T::zero();
        let mut best = v.data[vox];
        let mut best_c = 0u32;
        for ci in 0..c {
            let e = v.data[ci * n + vox];
            acc += e;
            if e > best {
                best = e;
                best_c = ci as u32;
            }
        }
        data[vox] = acc * inv;
        data[n + vox] = best;
        argmax[vox] = best_c;
    }
    let out = Tensor::new(vec![2, s[0], s[1], s[2]], data);
    let req = tape.grad_enabled() && tape.requires_grad(x);
    tape.push(
        out,
        req,
        Some(Box::new(move |tape, gout, grads| {
            if !tape.requires_grad(x) {
                return;
            }
            let mut g = Tensor::zeros(tape.value(x).shape.clone());
            for vox in 0..n {
                let gm = gout.data[vox] * inv;
                for ci in 0..c {
                    g.data[ci * n + vox] += gm;
                }
                g.data[argmax[vox] as usize * n + vox] += gout.data[n + vox];
            }
            accumulate(grads, x, g);
        })),
    )
}

/// Doubly-gated features: `out[c, v] = x[c, v] * gates[c] * map[v]`.
///
/// `gates` is a `[C]` vector (channel attention), `map` a `[1, ...]` tensor
/// (spatial attention).
pub fn dual_gate<T: Scalar>(tape: &mut Tape<T>, x: NodeId, gates: NodeId, map: NodeId) -> NodeId {
    let (c, s) = tape.value(x).chw();
    let n = s[0] * s[1] * s[2];
    assert_eq!(tape.value(gates).shape, vec![c], "dual_gate: gate shape");
    assert_eq!(tape.value(map).numel(), n, "dual_gate: map shape");
    let vx = tape.value(x);
    let vg = tape.value(gates);
    let vm = tape.value(map);
    let mut data = vec![T::zero(); c * n];
    for ci in 0..c {
        let gc = vg.data[ci];
        for vox in 0..n {
            data[ci * n + vox] = vx.data[ci * n + vox] * gc * vm.data[vox];
        }
    }
    let out = Tensor::new(vx.shape.clone(), data);
    let req = tape.grad_enabled()
        && (tape.requires_grad(x) || tape.requires_grad(gates) || tape.requires_grad(map));
    tape.push(
        out,
        req,
        Some(Box::new(move |tape, gout, grads| {
            let vx = tape.value(x);
            let vg = tape.value(gates);
            let vm = tape.value(map);
            if tape.requires_grad(x) {
                let mut g = Tensor::zeros(vx.shape.clone());
                for ci in 0..c {
                    let gc = vg.data[ci];
                    for vox in 0..n {
                        g.data[ci * n + vox] = gout.data[ci * n + vox] * gc * vm.data[vox];
                    }
                }
                accumulate(grads, x, g);
            }
            if tape.requires_grad(gates) {
                let mut g = Tensor::zeros(vec![c]);
                for ci in 0..c {
                    let mut acc = T::zero();
                    for vox in 0..n {
                        acc += gout.data[ci * n + vox] * vx.data[ci * n + vox] * vm.data[vox];
                    }
                    g.data[ci] = acc;
                }
                accumulate(grads, gates, g);
            }
            if tape.requires_grad(map) {
                let mut g = Tensor::zeros(vm.shape.clone());
                for ci in 0..c {
                    let gc = vg.data[ci];
                    for vox in 0..n {
                        g.data[vox] += gout.data[ci * n + vox] * vx.data[ci * n + vox] * gc;
                    }
                }
                accumulate(grads, map, g);
            }
        })),
    )
}

/// Fully connected layer on a `[I]` vector: `act(w @ x + b)` with
/// `w: [O, I]`, `b: [O]`.
pub fn linear<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    act: Activation,
) -> NodeId {
    let vx = tape.value(x);
    let vw = tape.value(w);
    let vb = tape.value(b);
    let (o, i) = (vw.shape[0], vw.shape[1]);
    assert_eq!(vx.numel(), i, "linear: input size");
    assert_eq!(vb.numel(), o, "linear: bias size");
    let mut data = Vec::with_capacity(o);
    for oi in 0..o {
        let mut acc = vb.data[oi];
        for ii in 0..i {
            acc += vw.data[oi * i + ii] * vx.data[ii];
        }
        data.push(act.apply(acc));
    }
    let req = tape.grad_enabled()
        && (tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b));
    let out_holder = tape.push(Tensor::new(vec![o], data), req, None);
    let out_id = out_holder;
    if req {
        tape.set_backward(
            out_id,
            Box::new(move |tape, gout, grads| {
                let vout = tape.value(out_id);
                let mut gpre = vec![T::zero(); o];
                for oi in 0..o {
                    gpre[oi] = gout.data[oi] * act.derivative_from_output(vout.data[oi]);
                }
                let vx = tape.value(x);
                let vw = tape.value(w);
                if tape.requires_grad(x) {
                    let mut g = Tensor::zeros(vec![i]);
                    for ii in 0..i {
                        let mut acc = T::zero();
                        for oi in 0..o {
                            acc += vw.data[oi * i + ii] * gpre[oi];
                        }
                        g.data[ii] = acc;
                    }
                    accumulate(grads, x, g);
                }
                if tape.requires_grad(w) {
                    let mut g = Tensor::zeros(vec![o, i]);
                    for oi in 0..o {
                        for ii in 0..i {
                            g.data[oi * i + ii] = gpre[oi] * vx.data[ii];
                        }
                    }
                    accumulate(grads, w, g);
                }
                if tape.requires_grad(b) {
                    accumulate(grads, b, Tensor::new(vec![o], gpre.clone()));
                }
            }),
        );
    }
    out_id
}
