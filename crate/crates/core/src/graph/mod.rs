//! Reverse-mode automatic differentiation over a define-by-run tape.
//!
//! Every training iteration builds a fresh [`Tape`]: leaves are pushed with
//! [`Tape::constant`] (inputs) or [`Tape::param`] (weights), each op appends
//! a node holding its output value plus a backward closure, and
//! [`Tape::backward`] walks the nodes in reverse accumulating gradients.
//!
//! All kernels are written gather-style (each output element is a
//! sequential sum), so results are bit-identical regardless of the rayon
//! thread count.

pub mod ops;
pub mod optim;
mod tensor;

pub use tensor::Tensor;

use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

type BackwardFn<T> = Box<dyn Fn(&Tape<T>, &Tensor<T>, &mut [Option<Tensor<T>>])>;

struct Node<T: Scalar> {
    value: Option<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Gradient-recording arena for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new(grad_enabled: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, None)
    }

    /// Leaf that accumulates a gradient (a trainable weight, or an input a
    /// gradient check differentiates against).
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        let requires_grad = self.grad_enabled;
        self.push(value, requires_grad, None)
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            requires_grad,
            backward: None,
        });
        let id = NodeId(self.nodes.len() - 1);
        if requires_grad {
            self.nodes[id.0].backward = backward;
        }
        id
    }

    pub(crate) fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Attach a backward closure to a node created with `push(.., None)`;
    /// used by ops whose closure must know the node's own id.
    pub(crate) fn set_backward(&mut self, id: NodeId, f: BackwardFn<T>) {
        if self.nodes[id.0].requires_grad {
            self.nodes[id.0].backward = Some(f);
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("node value was released")
    }

    /// Drop a node's buffer in inference mode to bound peak memory. A no-op
    /// while gradients are being recorded (backward still needs the value).
    pub fn release(&mut self, id: NodeId) {
        if !self.grad_enabled {
            self.nodes[id.0].value = None;
        }
    }

    pub fn release_all(&mut self, ids: &[NodeId]) {
        for &id in ids {
            self.release(id);
        }
    }

    /// Reverse sweep from `loss` (a scalar node). Returns per-node gradient
    /// slots; look up leaves of interest by their `NodeId`.
    pub fn backward(&self, loss: NodeId) -> Gradients<T> {
        assert!(self.grad_enabled, "backward on a no-grad tape");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::new(
            self.value(loss).shape.clone(),
            vec![T::one(); self.value(loss).numel()],
        );
        grads[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            if let Some(f) = self.nodes[i].backward.as_ref() {
                f(self, &gout, &mut grads);
            }
            grads[i] = Some(gout);
        }
        Gradients { grads }
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. the node, if any flowed into it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a leaf, zeros if none reached it.
    pub fn take(&mut self, id: NodeId, like: &Tensor<T>) -> Tensor<T> {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros_like(like))
    }
}

/// Accumulate `delta` into the gradient slot for `id`.
pub(crate) fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    id: NodeId,
    delta: Tensor<T>,
) {
    match &mut grads[id.0] {
        Some(g) => g.accumulate(&delta),
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Finite-difference checker shared by the op unit tests.

    /// Relative L2 error between an analytic gradient and central finite
    //  differences of `f` around `x0`.
    pub fn rel_error(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], analytic: &[f64], step: f64) -> f64 {
        assert_eq!(x0.len(), analytic.len());
        let mut fd = vec![0.0; x0.len()];
        let mut x = x0.to_vec();
        for i in 0..x.len() {
            let keep = x[i];
            x[i] = keep + step;
            let hi = f(&x);
            x[i] = keep - step;
            let lo = f(&x);
            x[i] = keep;
            fd[i] = (hi - lo) / (2.0 * step);
        }
        let num: f64 = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        num / den.max(1e-12)
    }
}
