//! Training objective: dual-scale local normalized cross-correlation plus
//! diffusion regularization of the displacement field.
//!
//! Local statistics are windowed sums over a cubic window clipped at the
//! volume border, computed with separable box filters in O(N). The local
//! correlation is signed by default, `cov / sqrt(va * vb + eps)`, so a
//! perfectly anti-correlated pair scores -1; the squared variant is a
//! config flag.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ops as gops;
use crate::graph::{accumulate, NodeId, Tape, Tensor};
use crate::scalar::{cast, Scalar};
use crate::volgrid::{warp, DisplacementField, Volume};

/// Weights and knobs of the total loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the full-resolution similarity term.
    pub alpha: f64,
    /// Weight of the half-resolution similarity term.
    pub beta: f64,
    /// Weight of the smoothness regularizer.
    pub lambda: f64,
    /// Cubic local window edge length (odd, >= 3).
    pub ncc_window: usize,
    /// Variance-product stabilizer.
    pub epsilon: f64,
    /// Use the squared correlation instead of the signed one.
    #[serde(default)]
    pub squared: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            lambda: 1.0,
            ncc_window: 9,
            epsilon: 1e-5,
            squared: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.ncc_window < 3 || self.ncc_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ncc_window must be odd and >= 3, got {}",
                self.ncc_window
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// The loss terms of one evaluation, assembled as
/// `total = -(alpha * ncc_full + beta * ncc_half) + lambda * reg`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ncc_full: f64,
    pub ncc_half: f64,
    pub reg: f64,
    pub total: f64,
}

// ---------------------------------------------------------------------------
// box-filter machinery
// ---------------------------------------------------------------------------

/// Separable windowed sum with the window clipped at the borders. Window
/// sums are evaluated fresh per output element (no running accumulator), so
/// rounding stays at a few ulp.
fn box_sum<T: Scalar>(input: &[T], shape: [usize; 3], radius: usize) -> Vec<T> {
    let mut a = box_sum_axis0(input, shape, radius);
    box_sum_axis1(&mut a, shape, radius);
    box_sum_axis2(&mut a, shape, radius);
    a
}

fn box_sum_axis0<T: Scalar>(input: &[T], shape: [usize; 3], radius: usize) -> Vec<T> {
    let plane = shape[1] * shape[2];
    let n = shape[0];
    let mut out = vec![T::zero(); input.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(i, oplane)| {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        for j in lo..=hi {
            let iplane = &input[j * plane..(j + 1) * plane];
            for (o, v) in oplane.iter_mut().zip(iplane) {
                *o += *v;
            }
        }
    });
    out
}

fn box_sum_axis1<T: Scalar>(buf: &mut [T], shape: [usize; 3], radius: usize) {
    let plane = shape[1] * shape[2];
    let row = shape[2];
    let n = shape[1];
    buf.par_chunks_mut(plane).for_each(|p| {
        let src = p.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let orow = &mut p[i * row..(i + 1) * row];
            orow.copy_from_slice(&src[lo * row..(lo + 1) * row]);
            for j in lo + 1..=hi {
                let irow = &src[j * row..(j + 1) * row];
                for (o, v) in orow.iter_mut().zip(irow) {
                    *o += *v;
                }
            }
        }
    });
}

fn box_sum_axis2<T: Scalar>(buf: &mut [T], shape: [usize; 3], radius: usize) {
    let row = shape[2];
    buf.par_chunks_mut(row).for_each(|r| {
        let src = r.to_vec();
        for i in 0..row {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(row - 1);
            let mut acc = T::zero();
            for v in &src[lo..=hi] {
                acc += *v;
            }
            r[i] = acc;
        }
    });
}

/// Clipped-window voxel count at index `i` along an axis of extent `n`.
#[inline]
fn window_len(i: usize, n: usize, radius: usize) -> usize {
    (i + radius).min(n - 1) - i.saturating_sub(radius) + 1
}

struct LnccStats<T> {
    mean_a: Vec<T>,
    mean_b: Vec<T>,
    cov: Vec<T>,
    var_a: Vec<T>,
    var_b: Vec<T>,
}

fn lncc_stats<T: Scalar>(a: &[T], b: &[T], shape: [usize; 3], radius: usize) -> LnccStats<T> {
    let n = a.len();
    let sa = box_sum(a, shape, radius);
    let sb = box_sum(b, shape, radius);
    let saa = box_sum(&a.iter().map(|v| *v * *v).collect::<Vec<_>>(), shape, radius);
    let sbb = box_sum(&b.iter().map(|v| *v * *v).collect::<Vec<_>>(), shape, radius);
    let sab = box_sum(
        &a.iter().zip(b).map(|(x, y)| *x * *y).collect::<Vec<_>>(),
        shape,
        radius,
    );

    let mut st = LnccStats {
        mean_a: vec![T::zero(); n],
        mean_b: vec![T::zero(); n],
        cov: vec![T::zero(); n],
        var_a: vec![T::zero(); n],
        var_b: vec![T::zero(); n],
    };
    let mut i = 0usize;
    for i0 in 0..shape[0] {
        let w0 = window_len(i0, shape[0], radius);
        for i1 in 0..shape[1] {
            let w01 = w0 * window_len(i1, shape[1], radius);
            for i2 in 0..shape[2] {
                let count = cast::<T>((w01 * window_len(i2, shape[2], radius)) as f64);
                let ma = sa[i] / count;
                let mb = sb[i] / count;
                st.mean_a[i] = ma;
                st.mean_b[i] = mb;
                st.cov[i] = sab[i] - sa[i] * mb;
                st.var_a[i] = (saa[i] - sa[i] * ma).max(T::zero());
                st.var_b[i] = (sbb[i] - sb[i] * mb).max(T::zero());
                i += 1;
            }
        }
    }
    st
}

/// Plain LNCC kernel over raw grids; `shape` applies to both.
pub(crate) fn lncc_kernel<T: Scalar>(
    a: &[T],
    b: &[T],
    shape: [usize; 3],
    window: usize,
    epsilon: f64,
    squared: bool,
) -> T {
    let radius = window / 2;
    let st = lncc_stats(a, b, shape, radius);
    let eps = cast::<T>(epsilon);
    let mut acc = T::zero();
    for i in 0..a.len() {
        let cc = if squared {
            st.cov[i] * st.cov[i] / (st.var_a[i] * st.var_b[i] + eps)
        } else {
            st.cov[i] / (st.var_a[i] * st.var_b[i] + eps).sqrt()
        };
        acc += cc;
    }
    acc / cast::<T>(a.len() as f64)
}

/// Gradient of [`lncc_kernel`] w.r.t. `b` (and, swapping roles, `a`):
/// four more box sums turn the per-window quotient-rule terms into O(N).
fn lncc_grad_one_side<T: Scalar>(
    a: &[T],
    b: &[T],
    shape: [usize; 3],
    st: &LnccStats<T>,
    window: usize,
    epsilon: f64,
    squared: bool,
    gout: T,
) -> Vec<T> {
    let radius = window / 2;
    let n = a.len();
    let eps = cast::<T>(epsilon);
    let inv_n = T::one() / cast::<T>(n as f64);
    // p(x) weights the (a_v - mean_a) term, q(x) the (b_v - mean_b) term
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    for i in 0..n {
        if squared {
            let e = st.var_a[i] * st.var_b[i] + eps;
            let two = cast::<T>(2.0);
            p[i] = two * st.cov[i] / e * inv_n;
            q[i] = two * st.cov[i] * st.cov[i] * st.var_a[i] / (e * e) * inv_n;
        } else {
            let d = (st.var_a[i] * st.var_b[i] + eps).sqrt();
            p[i] = inv_n / d;
            q[i] = st.cov[i] * st.var_a[i] / (d * d * d) * inv_n;
        }
    }
    let pma: Vec<T> = p.iter().zip(&st.mean_a).map(|(x, m)| *x * *m).collect();
    let qmb: Vec<T> = q.iter().zip(&st.mean_b).map(|(x, m)| *x * *m).collect();
    let bp = box_sum(&p, shape, radius);
    let bq = box_sum(&q, shape, radius);
    let bpma = box_sum(&pma, shape, radius);
    let bqmb = box_sum(&qmb, shape, radius);
    (0..n)
        .map(|v| gout * (a[v] * bp[v] - bpma[v] - b[v] * bq[v] + bqmb[v]))
        .collect()
}

// ---------------------------------------------------------------------------
// diffusion regularizer kernel
// ---------------------------------------------------------------------------

/// Forward differences with a backward fallback on the last slice, squared
/// and averaged over voxels: `mean_x sum_ij (d u_i / d x_j)^2`.
pub(crate) fn diffusion_kernel<T: Scalar>(planes: &[T], shape: [usize; 3]) -> T {
    let n = shape[0] * shape[1] * shape[2];
    let strides = [shape[1] * shape[2], shape[2], 1];
    let mut acc = T::zero();
    for comp in 0..3 {
        let plane = &planes[comp * n..(comp + 1) * n];
        let mut v = 0usize;
        for i0 in 0..shape[0] {
            for i1 in 0..shape[1] {
                for i2 in 0..shape[2] {
                    let pos = [i0, i1, i2];
                    for axis in 0..3 {
                        let d = if pos[axis] + 1 < shape[axis] {
                            plane[v + strides[axis]] - plane[v]
                        } else if shape[axis] > 1 {
                            plane[v] - plane[v - strides[axis]]
                        } else {
                            T::zero()
                        };
                        acc += d * d;
                    }
                    v += 1;
                }
            }
        }
    }
    acc / cast::<T>(n as f64)
}

fn diffusion_grad<T: Scalar>(planes: &[T], shape: [usize; 3], gout: T) -> Vec<T> {
    let n = shape[0] * shape[1] * shape[2];
    let strides = [shape[1] * shape[2], shape[2], 1];
    let two_over_n = cast::<T>(2.0 / n as f64) * gout;
    let mut grad = vec![T::zero(); planes.len()];
    for comp in 0..3 {
        let plane = &planes[comp * n..(comp + 1) * n];
        let gplane = &mut grad[comp * n..(comp + 1) * n];
        let mut v = 0usize;
        for i0 in 0..shape[0] {
            for i1 in 0..shape[1] {
                for i2 in 0..shape[2] {
                    let pos = [i0, i1, i2];
                    for axis in 0..3 {
                        let (hi, lo) = if pos[axis] + 1 < shape[axis] {
                            (v + strides[axis], v)
                        } else if shape[axis] > 1 {
                            (v, v - strides[axis])
                        } else {
                            continue;
                        };
                        let d = (plane[hi] - plane[lo]) * two_over_n;
                        gplane[hi] += d;
                        gplane[lo] -= d;
                    }
                    v += 1;
                }
            }
        }
    }
    grad
}

// ---------------------------------------------------------------------------
// public plain operations
// ---------------------------------------------------------------------------

fn check_window<T: Scalar>(a: &Volume<T>, window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Contract(format!("ncc window {window} must be odd and >= 3")));
    }
    if a.shape.iter().any(|&n| n < window) {
        return Err(Error::Contract(format!(
            "ncc window {window} does not fit in volume {:?}",
            a.shape
        )));
    }
    Ok(())
}

/// Mean local windowed correlation of two volumes, in `[-1, 1]` up to a
/// small numerical slack.
pub fn lncc<T: Scalar>(a: &Volume<T>, b: &Volume<T>, window: usize, epsilon: f64) -> Result<T> {
    lncc_with(a, b, window, epsilon, false)
}

/// [`lncc`] with the squared-correlation variant selectable.
pub fn lncc_with<T: Scalar>(
    a: &Volume<T>,
    b: &Volume<T>,
    window: usize,
    epsilon: f64,
    squared: bool,
) -> Result<T> {
    crate::volgrid::check_same_shape(a.shape, b.shape, "lncc")?;
    check_window(a, window)?;
    Ok(lncc_kernel(&a.values, &b.values, a.shape, window, epsilon, squared))
}

/// Mean squared spatial gradient of the field, in voxel units.
pub fn diffusion_reg<T: Scalar>(field: &DisplacementField<T>) -> T {
    let planes = field.component_planes();
    diffusion_kernel(&planes, field.shape)
}

/// Eq. of the training objective: dual-scale similarity plus smoothness of
/// the full-resolution field only.
pub fn total_loss<T: Scalar>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    phi: &DisplacementField<T>,
    phi_hat: &DisplacementField<T>,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    crate::volgrid::check_same_shape(fixed.shape, moving.shape, "total_loss volumes")?;
    crate::volgrid::check_same_shape(fixed.shape, phi.shape, "total_loss phi")?;
    let expect_half = [phi.shape[0] / 2, phi.shape[1] / 2, phi.shape[2] / 2];
    crate::volgrid::check_same_shape(expect_half, phi_hat.shape, "total_loss phi_hat")?;

    let warped_full = warp(moving, phi)?;
    let ncc_full = crate::scalar::up(lncc_with(
        fixed,
        &warped_full,
        w.ncc_window,
        w.epsilon,
        w.squared,
    )?);
    let lifted = crate::volgrid::resample_field(phi_hat, phi.shape)?;
    let warped_half = warp(moving, &lifted)?;
    let ncc_half = crate::scalar::up(lncc_with(
        fixed,
        &warped_half,
        w.ncc_window,
        w.epsilon,
        w.squared,
    )?);
    let reg = crate::scalar::up(diffusion_reg(phi));
    Ok(LossBreakdown {
        ncc_full,
        ncc_half,
        reg,
        total: -(w.alpha * ncc_full + w.beta * ncc_half) + w.lambda * reg,
    })
}

// ---------------------------------------------------------------------------
// tape operations
// ---------------------------------------------------------------------------

/// Differentiable LNCC over `[1, n0, n1, n2]` tensors.
pub fn op_lncc<T: Scalar>(
    tape: &mut Tape<T>,
    a: NodeId,
    b: NodeId,
    w: &LossWeights,
) -> NodeId {
    let (ca, shape) = tape.value(a).chw();
    let (cb, shape_b) = tape.value(b).chw();
    assert_eq!((ca, cb), (1, 1), "op_lncc expects single-channel tensors");
    assert_eq!(shape, shape_b, "op_lncc shape mismatch");
    let value = lncc_kernel(
        &tape.value(a).data,
        &tape.value(b).data,
        shape,
        w.ncc_window,
        w.epsilon,
        w.squared,
    );
    let req = tape.grad_enabled() && (tape.requires_grad(a) || tape.requires_grad(b));
    let (window, epsilon, squared) = (w.ncc_window, w.epsilon, w.squared);
    tape.push(
        Tensor::scalar(value),
        req,
        Some(Box::new(move |tape, gout, grads| {
            let va = &tape.value(a).data;
            let vb = &tape.value(b).data;
            let radius = window / 2;
            let st = lncc_stats(va, vb, shape, radius);
            let g = gout.item();
            if tape.requires_grad(b) {
                let gb = lncc_grad_one_side(va, vb, shape, &st, window, epsilon, squared, g);
                accumulate(grads, b, Tensor::new(tape.value(b).shape.clone(), gb));
            }
            if tape.requires_grad(a) {
                let swapped = LnccStats {
                    mean_a: st.mean_b.clone(),
                    mean_b: st.mean_a.clone(),
                    cov: st.cov.clone(),
                    var_a: st.var_b.clone(),
                    var_b: st.var_a.clone(),
                };
                let ga = lncc_grad_one_side(vb, va, shape, &swapped, window, epsilon, squared, g);
                accumulate(grads, a, Tensor::new(tape.value(a).shape.clone(), ga));
            }
        })),
    )
}

/// Differentiable diffusion regularizer over a `[3, ...]` field tensor.
pub fn op_diffusion<T: Scalar>(tape: &mut Tape<T>, field: NodeId) -> NodeId {
    let (c, shape) = tape.value(field).chw();
    assert_eq!(c, 3, "op_diffusion expects a 3-component field");
    let value = diffusion_kernel(&tape.value(field).data, shape);
    let req = tape.grad_enabled() && tape.requires_grad(field);
    tape.push(
        Tensor::scalar(value),
        req,
        Some(Box::new(move |tape, gout, grads| {
            if !tape.requires_grad(field) {
                return;
            }
            let g = diffusion_grad(&tape.value(field).data, shape, gout.item());
            accumulate(grads, field, Tensor::new(tape.value(field).shape.clone(), g));
        })),
    )
}

/// Node ids of the assembled loss and its terms.
pub struct TotalLossNodes {
    pub total: NodeId,
    pub ncc_full: NodeId,
    pub ncc_half: NodeId,
    pub reg: NodeId,
}

/// Build the full training objective on the tape. `fixed` and `moving` are
/// `[1, ...]` image tensors at full resolution, `phi` a `[3, ...]` field at
/// full resolution, `phi_hat` a `[3, ...]` field at half resolution.
pub fn op_total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    fixed: NodeId,
    moving: NodeId,
    phi: NodeId,
    phi_hat: NodeId,
    w: &LossWeights,
) -> TotalLossNodes {
    let (_, full_shape) = tape.value(phi).chw();
    let warped_full = gops::warp(tape, moving, phi);
    let ncc_full = op_lncc(tape, fixed, warped_full, w);
    tape.release(warped_full);
    let lifted = gops::resample_field_to(tape, phi_hat, full_shape);
    let warped_half = gops::warp(tape, moving, lifted);
    let ncc_half = op_lncc(tape, fixed, warped_half, w);
    tape.release(warped_half);
    tape.release(lifted);
    let reg = op_diffusion(tape, phi);
    let total = gops::weighted_sum(
        tape,
        &[(ncc_full, -w.alpha), (ncc_half, -w.beta), (reg, w.lambda)],
    );
    TotalLossNodes {
        total,
        ncc_full,
        ncc_half,
        reg,
    }
}

impl TotalLossNodes {
    /// Read the assembled terms back out of the tape.
    pub fn breakdown<T: Scalar>(&self, tape: &Tape<T>) -> LossBreakdown {
        LossBreakdown {
            ncc_full: crate::scalar::up(tape.value(self.ncc_full).item()),
            ncc_half: crate::scalar::up(tape.value(self.ncc_half).item()),
            reg: crate::scalar::up(tape.value(self.reg).item()),
            total: crate::scalar::up(tape.value(self.total).item()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gradcheck::rel_error;
    use crate::scalar::up;
    use crate::volgrid::resample_field;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(shape: [usize; 3], seed: u64) -> Volume<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(shape, [1.0; 3], |_, _, _| rng.gen_range(0.0..1.0))
    }

    /// Brute-force windowed correlation, one window at a time.
    fn oracle_lncc(a: &Volume<f64>, b: &Volume<f64>, window: usize, eps: f64) -> f64 {
        let r = (window / 2) as isize;
        let s = a.shape;
        let mut acc = 0.0;
        for i0 in 0..s[0] as isize {
            for i1 in 0..s[1] as isize {
                for i2 in 0..s[2] as isize {
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab, mut n) =
                        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    for j0 in (i0 - r).max(0)..=(i0 + r).min(s[0] as isize - 1) {
                        for j1 in (i1 - r).max(0)..=(i1 + r).min(s[1] as isize - 1) {
                            for j2 in (i2 - r).max(0)..=(i2 + r).min(s[2] as isize - 1) {
                                let va = a.at(j0 as usize, j1 as usize, j2 as usize);
                                let vb = b.at(j0 as usize, j1 as usize, j2 as usize);
                                sa += va;
                                sb += vb;
                                saa += va * va;
                                sbb += vb * vb;
                                sab += va * vb;
                                n += 1.0;
                            }
                        }
                    }
                    let cov = sab - sa * sb / n;
                    let va = saa - sa * sa / n;
                    let vb = sbb - sb * sb / n;
                    acc += cov / (va * vb + eps).sqrt();
                }
            }
        }
        acc / (s[0] * s[1] * s[2]) as f64
    }

    #[test]
    fn box_filter_lncc_matches_brute_force_windows() {
        let a = textured([7, 9, 8], 1);
        let b = textured([7, 9, 8], 2);
        let got = lncc(&a, &b, 5, 1e-5).unwrap();
        let expect = oracle_lncc(&a, &b, 5, 1e-5);
        assert!((got - expect).abs() < 1e-10, "got {got} expect {expect}");
    }

    #[test]
    fn self_similarity_is_one() {
        let a = textured([12, 12, 12], 3);
        let v = lncc(&a, &a, 9, 1e-5).unwrap();
        assert!((v - 1.0).abs() < 1e-4, "v = {v}");
    }

    #[test]
    fn affine_intensity_invariance() {
        let a = textured([12, 12, 12], 4);
        let b = Volume::new(
            a.shape,
            a.spacing,
            a.values.iter().map(|v| 2.0 * v + 5.0).collect(),
        )
        .unwrap();
        let v = lncc(&a, &b, 9, 1e-5).unwrap();
        assert!((v - 1.0).abs() < 1e-4, "v = {v}");
    }

    #[test]
    fn anticorrelation_scores_minus_one() {
        let a = textured([12, 12, 12], 5);
        let b = Volume::new(a.shape, a.spacing, a.values.iter().map(|v| -v).collect()).unwrap();
        let v = lncc(&a, &b, 9, 1e-5).unwrap();
        assert!((v + 1.0).abs() < 1e-4, "v = {v}");
    }

    #[test]
    fn lncc_is_symmetric_and_bounded() {
        for seed in 0..5 {
            let a = textured([8, 8, 8], 100 + seed);
            let b = textured([8, 8, 8], 200 + seed);
            let ab = lncc(&a, &b, 5, 1e-5).unwrap();
            let ba = lncc(&b, &a, 5, 1e-5).unwrap();
            assert!((ab - ba).abs() < 1e-6);
            assert!(ab > -1.0 - 1e-3 && ab < 1.0 + 1e-3);
        }
    }

    #[test]
    fn squared_variant_is_positive_for_anticorrelated() {
        let a = textured([8, 8, 8], 6);
        let b = Volume::new(a.shape, a.spacing, a.values.iter().map(|v| -v).collect()).unwrap();
        let v = lncc_with(&a, &b, 5, 1e-5, true).unwrap();
        assert!((v - 1.0).abs() < 1e-3, "v = {v}");
    }

    #[test]
    fn window_contract_is_enforced(){
        let a = textured([6, 6, 6], 7);
        assert!(lncc(&a, &a, 4, 1e-5).is_err());
        assert!(lncc(&a, &a, 1, 1e-5).is_err());
        assert!(lncc(&a, &a, 7, 1e-5).is_err()); // window exceeds extent
        let b = textured([6, 6, 8], 8);
        assert!(lncc(&a, &b, 5, 1e-5).is_err());
    }

    #[test]
    fn diffusion_of_constant_fields_is_zero() {
        let zero = DisplacementField::<f64>::identity([6, 6, 6], [1.0; 3]);
        assert_eq!(diffusion_reg(&zero), 0.0);
        let t = DisplacementField::<f64>::from_fn([6, 6, 6], [1.0; 3], |_, _, _| [2.0, -1.0, 0.5]);
        assert_eq!(diffusion_reg(&t), 0.0);
    }

    #[test]
    fn diffusion_of_linear_ramp_is_coefficient_squared() {
        let a = 0.4f64;
        let lin = DisplacementField::from_fn([6, 6, 6], [1.0; 3], |x, _, _| [a * x as f64, 0.0, 0.0]);
        let v = diffusion_reg(&lin);
        assert!((v - a * a).abs() < 1e-12, "v = {v}");
    }

    #[test]
    fn diffusion_scales_quadratically_and_exactly_for_pow2() {
        let f = DisplacementField::<f32>::from_fn([5, 6, 5], [1.0; 3], |x, y, z| {
            [
                (x as f32 * 0.8).sin() * 0.3,
                (y as f32 * 0.5).cos() * 0.2,
                (z as f32 * 1.1).sin() * 0.1,
            ]
        });
        let scaled = DisplacementField {
            shape: f.shape,
            spacing: f.spacing,
            vectors: f.vectors.iter().map(|v| [v[0] * 2.0, v[1] * 2.0, v[2] * 2.0]).collect(),
        };
        assert_eq!(diffusion_reg(&scaled), 4.0 * diffusion_reg(&f));
    }

    #[test]
    fn total_loss_perfect_alignment_is_minus_one() {
        let v = textured([16, 16, 16], 9);
        let phi = DisplacementField::identity([16, 16, 16], [1.0; 3]);
        let phi_hat = DisplacementField::identity([8, 8, 8], [2.0; 3]);
        let w = LossWeights::default();
        let out = total_loss(&v, &v, &phi, &phi_hat, &w).unwrap();
        assert!((out.total + 1.0).abs() < 1e-4, "total = {}", out.total);
        assert!((out.ncc_full - 1.0).abs() < 1e-4);
        assert!((out.ncc_half - 1.0).abs() < 1e-4);
        assert_eq!(out.reg, 0.0);
    }

    #[test]
    fn degenerate_weights_leave_only_regularization() {
        let v = textured([16, 16, 16], 10);
        let m = textured([16, 16, 16], 11);
        let phi = DisplacementField::from_fn([16, 16, 16], [1.0; 3], |x, _, _| {
            [0.02 * x as f64, 0.0, 0.0]
        });
        let phi_hat = DisplacementField::identity([8, 8, 8], [2.0; 3]);
        let w = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            lambda: 2.5,
            ..LossWeights::default()
        };
        let out = total_loss(&v, &m, &phi, &phi_hat, &w).unwrap();
        assert_eq!(out.total, 2.5 * out.reg);
    }

    #[test]
    fn translated_pair_recovers_similarity() {
        // analytic pair: moving(y) = F(y - t), so warping moving by phi = t
        // reproduces fixed. F is constant along axis 0 near the faces, so
        // the border clamp reads the true continuation and the identity
        // holds at every voxel; the other axes stay textured so no local
        // window is degenerate.
        let t = [2.0f64, 0.0, 0.0];
        let profile = |x0: f64, x1: f64, x2: f64| {
            let c = x0.clamp(4.0, 11.0);
            (0.9 * c + 0.8 * x1 + 0.3 * x2).sin() + (0.5 * x1 - 0.7 * x2 + 0.4 * c).cos()
        };
        let fixed = Volume::from_fn([16, 16, 16], [1.0; 3], |x, y, z| {
            profile(x as f64, y as f64, z as f64)
        });
        let moving = Volume::from_fn([16, 16, 16], [1.0; 3], |x, y, z| {
            profile(x as f64 - t[0], y as f64 - t[1], z as f64 - t[2])
        });
        let phi = DisplacementField::from_fn([16, 16, 16], [1.0; 3], |_, _, _| t);
        let phi_hat = resample_field(&phi, [8, 8, 8]).unwrap();
        let w = LossWeights {
            lambda: 0.0,
            ncc_window: 5,
            ..LossWeights::default()
        };
        let out = total_loss(&fixed, &moving, &phi, &phi_hat, &w).unwrap();
        assert!(
            (out.total + (w.alpha + w.beta)).abs() < 1e-3,
            "total = {}",
            out.total
        );
    }

    #[test]
    fn total_assembles_exactly_from_parts() {
        let v = textured([16, 16, 16], 13);
        let m = textured([16, 16, 16], 14);
        let phi = DisplacementField::from_fn([16, 16, 16], [1.0; 3], |x, y, _| {
            [0.01 * x as f64, -0.02 * y as f64, 0.3]
        });
        let phi_hat = DisplacementField::from_fn([8, 8, 8], [2.0; 3], |_, _, z| {
            [0.1, 0.0, 0.005 * z as f64]
        });
        let w = LossWeights::default();
        let out = total_loss(&v, &m, &phi, &phi_hat, &w).unwrap();
        assert_eq!(
            out.total,
            -(w.alpha * out.ncc_full + w.beta * out.ncc_half) + w.lambda * out.reg
        );
    }

    #[test]
    fn op_lncc_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let shape = [6usize, 6, 6];
        let n = 216;
        let a0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        for squared in [false, true] {
            let w = LossWeights {
                ncc_window: 5,
                squared,
                ..LossWeights::default()
            };
            // gradient w.r.t. b
            let (a0c, wc) = (a0.clone(), w.clone());
            let mut tape = Tape::new(true);
            let b_id = tape.param(Tensor::new(vec![1, 6, 6, 6], b0.clone()));
            let a_id = tape.constant(Tensor::new(vec![1, 6, 6, 6], a0.clone()));
            let out = op_lncc(&mut tape, a_id, b_id, &w);
            let grads = tape.backward(out);
            let analytic = grads.get(b_id).unwrap().data.clone();
            let mut f = |x: &[f64]| {
                lncc_kernel(&a0c, x, shape, wc.ncc_window, wc.epsilon, wc.squared)
            };
            let err = rel_error(&mut f, &b0, &analytic, 1e-6);
            assert!(err < 1e-6, "squared={squared} dB rel err {err}");

            // gradient w.r.t. a
            let (b0c, wc) = (b0.clone(), w.clone());
            let mut tape = Tape::new(true);
            let a_id = tape.param(Tensor::new(vec![1, 6, 6, 6], a0.clone()));
            let b_id = tape.constant(Tensor::new(vec![1, 6, 6, 6], b0.clone()));
            let out = op_lncc(&mut tape, a_id, b_id, &w);
            let grads = tape.backward(out);
            let analytic = grads.get(a_id).unwrap().data.clone();
            let mut f = |x: &[f64]| {
                lncc_kernel(x, &b0c, shape, wc.ncc_window, wc.epsilon, wc.squared)
            };
            let err = rel_error(&mut f, &a0, &analytic, 1e-6);
            assert!(err < 1e-6, "squared={squared} dA rel err {err}");
        }
    }

    #[test]
    fn op_diffusion_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let shape = [5usize, 6, 5];
        let n = 150;
        let f0: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new(true);
        let f_id = tape.param(Tensor::new(vec![3, 5, 6, 5], f0.clone()));
        let out = op_diffusion(&mut tape, f_id);
        let grads = tape.backward(out);
        let analytic = grads.get(f_id).unwrap().data.clone();
        let mut f = |x: &[f64]| diffusion_kernel(x, shape);
        let err = rel_error(&mut f, &f0, &analytic, 1e-6);
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn plain_and_tape_paths_agree() {
        let fixed = textured([16, 16, 16], 17);
        let moving = textured([16, 16, 16], 18);
        let phi = DisplacementField::from_fn([16, 16, 16], [1.0; 3], |x, y, z| {
            [
                (x as f64 * 0.7).sin() * 0.4,
                (y as f64 * 0.6).cos() * 0.3,
                (z as f64 * 0.9).sin() * 0.2,
            ]
        });
        let phi_hat = resample_field(&phi, [8, 8, 8]).unwrap();
        let w = LossWeights {
            ncc_window: 7,
            ..LossWeights::default()
        };
        let plain = total_loss(&fixed, &moving, &phi, &phi_hat, &w).unwrap();

        let mut tape = Tape::new(false);
        let f_id = tape.constant(Tensor::new(vec![1, 16, 16, 16], fixed.values.clone()));
        let m_id = tape.constant(Tensor::new(vec![1, 16, 16, 16], moving.values.clone()));
        let phi_id = tape.constant(Tensor::new(vec![3, 16, 16, 16], phi.component_planes()));
        let hat_id = tape.constant(Tensor::new(vec![3, 8, 8, 8], phi_hat.component_planes()));
        let nodes = op_total_loss(&mut tape, f_id, m_id, phi_id, hat_id, &w);
        let taped = nodes.breakdown(&tape);
        assert!((up(plain.total) - taped.total).abs() < 1e-9);
        assert!((plain.ncc_full - taped.ncc_full).abs() < 1e-9);
        assert!((plain.ncc_half - taped.ncc_half).abs() < 1e-9);
        assert!((plain.reg - taped.reg).abs() < 1e-9);
    }
}
