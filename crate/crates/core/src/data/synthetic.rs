//! Synthetic ground-truth cases: smooth random fields applied to procedural
//! multi-blob volumes, with analytically known landmarks and labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{cast, up, Scalar};
use crate::volgrid::{warp, warp_labels, DisplacementField, LabelMap, LandmarkSet, Volume};

/// A registration case with known ground truth. `fixed` is exactly
/// `warp(moving, true_field)`; landmarks mark blob centers on both sides.
#[derive(Debug, Clone)]
pub struct SyntheticCase<T> {
    pub moving: Volume<T>,
    pub fixed: Volume<T>,
    pub true_field: DisplacementField<T>,
    pub moving_landmarks: LandmarkSet,
    pub fixed_landmarks: LandmarkSet,
    pub moving_labels: LabelMap,
    pub fixed_labels: LabelMap,
}

/// Shared anatomy for a benchmark population: every case's volumes deform
/// this template, so any two volumes in the benchmark are mutually
/// alignable, the way inter-subject scans are.
#[derive(Debug, Clone)]
pub struct SyntheticTemplate<T> {
    pub volume: Volume<T>,
    pub labels: LabelMap,
    pub blob_centers: Vec<[f64; 3]>,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with wrap-around boundaries, in f64. Wrapping
/// keeps the smoothed noise stationary: clamped borders would concentrate
/// the field's extremes at the faces and starve the interior after peak
/// normalization.
fn smooth(values: &mut Vec<f64>, shape: [usize; 3], sigma: f64) {
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let idx = |i0: usize, i1: usize, i2: usize| (i0 * shape[1] + i1) * shape[2] + i2;
    for axis in 0..3 {
        let extent = shape[axis] as isize;
        let mut out = vec![0.0f64; values.len()];
        for i0 in 0..shape[0] {
            for i1 in 0..shape[1] {
                for i2 in 0..shape[2] {
                    let pos = [i0, i1, i2];
                    let mut acc = 0.0;
                    for (k, &w) in kernel.iter().enumerate() {
                        let mut q = pos;
                        let off = k as isize - radius as isize;
                        q[axis] = (pos[axis] as isize + off).rem_euclid(extent) as usize;
                        acc += w * values[idx(q[0], q[1], q[2])];
                    }
                    out[idx(i0, i1, i2)] = acc;
                }
            }
        }
        *values = out;
    }
}

/// Smooth random field with the maximum displacement component rescaled to
/// exactly `max_disp` voxels.
///
/// Two Gaussian-smoothed noise scales are mixed: a coherent low-frequency
/// part (kernel width tied to the volume extent) carries most of the
/// displacement so typical magnitudes sit near `max_disp` rather than in
/// the tail, and a fine part at `smoothness` adds local detail.
fn random_smooth_field<T: Scalar>(
    shape: [usize; 3],
    max_disp: f64,
    smoothness: f64,
    rng: &mut ChaCha8Rng,
) -> DisplacementField<T> {
    let n = shape[0] * shape[1] * shape[2];
    let sigma_bulk = (*shape.iter().min().unwrap() as f64 / 3.0).max(smoothness);
    let unit_max = |mut c: Vec<f64>, sigma: f64| -> Vec<f64> {
        smooth(&mut c, shape, sigma);
        let peak = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for v in &mut c {
            *v /= peak;
        }
        c
    };
    let mut comps: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let fine: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bulk: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fine = unit_max(fine, smoothness);
            let bulk = unit_max(bulk, sigma_bulk);
            fine.iter().zip(&bulk).map(|(f, b)| 0.25 * f + b).collect::<Vec<f64>>()
        })
        .collect();
    // each component rescaled so its own peak hits max_disp exactly
    for c in &mut comps {
        let peak = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { max_disp / peak } else { 0.0 };
        for v in c.iter_mut() {
            *v *= scale;
        }
    }
    DisplacementField {
        shape,
        spacing: [1.0; 3],
        vectors: (0..n)
            .map(|i| [cast::<T>(comps[0][i]), cast::<T>(comps[1][i]), cast::<T>(comps[2][i])])
            .collect(),
    }
}

struct Blob {
    center: [f64; 3],
    radius: f64,
    amplitude: f64,
}

/// Fixed-point solve of `p + u(p) = target` (converges while the field's
/// spatial gradient stays below 1).
fn pull_back<T: Scalar>(field: &DisplacementField<T>, target: [f64; 3]) -> Option<[f64; 3]> {
    let mut p = target;
    for _ in 0..100 {
        let u = sample_f64(field, p);
        let next = [target[0] - u[0], target[1] - u[1], target[2] - u[2]];
        let delta = (0..3).map(|c| (next[c] - p[c]).abs()).fold(0.0, f64::max);
        p = next;
        if delta < 1e-12 {
            for axis in 0..3 {
                if p[axis] < 0.0 || p[axis] > (field.shape[axis] - 1) as f64 {
                    return None;
                }
            }
            return Some(p);
        }
    }
    None
}

fn sample_f64<T: Scalar>(field: &DisplacementField<T>, p: [f64; 3]) -> [f64; 3] {
    let shape = field.shape;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for axis in 0..3 {
        let max = (shape[axis] - 1) as f64;
        let c = p[axis].clamp(0.0, max);
        let mut lo = c.floor() as usize;
        if lo >= shape[axis] - 1 {
            lo = shape[axis] - 1;
        }
        base[axis] = lo;
        frac[axis] = c - lo as f64;
    }
    let mut acc = [0.0f64; 3];
    for b0 in 0..2usize {
        let i0 = (base[0] + b0).min(shape[0] - 1);
        let w0 = if b0 == 0 { 1.0 - frac[0] } else { frac[0] };
        for b1 in 0..2usize {
            let i1 = (base[1] + b1).min(shape[1] - 1);
            let w1 = if b1 == 0 { 1.0 - frac[1] } else { frac[1] };
            for b2 in 0..2usize {
                let i2 = (base[2] + b2).min(shape[2] - 1);
                let w2 = if b2 == 0 { 1.0 - frac[2] } else { frac[2] };
                let v = field.at(i0, i1, i2);
                for c in 0..3 {
                    acc[c] += w0 * w1 * w2 * up(v[c]);
                }
            }
        }
    }
    acc
}

fn check_shape(shape: [usize; 3]) -> Result<()> {
    if shape.iter().any(|&n| n % 16 != 0 || n == 0) {
        return Err(Error::Contract(format!(
            "synthetic shape {shape:?} must be divisible by 16"
        )));
    }
    Ok(())
}

/// Build the shared template: gaussian blobs for landmarks and labels over
/// a dense two-scale texture, so the similarity has signal everywhere, the
/// way real anatomy does.
pub fn make_template<T: Scalar>(shape: [usize; 3], seed: u64) -> Result<SyntheticTemplate<T>> {
    check_shape(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape[0] * shape[1] * shape[2];

    let margin = 8.0;
    let num_blobs = rng.gen_range(6..=9);
    let blobs: Vec<Blob> = (0..num_blobs)
        .map(|_| Blob {
            center: [
                rng.gen_range(margin..shape[0] as f64 - 1.0 - margin),
                rng.gen_range(margin..shape[1] as f64 - 1.0 - margin),
                rng.gen_range(margin..shape[2] as f64 - 1.0 - margin),
            ],
            radius: rng.gen_range(2.5..4.5),
            amplitude: rng.gen_range(0.6..1.0),
        })
        .collect();

    let unit_rms = |mut t: Vec<f64>, sigma: f64| -> Vec<f64> {
        smooth(&mut t, shape, sigma);
        let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64)
            .sqrt()
            .max(f64::MIN_POSITIVE);
        for v in &mut t {
            *v /= rms;
        }
        t
    };
    let tex_fine = unit_rms((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), 1.5);
    let tex_mid = unit_rms((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), 4.0);

    let mut intensities = vec![0.0f64; n];
    let mut labels = vec![0u32; n];
    let mut i = 0usize;
    for i0 in 0..shape[0] {
        for i1 in 0..shape[1] {
            for i2 in 0..shape[2] {
                let p = [i0 as f64, i1 as f64, i2 as f64];
                let mut total = 0.0;
                let mut best = 0.0;
                let mut best_k = 0usize;
                for (k, blob) in blobs.iter().enumerate() {
                    let d2: f64 = (0..3).map(|c| (p[c] - blob.center[c]).powi(2)).sum();
                    let v = blob.amplitude * (-0.5 * d2 / (blob.radius * blob.radius)).exp();
                    total += v;
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                intensities[i] = total + 0.18 * tex_fine[i] + 0.22 * tex_mid[i];
                if best > 0.35 {
                    labels[i] = best_k as u32 + 1;
                }
                i += 1;
            }
        }
    }
    let lo = intensities.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = intensities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    Ok(SyntheticTemplate {
        volume: Volume::new(
            shape,
            [1.0; 3],
            intensities.iter().map(|v| cast::<T>((v - lo) / range)).collect(),
        )?,
        labels: LabelMap::new(shape, labels)?,
        blob_centers: blobs.iter().map(|b| b.center).collect(),
    })
}

/// Generate one case from a template: the moving image is the template
/// under a random smooth "anatomy" deformation, the fixed image is exactly
/// `warp(moving, true_field)`. Fields stay fold-free while `max_disp` is at
/// most about `0.6 * smoothness` (verified for `max_disp = 3`,
/// `smoothness = 5`).
pub fn make_case<T: Scalar>(
    template: &SyntheticTemplate<T>,
    max_disp: f64,
    smoothness: f64,
    seed: u64,
) -> Result<SyntheticCase<T>> {
    if max_disp < 0.0 {
        return Err(Error::Contract("max_disp must be >= 0".into()));
    }
    let shape = template.volume.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // per-subject shape variation, then the ground-truth deformation
    let anatomy_field = random_smooth_field::<T>(shape, max_disp, smoothness, &mut rng);
    let moving = warp(&template.volume, &anatomy_field)?;
    let moving_labels = warp_labels(&template.labels, &anatomy_field)?;

    let true_field = random_smooth_field::<T>(shape, max_disp, smoothness, &mut rng);
    let fixed = warp(&moving, &true_field)?;
    let fixed_labels = warp_labels(&moving_labels, &true_field)?;

    // landmarks: template blob centers tracked into the moving image, and
    // their fixed-image partners solving p + u(p) = center
    let mut moving_pts = Vec::new();
    let mut fixed_pts = Vec::new();
    for c in &template.blob_centers {
        let Some(cm) = pull_back(&anatomy_field, *c) else { continue };
        if let Some(p) = pull_back(&true_field, cm) {
            moving_pts.push(cm);
            fixed_pts.push(p);
        }
    }

    Ok(SyntheticCase {
        moving,
        fixed,
        true_field,
        moving_landmarks: LandmarkSet::new(moving_pts),
        fixed_landmarks: LandmarkSet::new(fixed_pts),
        moving_labels,
        fixed_labels,
    })
}

/// One-shot case generation (template and case from a single seed).
pub fn make_synthetic<T: Scalar>(
    shape: [usize; 3],
    max_disp: f64,
    smoothness: f64,
    seed: u64,
) -> Result<SyntheticCase<T>> {
    let template = make_template::<T>(shape, seed)?;
    make_case(&template, max_disp, smoothness, seed ^ 0x9E37_79B9_7F4A_7C15)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ndv, tre};

    #[test]
    fn zero_displacement_reproduces_moving_exactly() {
        let case = make_synthetic::<f32>([32, 32, 32], 0.0, 4.0, 11).unwrap();
        assert_eq!(case.moving.values, case.fixed.values);
        let t = tre(
            &case.fixed_landmarks,
            &case.moving_landmarks,
            &DisplacementField::<f32>::identity([32, 32, 32], [1.0; 3]),
            [1.0; 3],
        )
        .unwrap();
        assert!(t < 1e-9);
    }

    #[test]
    fn max_displacement_is_hit_exactly() {
        let case = make_synthetic::<f64>([32, 32, 32], 3.0, 4.0, 5).unwrap();
        let peak = case
            .true_field
            .vectors
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, &c| m.max(c.abs()));
        assert!((peak - 3.0).abs() < 1e-6, "peak = {peak}");
    }

    #[test]
    fn default_parameters_stay_fold_free() {
        for seed in 0..6 {
            let case = make_synthetic::<f32>([32, 48, 32], 3.0, 5.0, seed).unwrap();
            assert_eq!(ndv(&case.true_field), 0.0, "seed {seed} folded");
        }
    }

    #[test]
    fn true_field_scores_zero_tre() {
        let case = make_synthetic::<f32>([32, 48, 32], 3.0, 5.0, 9).unwrap();
        assert!(!case.moving_landmarks.is_empty());
        let t = tre(
            &case.fixed_landmarks,
            &case.moving_landmarks,
            &case.true_field,
            [1.0; 3],
        )
        .unwrap();
        assert!(t < 0.1, "tre = {t}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_synthetic::<f32>([32, 32, 32], 2.0, 4.0, 123).unwrap();
        let b = make_synthetic::<f32>([32, 32, 32], 2.0, 4.0, 123).unwrap();
        assert_eq!(a.moving.values, b.moving.values);
        assert_eq!(a.true_field.vectors, b.true_field.vectors);
        assert_eq!(a.fixed_landmarks, b.fixed_landmarks);
    }
}
