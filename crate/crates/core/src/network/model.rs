//! Forward passes: encoder, auxiliary decoder, fusion block, and the full
//! coarse-to-fine registration.

use super::{Composition, FeaturePyramid, ModelConfig, ModelParamsOf, ModelWeights, MsfbParamsOf, RegistrationOutput};
use crate::error::Result;
use crate::graph::ops::{self as gops, Activation, Conv3Spec};
use crate::graph::{NodeId, Tape, Tensor};
use crate::scalar::Scalar;
use crate::volgrid::{DisplacementField, FeatureGrid, Volume};

fn leaky(config: &ModelConfig) -> Activation {
    Activation::LeakyRelu(config.negative_slope)
}

fn volume_tensor<T: Scalar>(v: &Volume<T>) -> Tensor<T> {
    Tensor::new(
        vec![1, v.shape[0], v.shape[1], v.shape[2]],
        v.values.clone(),
    )
}

fn tensor_feature_grid<T: Scalar>(t: &Tensor<T>) -> FeatureGrid<T> {
    let (c, s) = t.chw();
    FeatureGrid::new(c, s, t.data.clone()).expect("tensor is a valid feature grid")
}

pub(crate) fn tensor_field<T: Scalar>(t: &Tensor<T>, spacing: [f64; 3]) -> DisplacementField<T> {
    let (c, s) = t.chw();
    debug_assert_eq!(c, 3);
    DisplacementField::from_component_planes(s, spacing, &t.data)
        .expect("tensor is a valid field")
}

/// Encoder pyramid on the tape, finest level first. The same parameter set
/// serves the moving and the fixed image.
pub(crate) fn encode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParamsOf<NodeId>,
    config: &ModelConfig,
    image: NodeId,
) -> Vec<NodeId> {
    let act = leaky(config);
    let mut levels = Vec::with_capacity(config.num_scales);
    let stem = gops::conv3(tape, image, params.encoder[0].w, params.encoder[0].b, Conv3Spec::same(act));
    levels.push(stem);
    for k in 1..config.num_scales {
        let down = gops::conv3(
            tape,
            levels[k - 1],
            params.encoder[k].w,
            params.encoder[k].b,
            Conv3Spec::down(act),
        );
        levels.push(down);
    }
    levels
}

/// Auxiliary decoder on the tape: coarse-to-fine upsampling with encoder
/// skip connections, one output per level, finest first.
pub(crate) fn aux_decode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParamsOf<NodeId>,
    config: &ModelConfig,
    enc_levels: &[NodeId],
) -> Vec<NodeId> {
    let act = leaky(config);
    let ns = config.num_scales;
    let mut levels = vec![None; ns];
    let coarsest = gops::conv3(
        tape,
        enc_levels[ns - 1],
        params.aux[ns - 1].w,
        params.aux[ns - 1].b,
        Conv3Spec::same(act),
    );
    levels[ns - 1] = Some(coarsest);
    for k in (0..ns - 1).rev() {
        let (_, s) = tape.value(enc_levels[k]).chw();
        let up = gops::resample(tape, levels[k + 1].unwrap(), s, None);
        let cat = gops::concat_channels(tape, &[up, enc_levels[k]]);
        tape.release(up);
        let out = gops::conv3(tape, cat, params.aux[k].w, params.aux[k].b, Conv3Spec::same(act));
        tape.release(cat);
        levels[k] = Some(out);
    }
    levels.into_iter().map(Option::unwrap).collect()
}

/// Multi-scale fusion block: channel gates from spatially pooled statistics
/// (global branch) and a per-voxel sigmoid map from channel-pooled
/// statistics (local branch) gate the concatenated inputs before the fusion
/// convolution.
pub(crate) fn msfb_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &MsfbParamsOf<NodeId>,
    config: &ModelConfig,
    warped_mov_enc: NodeId,
    fix_enc: NodeId,
    warped_mov_aux: NodeId,
    fix_aux: NodeId,
    up_ddf: NodeId,
) -> NodeId {
    let act = leaky(config);
    let cat = gops::concat_channels(
        tape,
        &[warped_mov_enc, fix_enc, warped_mov_aux, fix_aux, up_ddf],
    );
    let pooled = gops::global_avg_pool(tape, cat);
    let hidden = gops::linear(tape, pooled, params.gate_fc1.w, params.gate_fc1.b, act);
    let gates = gops::linear(tape, hidden, params.gate_fc2.w, params.gate_fc2.b, Activation::Sigmoid);
    let stats = gops::channel_stats(tape, cat);
    let map = gops::conv3(
        tape,
        stats,
        params.local_conv.w,
        params.local_conv.b,
        Conv3Spec {
            kernel: 7,
            stride: 1,
            pad: 3,
            act: Activation::Sigmoid,
        },
    );
    tape.release(stats);
    let gated = gops::dual_gate(tape, cat, gates, map);
    tape.release_all(&[cat, pooled, hidden, gates, map]);
    let fused = gops::conv3(tape, gated, params.fuse_conv.w, params.fuse_conv.b, Conv3Spec::same(act));
    tape.release(gated);
    fused
}

/// Node ids of the registration forward pass.
pub struct RegistrationNodes {
    pub phi: NodeId,
    pub phi_hat: NodeId,
    /// Residuals, coarsest first.
    pub deltas: Vec<NodeId>,
}

/// Full coarse-to-fine registration on the tape. At the coarsest level the
/// two encoder grids are merged by plain concatenation; every finer level
/// upsamples the running field, warps the moving features with it, fuses,
/// predicts a residual, and composes.
pub fn register_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParamsOf<NodeId>,
    config: &ModelConfig,
    moving: NodeId,
    fixed: NodeId,
) -> RegistrationNodes {
    let act = leaky(config);
    let ns = config.num_scales;

    let enc_m = encode_on_tape(tape, params, config, moving);
    let enc_f = encode_on_tape(tape, params, config, fixed);
    let aux_m = aux_decode_on_tape(tape, params, config, &enc_m);
    let aux_f = aux_decode_on_tape(tape, params, config, &enc_f);

    // coarsest scale: no fusion block, plain concatenation
    let coarse = ns - 1;
    let cat = gops::concat_channels(tape, &[enc_m[coarse], enc_f[coarse]]);
    let merged = gops::conv3(
        tape,
        cat,
        params.coarse_merge.w,
        params.coarse_merge.b,
        Conv3Spec::same(act),
    );
    tape.release(cat);
    let delta = gops::conv3(
        tape,
        merged,
        params.heads[coarse].w,
        params.heads[coarse].b,
        Conv3Spec::same(Activation::None),
    );
    tape.release(merged);
    tape.release_all(&[enc_m[coarse], enc_f[coarse], aux_m[coarse], aux_f[coarse]]);

    let mut deltas = vec![delta];
    let mut field = delta;
    // the coarsest delta and the half-resolution field are returned, so
    // they must survive release hints
    let mut field_releasable = false;
    let mut phi_hat = None;
    for k in (0..ns - 1).rev() {
        let up = gops::upsample_field2(tape, field);
        if field_releasable {
            tape.release(field);
        }
        let wme = gops::warp(tape, enc_m[k], up);
        let wma = gops::warp(tape, aux_m[k], up);
        let fused = msfb_on_tape(tape, &params.msfb[k], config, wme, enc_f[k], wma, aux_f[k], up);
        tape.release_all(&[wme, wma, enc_m[k], enc_f[k], aux_m[k], aux_f[k]]);
        let delta_k = gops::conv3(
            tape,
            fused,
            params.heads[k].w,
            params.heads[k].b,
            Conv3Spec::same(Activation::None),
        );
        tape.release(fused);
        field = match config.composition {
            Composition::Warp => gops::compose(tape, up, delta_k),
            Composition::Add => gops::compose_additive(tape, up, delta_k),
        };
        tape.release(up);
        deltas.push(delta_k);
        field_releasable = k != 1;
        if k == 1 {
            phi_hat = Some(field);
        }
    }

    RegistrationNodes {
        phi: field,
        phi_hat: phi_hat.expect("five scales always pass through the half-resolution level"),
        deltas,
    }
}

fn check_register_inputs<T: Scalar>(
    config: &ModelConfig,
    moving: &Volume<T>,
    fixed: &Volume<T>,
) -> Result<()> {
    config.validate()?;
    crate::volgrid::check_same_shape(moving.shape, fixed.shape, "register inputs")?;
    config.check_input_shape(moving.shape)?;
    Ok(())
}

/// Run the shared encoder over one image (inference, bounded memory).
pub fn encode<T: Scalar>(
    config: &ModelConfig,
    weights: &ModelWeights<T>,
    image: &Volume<T>,
) -> Result<FeaturePyramid<T>> {
    config.validate()?;
    config.check_input_shape(image.shape)?;
    let mut tape = Tape::new(false);
    let params = weights.map(|t| tape.param(t.clone()));
    let input = tape.constant(volume_tensor(image));
    let levels = encode_on_tape(&mut tape, &params, config, input);
    Ok(FeaturePyramid {
        levels: levels.iter().map(|&id| tensor_feature_grid(tape.value(id))).collect(),
    })
}

/// Run the shared auxiliary decoder over one image's encoder pyramid.
pub fn aux_decode<T: Scalar>(
    config: &ModelConfig,
    weights: &ModelWeights<T>,
    pyramid: &FeaturePyramid<T>,
) -> Result<FeaturePyramid<T>> {
    config.validate()?;
    let mut tape = Tape::new(false);
    let params = weights.map(|t| tape.param(t.clone()));
    let enc_levels: Vec<NodeId> = pyramid
        .levels
        .iter()
        .map(|g| {
            tape.constant(Tensor::new(
                vec![g.channels, g.shape[0], g.shape[1], g.shape[2]],
                g.values.clone(),
            ))
        })
        .collect();
    let levels = aux_decode_on_tape(&mut tape, &params, config, &enc_levels);
    Ok(FeaturePyramid {
        levels: levels.iter().map(|&id| tensor_feature_grid(tape.value(id))).collect(),
    })
}

/// Register a moving volume to a fixed volume (inference).
pub fn register<T: Scalar>(
    config: &ModelConfig,
    weights: &ModelWeights<T>,
    moving: &Volume<T>,
    fixed: &Volume<T>,
) -> Result<RegistrationOutput<T>> {
    check_register_inputs(config, moving, fixed)?;
    let mut tape = Tape::new(false);
    let params = weights.map(|t| tape.param(t.clone()));
    let moving_id = tape.constant(volume_tensor(moving));
    let fixed_id = tape.constant(volume_tensor(fixed));
    let nodes = register_on_tape(&mut tape, &params, config, moving_id, fixed_id);
    let spacing = moving.spacing;
    let half_spacing = [spacing[0] * 2.0, spacing[1] * 2.0, spacing[2] * 2.0];
    Ok(RegistrationOutput {
        phi: tensor_field(tape.value(nodes.phi), spacing),
        phi_hat: tensor_field(tape.value(nodes.phi_hat), half_spacing),
        per_scale_deltas: nodes
            .deltas
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let level = config.num_scales - 1 - i;
                let f = 1 << level;
                tensor_field(
                    tape.value(id),
                    [spacing[0] * f as f64, spacing[1] * f as f64, spacing[2] * f as f64],
                )
            })
            .collect(),
    })
}
