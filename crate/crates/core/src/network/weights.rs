//! Parameter containers, initialization, and the canonical parameter walk
//! shared by checkpointing and the optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::graph::Tensor;
use crate::scalar::{cast, Scalar};

#[derive(Debug, Clone)]
pub struct ConvParamsOf<A> {
    pub w: A,
    pub b: A,
}

#[derive(Debug, Clone)]
pub struct LinearParamsOf<A> {
    pub w: A,
    pub b: A,
}

#[derive(Debug, Clone)]
pub struct MsfbParamsOf<A> {
    pub gate_fc1: LinearParamsOf<A>,
    pub gate_fc2: LinearParamsOf<A>,
    pub local_conv: ConvParamsOf<A>,
    pub fuse_conv: ConvParamsOf<A>,
}

/// All model parameters, generic over the payload so the same structure
/// holds tensors (storage) or tape node ids (one forward pass).
#[derive(Debug, Clone)]
pub struct ModelParamsOf<A> {
    /// `encoder[0]` is the full-resolution stem, `encoder[k]` a stride-2
    /// downsampling conv.
    pub encoder: Vec<ConvParamsOf<A>>,
    /// `aux[k]` produces the level-`k` auxiliary features; `aux[4]` reads
    /// the coarsest encoder level, finer ones read `[upsampled, skip]`.
    pub aux: Vec<ConvParamsOf<A>>,
    /// Merge convolution of the coarsest scale (plain concatenation, no
    /// fusion block there).
    pub coarse_merge: ConvParamsOf<A>,
    /// Residual prediction heads, one per level.
    pub heads: Vec<ConvParamsOf<A>>,
    /// Fusion blocks for levels 0..=3.
    pub msfb: Vec<MsfbParamsOf<A>>,
}

pub type ModelWeights<T> = ModelParamsOf<Tensor<T>>;

impl<A> ModelParamsOf<A> {
    /// Visit every parameter with its canonical name, in canonical order.
    pub fn for_each(&self, mut f: impl FnMut(String, &A)) {
        for (i, c) in self.encoder.iter().enumerate() {
            f(format!("enc.{i}.w"), &c.w);
            f(format!("enc.{i}.b"), &c.b);
        }
        for (i, c) in self.aux.iter().enumerate() {
            f(format!("aux.{i}.w"), &c.w);
            f(format!("aux.{i}.b"), &c.b);
        }
        f("coarse_merge.w".into(), &self.coarse_merge.w);
        f("coarse_merge.b".into(), &self.coarse_merge.b);
        for (i, c) in self.heads.iter().enumerate() {
            f(format!("head.{i}.w"), &c.w);
            f(format!("head.{i}.b"), &c.b);
        }
        for (i, m) in self.msfb.iter().enumerate() {
            f(format!("msfb.{i}.gate_fc1.w"), &m.gate_fc1.w);
            f(format!("msfb.{i}.gate_fc1.b"), &m.gate_fc1.b);
            f(format!("msfb.{i}.gate_fc2.w"), &m.gate_fc2.w);
            f(format!("msfb.{i}.gate_fc2.b"), &m.gate_fc2.b);
            f(format!("msfb.{i}.local.w"), &m.local_conv.w);
            f(format!("msfb.{i}.local.b"), &m.local_conv.b);
            f(format!("msfb.{i}.fuse.w"), &m.fuse_conv.w);
            f(format!("msfb.{i}.fuse.b"), &m.fuse_conv.b);
        }
    }

    /// Rebuild the structure with a transformed payload, preserving the
    /// canonical order.
    pub fn map<B>(&self, mut f: impl FnMut(&A) -> B) -> ModelParamsOf<B> {
        ModelParamsOf {
            encoder: self
                .encoder
                .iter()
                .map(|c| ConvParamsOf { w: f(&c.w), b: f(&c.b) })
                .collect(),
            aux: self
                .aux
                .iter()
                .map(|c| ConvParamsOf { w: f(&c.w), b: f(&c.b) })
                .collect(),
            coarse_merge: ConvParamsOf {
                w: f(&self.coarse_merge.w),
                b: f(&self.coarse_merge.b),
            },
            heads: self
                .heads
                .iter()
                .map(|c| ConvParamsOf { w: f(&c.w), b: f(&c.b) })
                .collect(),
            msfb: self
                .msfb
                .iter()
                .map(|m| MsfbParamsOf {
                    gate_fc1: LinearParamsOf {
                        w: f(&m.gate_fc1.w),
                        b: f(&m.gate_fc1.b),
                    },
                    gate_fc2: LinearParamsOf {
                        w: f(&m.gate_fc2.w),
                        b: f(&m.gate_fc2.b),
                    },
                    local_conv: ConvParamsOf {
                        w: f(&m.local_conv.w),
                        b: f(&m.local_conv.b),
                    },
                    fuse_conv: ConvParamsOf {
                        w: f(&m.fuse_conv.w),
                        b: f(&m.fuse_conv.b),
                    },
                })
                .collect(),
        }
    }

    /// Flat list of payload references in canonical order.
    pub fn flat(&self) -> Vec<&A> {
        let mut out = Vec::new();
        for c in &self.encoder {
            out.extend([&c.w, &c.b]);
        }
        for c in &self.aux {
            out.extend([&c.w, &c.b]);
        }
        out.extend([&self.coarse_merge.w, &self.coarse_merge.b]);
        for c in &self.heads {
            out.extend([&c.w, &c.b]);
        }
        for m in &self.msfb {
            out.extend([
                &m.gate_fc1.w,
                &m.gate_fc1.b,
                &m.gate_fc2.w,
                &m.gate_fc2.b,
                &m.local_conv.w,
                &m.local_conv.b,
                &m.fuse_conv.w,
                &m.fuse_conv.b,
            ]);
        }
        out
    }

    /// Flat list of mutable payload references in canonical order.
    pub fn flat_mut(&mut self) -> Vec<&mut A> {
        let mut out: Vec<&mut A> = Vec::new();
        for c in &mut self.encoder {
            out.extend([&mut c.w, &mut c.b]);
        }
        for c in &mut self.aux {
            out.extend([&mut c.w, &mut c.b]);
        }
        out.extend([&mut self.coarse_merge.w, &mut self.coarse_merge.b]);
        for c in &mut self.heads {
            out.extend([&mut c.w, &mut c.b]);
        }
        for m in &mut self.msfb {
            out.extend([
                &mut m.gate_fc1.w,
                &mut m.gate_fc1.b,
                &mut m.gate_fc2.w,
                &mut m.gate_fc2.b,
                &mut m.local_conv.w,
                &mut m.local_conv.b,
                &mut m.fuse_conv.w,
                &mut m.fuse_conv.b,
            ]);
        }
        out
    }
}

/// Standard-normal draw via Box-Muller on the given generator.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn conv_init<T: Scalar>(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
    kernel: usize,
    zero: bool,
) -> ConvParamsOf<Tensor<T>> {
    let k3 = kernel * kernel * kernel;
    let shape = vec![out_c, in_c, kernel, kernel, kernel];
    let w = if zero {
        Tensor::zeros(shape)
    } else {
        let std = (2.0 / (in_c * k3) as f64).sqrt();
        Tensor::new(
            shape,
            (0..out_c * in_c * k3)
                .map(|_| cast::<T>(normal(rng) * std))
                .collect(),
        )
    };
    ConvParamsOf {
        w,
        b: Tensor::zeros(vec![out_c]),
    }
}

fn linear_init<T: Scalar>(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
) -> LinearParamsOf<Tensor<T>> {
    let std = (2.0 / in_c as f64).sqrt();
    LinearParamsOf {
        w: Tensor::new(
            vec![out_c, in_c],
            (0..out_c * in_c).map(|_| cast::<T>(normal(rng) * std)).collect(),
        ),
        b: Tensor::zeros(vec![out_c]),
    }
}

impl<T: Scalar> ModelWeights<T> {
    /// Fresh weights for `config`, deterministic in `seed`. Heads are
    /// zero-initialized when the config asks for it, so the untrained model
    /// is the identity transform.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ns = config.num_scales;
        let enc = &config.encoder_channels;
        let aux = &config.aux_decoder_channels;

        let mut encoder = Vec::with_capacity(ns);
        encoder.push(conv_init(&mut rng, enc[0], 1, 3, false));
        for k in 1..ns {
            encoder.push(conv_init(&mut rng, enc[k], enc[k - 1], 3, false));
        }

        let mut aux_convs: Vec<ConvParamsOf<Tensor<T>>> = Vec::with_capacity(ns);
        for k in 0..ns {
            let in_c = if k == ns - 1 {
                enc[k]
            } else {
                aux[k + 1] + enc[k]
            };
            aux_convs.push(conv_init(&mut rng, aux[k], in_c, 3, false));
        }

        let merge_c = config.coarse_merge_channels();
        let coarse_merge = conv_init(&mut rng, merge_c, 2 * enc[ns - 1], 3, false);

        let mut heads = Vec::with_capacity(ns);
        for k in 0..ns {
            let in_c = if k == ns - 1 {
                merge_c
            } else {
                config.fused_channels(k)
            };
            heads.push(conv_init(&mut rng, 3, in_c, 3, config.head_init_zero));
        }

        let mut msfb = Vec::with_capacity(ns - 1);
        for k in 0..ns - 1 {
            let c_in = config.msfb_input_channels(k);
            let hidden = (c_in / config.msfb_bottleneck_ratio).max(1);
            msfb.push(MsfbParamsOf {
                gate_fc1: linear_init(&mut rng, hidden, c_in),
                gate_fc2: linear_init(&mut rng, c_in, hidden),
                local_conv: conv_init(&mut rng, 1, 2, 7, false),
                fuse_conv: conv_init(&mut rng, config.fused_channels(k), c_in, 3, false),
            });
        }

        ModelParamsOf {
            encoder,
            aux: aux_convs,
            coarse_merge,
            heads,
            msfb,
        }
    }

    /// Total number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        let mut n = 0usize;
        self.for_each(|_, t| n += t.numel());
        n
    }
}
