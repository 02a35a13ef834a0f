//! Training: run configuration, the optimization loop, loss logging, and
//! checkpoints.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_manifest, load_volume, preprocess, Manifest, PairSampler};
use crate::error::{Error, Result};
use crate::graph::optim::Adam;
use crate::graph::{Tape, Tensor};
use crate::losses::{op_total_loss, LossBreakdown, LossWeights};
use crate::network::{self, checkpoint, ModelConfig};
use crate::volgrid::Volume;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: String,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            name: "adam".into(),
            learning_rate: 1e-4,
            iterations: 1000,
            batch_size: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: PathBuf,
    pub target_shape: [usize; 3],
    pub seed: u64,
    #[serde(default = "default_normalization")]
    pub normalization: String,
}

fn default_normalization() -> String {
    "minmax".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Everything one run needs; the resolved copy is snapshotted into the run
/// directory so the run can be reproduced from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // resolve the manifest relative to the config file
        if config.data.manifest.is_relative() {
            if let Some(base) = path.parent() {
                config.data.manifest = base.join(&config.data.manifest);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.optimizer.name != "adam" {
            return Err(Error::Config(format!(
                "unknown optimizer '{}' (supported: adam)",
                self.optimizer.name
            )));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.optimizer.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.data.normalization != "minmax" {
            return Err(Error::Config(format!(
                "unknown normalization '{}' (supported: minmax)",
                self.data.normalization
            )));
        }
        self.model.check_input_shape(self.data.target_shape)?;
        if !self.data.manifest.exists() {
            return Err(Error::Config(format!(
                "manifest does not exist: {}",
                self.data.manifest.display()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct LossLogEntry {
    iteration: usize,
    ncc_full: f64,
    ncc_half: f64,
    reg: f64,
    total: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub iterations: usize,
    pub final_loss: LossBreakdown,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

struct VolumePool {
    target_shape: [usize; 3],
    cache: HashMap<PathBuf, Volume<f32>>,
}

impl VolumePool {
    fn get(&mut self, path: &Path) -> Result<&Volume<f32>> {
        if !self.cache.contains_key(path) {
            let v = load_volume::<f32>(path)?;
            let v = preprocess(&v, self.target_shape);
            self.cache.insert(path.to_path_buf(), v);
        }
        Ok(&self.cache[path])
    }
}

enum PairSource {
    Cases(Vec<(PathBuf, PathBuf)>),
    Pool(Vec<PathBuf>),
}

impl PairSource {
    fn next_epoch(&self, sampler: &mut PairSampler) -> Result<Vec<(PathBuf, PathBuf)>> {
        match self {
            PairSource::Cases(cases) => Ok(sampler
                .epoch_order(cases.len())
                .into_iter()
                .map(|i| cases[i].clone())
                .collect()),
            PairSource::Pool(volumes) => Ok(sampler
                .epoch_pairs(volumes.len())?
                .into_iter()
                .map(|(a, b)| (volumes[a].clone(), volumes[b].clone()))
                .collect()),
        }
    }
}

/// Run the full training loop: pair sampling, forward registration, the
/// dual-scale loss, and one optimizer step per iteration. Writes the config
/// snapshot, a JSON-lines loss log, periodic and final checkpoints, and a
/// loss-curve plot. Bit-deterministic for a fixed seed.
pub fn run_training(config: &RunConfig, _deterministic: bool) -> Result<TrainSummary> {
    config.validate()?;
    fs::create_dir_all(&config.output.dir)?;
    let snapshot = toml::to_string_pretty(config)
        .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    fs::write(config.output.dir.join("config_snapshot.toml"), snapshot)?;

    let source = match load_manifest(&config.data.manifest)? {
        Manifest::Pairs(pm) => PairSource::Cases(
            pm.cases.iter().map(|c| (c.moving.clone(), c.fixed.clone())).collect(),
        ),
        Manifest::Index(idx) => {
            PairSource::Pool(idx.entries.iter().map(|e| e.volume.clone()).collect())
        }
    };

    let mut pool = VolumePool {
        target_shape: config.data.target_shape,
        cache: HashMap::new(),
    };
    let mut weights = network::ModelWeights::<f32>::init(&config.model, config.data.seed);
    let mut sampler = PairSampler::new(config.data.seed.wrapping_add(1));
    let mut adam = Adam::new(config.optimizer.learning_rate);

    let log_path = config.output.dir.join("loss_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut curve: Vec<(usize, f64)> = Vec::new();
    let checkpoint_every = (config.optimizer.iterations / 4).max(1);

    let mut queue: Vec<(PathBuf, PathBuf)> = Vec::new();
    let mut final_loss = None;
    for iteration in 1..=config.optimizer.iterations {
        let mut grad_acc: Option<Vec<Tensor<f32>>> = None;
        let mut batch_loss = LossBreakdown {
            ncc_full: 0.0,
            ncc_half: 0.0,
            reg: 0.0,
            total: 0.0,
        };
        for _ in 0..config.optimizer.batch_size {
            if queue.is_empty() {
                queue = source.next_epoch(&mut sampler)?;
                queue.reverse(); // pop from the back in epoch order
            }
            let (moving_path, fixed_path) = queue.pop().expect("epoch is never empty");
            let moving = pool.get(&moving_path)?.clone();
            let fixed = pool.get(&fixed_path)?.clone();

            let mut tape = Tape::new(true);
            let params = weights.map(|t| tape.param(t.clone()));
            let moving_id = tape.constant(Tensor::new(
                vec![1, moving.shape[0], moving.shape[1], moving.shape[2]],
                moving.values.clone(),
            ));
            let fixed_id = tape.constant(Tensor::new(
                vec![1, fixed.shape[0], fixed.shape[1], fixed.shape[2]],
                fixed.values.clone(),
            ));
            let reg_nodes =
                network::register_on_tape(&mut tape, &params, &config.model, moving_id, fixed_id);
            let loss_nodes = op_total_loss(
                &mut tape,
                fixed_id,
                moving_id,
                reg_nodes.phi,
                reg_nodes.phi_hat,
                &config.loss,
            );
            let breakdown = loss_nodes.breakdown(&tape);
            if !breakdown.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    detail: format!(
                        "ncc_full={} ncc_half={} reg={} (pair {} -> {})",
                        breakdown.ncc_full,
                        breakdown.ncc_half,
                        breakdown.reg,
                        moving_path.display(),
                        fixed_path.display()
                    ),
                });
            }
            batch_loss.ncc_full += breakdown.ncc_full;
            batch_loss.ncc_half += breakdown.ncc_half;
            batch_loss.reg += breakdown.reg;
            batch_loss.total += breakdown.total;

            let mut grads = tape.backward(loss_nodes.total);
            let ids = params.flat();
            let tensors = weights.flat();
            match &mut grad_acc {
                None => {
                    grad_acc = Some(
                        ids.iter()
                            .zip(&tensors)
                            .map(|(id, t)| grads.take(**id, t))
                            .collect(),
                    );
                }
                Some(acc) => {
                    for ((slot, id), t) in acc.iter_mut().zip(&ids).zip(&tensors) {
                        slot.accumulate(&grads.take(**id, t));
                    }
                }
            }
        }

        let scale = 1.0 / config.optimizer.batch_size as f64;
        batch_loss.ncc_full *= scale;
        batch_loss.ncc_half *= scale;
        batch_loss.reg *= scale;
        batch_loss.total *= scale;
        let mut grads = grad_acc.expect("batch size >= 1");
        if config.optimizer.batch_size > 1 {
            for g in &mut grads {
                for v in &mut g.data {
                    *v *= scale as f32;
                }
            }
        }
        adam.step(&mut weights.flat_mut(), &grads);

        let entry = LossLogEntry {
            iteration,
            ncc_full: batch_loss.ncc_full,
            ncc_half: batch_loss.ncc_half,
            reg: batch_loss.reg,
            total: batch_loss.total,
        };
        serde_json::to_writer(&mut log, &entry)?;
        log.write_all(b"\n")?;
        curve.push((iteration, batch_loss.total));
        final_loss = Some(batch_loss);

        if iteration % checkpoint_every == 0 && iteration != config.optimizer.iterations {
            checkpoint::save(
                config.output.dir.join(format!("checkpoint_{iteration:06}.ckpt")),
                &config.model,
                &weights,
            )?;
        }
    }
    log.flush()?;

    let final_path = config.output.dir.join("checkpoint_final.ckpt");
    checkpoint::save(&final_path, &config.model, &weights)?;
    plot_loss_curve(config.output.dir.join("loss_curve.svg"), &curve)?;

    Ok(TrainSummary {
        iterations: config.optimizer.iterations,
        final_loss: final_loss.expect("at least one iteration ran"),
        checkpoint: final_path,
        loss_log: log_path,
    })
}

/// Render the total-loss curve as a standalone SVG.
fn plot_loss_curve(path: impl AsRef<Path>, curve: &[(usize, f64)]) -> Result<()> {
    let (w, h, ml, mb, mt, mr) = (640.0, 400.0, 60.0, 40.0, 20.0, 20.0);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if !curve.is_empty() {
        let x_max = curve.last().unwrap().0.max(1) as f64;
        let y_min = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let y_max = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let y_span = (y_max - y_min).max(1e-12);
        let px = |it: usize| ml + (it as f64 / x_max) * (w - ml - mr);
        let py = |v: f64| h - mb - (v - y_min) / y_span * (h - mb - mt);
        let pts: Vec<String> = curve
            .iter()
            .map(|&(it, v)| format!("{:.2},{:.2}", px(it), py(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">iter {} total {:.5}</text>\n",
            ml,
            mt,
            curve.last().unwrap().0,
            curve.last().unwrap().1
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#555\">min {y_min:.5} max {y_max:.5}</text>\n",
            ml,
            h - 10.0
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}
