//! Implementations behind the CLI verbs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fusereg::data::{
    load_manifest, make_synthetic, nifti, read_landmarks_csv, save_pairs_manifest, CaseEntry,
    Manifest, PairsManifest,
};
use fusereg::losses::lncc;
use fusereg::metrics::{aggregate, dice, hd95, ndv, tre, AggregateReport, MetricsReport};
use fusereg::network::{self, checkpoint};
use fusereg::train::{run_training, RunConfig};
use fusereg::volgrid::{warp, warp_labels, DisplacementField, LabelMap, Volume};
use fusereg::Error;

/// Distinguishes misuse (exit 1) from runtime failure (exit 2).
pub enum CommandError {
    Usage(String),
    Runtime(String),
}

type CmdResult = Result<(), CommandError>;

fn usage(msg: impl Into<String>) -> CommandError {
    CommandError::Usage(msg.into())
}

fn runtime(e: impl std::fmt::Display) -> CommandError {
    CommandError::Runtime(e.to_string())
}

/// Config and contract violations count as usage errors; everything else is
/// a runtime failure.
fn classify(e: Error) -> CommandError {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Manifest(_) => {
            CommandError::Usage(e.to_string())
        }
        other => CommandError::Runtime(other.to_string()),
    }
}

pub fn train(config_path: &Path, seed: Option<u64>, deterministic: bool) -> CmdResult {
    let mut config = RunConfig::load(config_path).map_err(classify)?;
    if let Some(seed) = seed {
        config.data.seed = seed;
    }
    config.validate().map_err(classify)?;
    let summary = run_training(&config, deterministic).map_err(|e| match e {
        Error::Config(_) | Error::Manifest(_) => classify(e),
        other => runtime(other),
    })?;
    println!(
        "trained {} iterations; final total loss {:+.6} (ncc_full {:.6}, ncc_half {:.6}, reg {:.6})",
        summary.iterations,
        summary.final_loss.total,
        summary.final_loss.ncc_full,
        summary.final_loss.ncc_half,
        summary.final_loss.reg
    );
    println!("checkpoint: {}", summary.checkpoint.display());
    println!("loss log:   {}", summary.loss_log.display());
    Ok(())
}

pub fn register(checkpoint_path: &Path, moving: &Path, fixed: &Path, out: &Path) -> CmdResult {
    let (config, weights) = checkpoint::load::<f32>(checkpoint_path).map_err(classify)?;

    let moving_raw: Volume<f32> = nifti::read_volume(moving).map_err(runtime)?;
    let fixed_raw: Volume<f32> = nifti::read_volume(fixed).map_err(runtime)?;
    let mut moving_norm = moving_raw.clone();
    let mut fixed_norm = fixed_raw.clone();
    fusereg::data::normalize_minmax(&mut moving_norm);
    fusereg::data::normalize_minmax(&mut fixed_norm);

    let output =
        network::register(&config, &weights, &moving_norm, &fixed_norm).map_err(classify)?;

    fs::create_dir_all(out).map_err(runtime)?;
    // warp the raw intensities so the output stays in the input's units
    let warped = warp(&moving_raw, &output.phi).map_err(runtime)?;
    nifti::write_volume(out.join("warped.nii.gz"), &warped).map_err(runtime)?;
    nifti::write_field(out.join("field.nii.gz"), &output.phi).map_err(runtime)?;
    println!(
        "registered {} -> {}; outputs in {}",
        moving.display(),
        fixed.display(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluateOutput {
    pairs: Vec<MetricsReport>,
    aggregate: AggregateReport,
}

/// Largest odd window that fits the volume, capped at the default 9.
fn fitting_window(shape: [usize; 3]) -> Option<usize> {
    let m = shape.iter().copied().min().unwrap();
    let w = m.min(9);
    let w = if w % 2 == 0 { w - 1 } else { w };
    (w >= 3).then_some(w)
}

fn evaluate_case(
    case: &CaseEntry,
    field: DisplacementField<f32>,
) -> Result<MetricsReport, CommandError> {
    let spacing = field.spacing;
    let ndv_percent = ndv(&field);

    let labels = match (&case.moving_labels, &case.fixed_labels) {
        (Some(m), Some(f)) => Some((
            nifti::read_labels(m).map_err(runtime)?,
            nifti::read_labels(f).map_err(runtime)?,
        )),
        _ => None,
    };
    let (dice_mean, dice_per_class, hd95_mm) = match labels {
        Some(((moving_labels, _), (fixed_labels, label_spacing))) => {
            let warped = warp_labels(&moving_labels, &field).map_err(runtime)?;
            let scores = dice(&warped, &fixed_labels, None).map_err(runtime)?;
            // per-class surface distance, averaged over classes present on
            // both sides
            let classes: BTreeSet<u32> = warped
                .classes()
                .into_iter()
                .filter(|c| fixed_labels.classes().contains(c))
                .collect();
            let mut dists = Vec::new();
            for c in classes {
                let binarize = |l: &LabelMap| {
                    LabelMap::new(
                        l.shape,
                        l.values.iter().map(|&v| (v == c) as u32).collect(),
                    )
                    .expect("same shape")
                };
                dists.push(
                    hd95(&binarize(&warped), &binarize(&fixed_labels), label_spacing)
                        .map_err(runtime)?,
                );
            }
            let hd = (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64);
            (Some(scores.mean), Some(scores.per_class), hd)
        }
        None => (None, None, None),
    };

    let tre_mm = match (&case.moving_landmarks, &case.fixed_landmarks) {
        (Some(m), Some(f)) => {
            let moving_pts = read_landmarks_csv(m).map_err(runtime)?;
            let fixed_pts = read_landmarks_csv(f).map_err(runtime)?;
            Some(tre(&fixed_pts, &moving_pts, &field, spacing).map_err(runtime)?)
        }
        _ => None,
    };

    // similarity of fixed vs warped moving on normalized intensities
    let lncc_val = {
        let moving = fusereg::data::load_volume::<f32>(&case.moving).map_err(runtime)?;
        let fixed = fusereg::data::load_volume::<f32>(&case.fixed).map_err(runtime)?;
        match fitting_window(moving.shape) {
            Some(window) if moving.shape == field.shape && fixed.shape == field.shape => {
                let warped = warp(&moving, &field).map_err(runtime)?;
                Some(f64::from(lncc(&fixed, &warped, window, 1e-5).map_err(runtime)?))
            }
            _ => None,
        }
    };

    Ok(MetricsReport {
        pair_id: case.id.clone(),
        dice_mean,
        dice_per_class,
        tre_mm,
        hd95_mm,
        ndv_percent,
        lncc: lncc_val,
    })
}

pub fn evaluate(
    manifest_path: &Path,
    fields_dir: Option<&Path>,
    checkpoint_path: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let manifest = match load_manifest(manifest_path).map_err(classify)? {
        Manifest::Pairs(pm) => pm,
        Manifest::Index(_) => {
            return Err(usage(
                "evaluate needs a pairs manifest (cases with moving/fixed volumes)",
            ));
        }
    };
    let model = match (fields_dir, checkpoint_path) {
        (Some(_), Some(_)) => return Err(usage("pass either --fields or --checkpoint, not both")),
        (None, None) => return Err(usage("pass --fields <dir> or --checkpoint <file>")),
        (None, Some(ckpt)) => Some(checkpoint::load::<f32>(ckpt).map_err(classify)?),
        (Some(_), None) => None,
    };

    let mut reports = Vec::new();
    for case in &manifest.cases {
        let field = match (&model, fields_dir) {
            (None, Some(dir)) => {
                let path = dir.join(format!("{}.field.nii.gz", case.id));
                if !path.exists() {
                    return Err(usage(format!("no field for case {}: {}", case.id, path.display())));
                }
                nifti::read_field::<f32>(&path).map_err(runtime)?
            }
            (Some((config, weights)), None) => {
                let moving = fusereg::data::load_volume::<f32>(&case.moving).map_err(runtime)?;
                let fixed = fusereg::data::load_volume::<f32>(&case.fixed).map_err(runtime)?;
                network::register(config, weights, &moving, &fixed)
                    .map_err(classify)?
                    .phi
            }
            _ => unreachable!(),
        };
        reports.push(evaluate_case(case, field)?);
    }

    let output = EvaluateOutput {
        aggregate: aggregate(&reports),
        pairs: reports,
    };
    let json = serde_json::to_string_pretty(&output).map_err(runtime)?;
    fs::write(out, json).map_err(runtime)?;
    let agg = &output.aggregate;
    println!("evaluated {} pairs -> {}", output.pairs.len(), out.display());
    for (name, summary) in [
        ("dice", &agg.dice),
        ("tre_mm", &agg.tre_mm),
        ("hd95_mm", &agg.hd95_mm),
        ("ndv_%", &agg.ndv_percent),
        ("lncc", &agg.lncc),
    ] {
        if let Some(s) = summary {
            println!("  {name}: {} (n={})", s.formatted, s.count);
        }
    }
    Ok(())
}

fn parse_shape(text: &str) -> Result<[usize; 3], CommandError> {
    let parts: Vec<usize> = text
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("bad shape '{text}', expected e.g. 32x48x32")))?;
    if parts.len() != 3 {
        return Err(usage(format!("bad shape '{text}', expected three extents")));
    }
    Ok([parts[0], parts[1], parts[2]])
}

pub fn synth(
    shape_text: &str,
    count: usize,
    max_disp: f64,
    smoothness: f64,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let shape = parse_shape(shape_text)?;
    if count == 0 {
        return Err(usage("count must be >= 1"));
    }
    fs::create_dir_all(out).map_err(runtime)?;

    let mut cases = Vec::with_capacity(count);
    for i in 0..count {
        let case =
            make_synthetic::<f32>(shape, max_disp, smoothness, seed.wrapping_add(i as u64))
                .map_err(classify)?;
        let id = format!("case_{i:03}");
        let dir = out.join(&id);
        fs::create_dir_all(&dir).map_err(runtime)?;
        nifti::write_volume(dir.join("moving.nii.gz"), &case.moving).map_err(runtime)?;
        nifti::write_volume(dir.join("fixed.nii.gz"), &case.fixed).map_err(runtime)?;
        nifti::write_field(dir.join("true_field.nii.gz"), &case.true_field).map_err(runtime)?;
        nifti::write_labels(dir.join("moving_labels.nii.gz"), &case.moving_labels, [1.0; 3])
            .map_err(runtime)?;
        nifti::write_labels(dir.join("fixed_labels.nii.gz"), &case.fixed_labels, [1.0; 3])
            .map_err(runtime)?;
        fusereg::data::write_landmarks_csv(dir.join("moving_landmarks.csv"), &case.moving_landmarks)
            .map_err(runtime)?;
        fusereg::data::write_landmarks_csv(dir.join("fixed_landmarks.csv"), &case.fixed_landmarks)
            .map_err(runtime)?;
        cases.push(CaseEntry {
            id: id.clone(),
            moving: PathBuf::from(&id).join("moving.nii.gz"),
            fixed: PathBuf::from(&id).join("fixed.nii.gz"),
            moving_labels: Some(PathBuf::from(&id).join("moving_labels.nii.gz")),
            fixed_labels: Some(PathBuf::from(&id).join("fixed_labels.nii.gz")),
            moving_landmarks: Some(PathBuf::from(&id).join("moving_landmarks.csv")),
            fixed_landmarks: Some(PathBuf::from(&id).join("fixed_landmarks.csv")),
            true_field: Some(PathBuf::from(&id).join("true_field.nii.gz")),
        });
    }
    let manifest = PairsManifest {
        split: "synthetic".into(),
        cases,
    };
    save_pairs_manifest(out.join("manifest.json"), &manifest).map_err(runtime)?;
    println!(
        "wrote {count} cases at {shape:?} (max_disp {max_disp}, smoothness {smoothness}, seed {seed}) to {}",
        out.display()
    );
    Ok(())
}
