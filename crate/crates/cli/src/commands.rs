use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use dvfi_core::dataset::{self, Manifest, ManifestEntry};
use dvfi_core::ftm::{apply_ftm, AugmentationRecord};
use dvfi_core::image::{crop, flip, io, split_roles, Mask, Sequence, SEPTUPLET_PREVIOUS, SEPTUPLET_TARGET};
use dvfi_core::metrics::{sample_metrics, MetricsReport};
use dvfi_core::model::{load_checkpoint, save_checkpoint, DMapEstimator, StepLog, TrainExample, Trainer};
use dvfi_core::synth::{self, generate_dataset};
use dvfi_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ECHO_FILE};
use crate::panel;

pub const CHECKPOINT_BIN: &str = "checkpoint.bin";
pub const CHECKPOINT_META: &str = "checkpoint.json";
pub const LOSS_LOG: &str = "loss.jsonl";
pub const SUMMARY: &str = "summary.json";
pub const REPORT: &str = "report.json";
pub const PANEL: &str = "panel.png";

pub fn run(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output()?;
    match cfg.command.as_str() {
        "augment" => augment(cfg, out),
        "gen-synth" => gen_synth(cfg, out),
        "train" => train(cfg, out),
        "eval" => eval(cfg, out),
        "inspect" => inspect(cfg, out),
        other => bail!("unknown command {other:?}"),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Persists the merged configuration next to the outputs.
fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    dataset::write_json(&out.join(ECHO_FILE), cfg)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    source: String,
    crop: Option<[usize; 4]>,
    flips: Vec<dvfi_core::image::FlipAxis>,
    augmentation: AugmentationRecord,
}

fn septuplet_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    ensure!(root.is_dir(), "input directory {} does not exist", root.display());
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .with_context(|| format!("non-UTF-8 directory name {}", path.display()))?
                .to_owned();
            dirs.push((name, path));
        }
    }
    dirs.sort();
    ensure!(!dirs.is_empty(), "no septuplet directories under {}", root.display());
    Ok(dirs)
}

fn augment(cfg: &RunConfig, out: &Path) -> Result<()> {
    let input = cfg.input()?;
    cfg.ftm.validate()?;
    let dirs = septuplet_dirs(input)?;
    echo_config(cfg, out)?;
    let entries = dirs
        .par_iter()
        .enumerate()
        .map(|(i, (id, dir))| -> Result<ManifestEntry> {
            let mut seq =
                dataset::read_septuplet(dir).with_context(|| format!("reading septuplet {}", dir.display()))?;
            if let Some([top, left, h, w]) = cfg.augment.crop {
                seq = crop(&seq, top, left, h, w)?;
            }
            for &axis in &cfg.augment.flips {
                seq = flip(&seq, axis);
            }
            let sample = apply_ftm(&seq, synth::sample_seed(cfg.seed, i as u64), &cfg.ftm)?;
            let sample_dir = dataset::sample_dir(out, id);
            dataset::write_sample(&sample_dir, sample.augmented.frames(), &sample.dgt)?;
            let record = SampleRecord {
                source: id.clone(),
                crop: cfg.augment.crop,
                flips: cfg.augment.flips.clone(),
                augmentation: sample.record,
            };
            dataset::write_json(&sample_dir.join("record.json"), &record)?;
            Ok(ManifestEntry {
                id: id.clone(),
                dir: id.clone(),
                coverage: sample.dgt.mean(),
                details: serde_json::json!({
                    "fm_applied": record.augmentation.fm_applied,
                    "tm_applied": record.augmentation.tm_applied,
                    "overlays": record.augmentation.overlays.len(),
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        kind: "ftm".into(),
        seed: cfg.seed,
        params: serde_json::to_value(&cfg.ftm)?,
        samples: entries,
    };
    manifest.write(out)?;
    println!("augmented {} septuplets into {}", manifest.samples.len(), out.display());
    Ok(())
}

fn gen_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure!(cfg.synth.count >= 1, "gen-synth needs a sample count of at least 1");
    cfg.synth.params.validate()?;
    echo_config(cfg, out)?;
    let manifest = generate_dataset(out, cfg.synth.count, cfg.seed, &cfg.synth.params)?;
    let coverage = manifest.samples.iter().map(|e| e.coverage).sum::<f64>() / manifest.samples.len() as f64;
    println!(
        "generated {} samples into {} (mean overlay coverage {:.3})",
        manifest.samples.len(),
        out.display(),
        coverage
    );
    Ok(())
}

fn load_dataset(root: &Path) -> Result<Vec<(String, TrainExample)>> {
    let examples = dataset::load_examples(root).with_context(|| format!("loading dataset {}", root.display()))?;
    ensure!(!examples.is_empty(), "dataset {} is empty", root.display());
    Ok(examples)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    steps: u64,
    examples: usize,
    interpolator: String,
    initial_loss: f64,
    final_loss: f64,
    /// Mean total loss over the first and last tenth of the run.
    early_mean_loss: f64,
    late_mean_loss: f64,
}

fn read_loss_log(path: &Path, upto: u64) -> Result<Vec<StepLog>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let logs = text
        .lines()
        .map(serde_json::from_str::<StepLog>)
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    let logs: Vec<StepLog> = logs.into_iter().filter(|l| l.step <= upto).collect();
    ensure!(
        logs.len() as u64 == upto,
        "{} holds {} entries for a checkpoint at step {upto}",
        path.display(),
        logs.len()
    );
    Ok(logs)
}

fn write_loss_log(path: &Path, logs: &[StepLog]) -> Result<()> {
    let mut text = String::new();
    for l in logs {
        text.push_str(&serde_json::to_string(l)?);
        text.push('\n');
    }
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let input = cfg.input()?;
    cfg.train.validate()?;
    let examples: Vec<TrainExample> = load_dataset(input)?.into_iter().map(|(_, e)| e).collect();
    echo_config(cfg, out)?;

    let (estimator, start, mut logs) = match &cfg.train_io.resume {
        None => (DMapEstimator::init(cfg.train.seed), 0, Vec::new()),
        Some(dir) => {
            let (model, meta) = load_checkpoint(&dir.join(CHECKPOINT_BIN), &dir.join(CHECKPOINT_META))
                .with_context(|| format!("loading checkpoint from {}", dir.display()))?;
            ensure!(
                meta.seed == cfg.train.seed,
                "checkpoint was trained with seed {}, run uses {}",
                meta.seed,
                cfg.train.seed
            );
            ensure!(
                meta.interpolator == cfg.train.interpolator,
                "checkpoint uses interpolator {:?}, run uses {:?}",
                meta.interpolator,
                cfg.train.interpolator
            );
            ensure!(
                meta.step <= cfg.train.steps,
                "checkpoint is at step {}, beyond the requested {} steps",
                meta.step,
                cfg.train.steps
            );
            let logs = read_loss_log(&dir.join(LOSS_LOG), meta.step)?;
            (model.estimator, meta.step, logs)
        }
    };

    let mut trainer = Trainer::resume(&examples, cfg.train.clone(), estimator, start)?;
    if let Err(e) = trainer.run(|log| logs.push(*log)) {
        if let Error::Diverged { step, .. } = &e {
            // keep the finite part of the curve for diagnosis
            write_loss_log(&out.join(LOSS_LOG), &logs)?;
            bail!("{e}; last finite step: {step}");
        }
        return Err(e.into());
    }

    let model = trainer.into_model();
    save_checkpoint(
        &model,
        cfg.train.seed,
        cfg.train.steps,
        &out.join(CHECKPOINT_BIN),
        &out.join(CHECKPOINT_META),
    )?;
    write_loss_log(&out.join(LOSS_LOG), &logs)?;
    let total: Vec<f64> = logs.iter().map(|l| l.loss.total).collect();
    let tenth = (total.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let summary = TrainSummary {
        steps: cfg.train.steps,
        examples: examples.len(),
        interpolator: cfg.train.interpolator.clone(),
        initial_loss: total[0],
        final_loss: *total.last().expect("at least one step"),
        early_mean_loss: mean(&total[..tenth]),
        late_mean_loss: mean(&total[total.len() - tenth..]),
    };
    dataset::write_json(&out.join(SUMMARY), &summary)?;
    println!(
        "trained {} steps on {} examples: loss {:.5} -> {:.5}",
        summary.steps, summary.examples, summary.early_mean_loss, summary.late_mean_loss
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalReport {
    sanity: bool,
    threshold: f64,
    interpolator: Option<String>,
    /// Mean predicted D over all pixels and samples.
    mean_d: f64,
    /// Mean per-sample PSNR of the blended output minus that of the
    /// continuous-only output.
    delta_psnr_db: f64,
    blended: MetricsReport,
    continuous: MetricsReport,
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let input = cfg.input()?;
    let threshold = cfg.eval.threshold;
    ensure!((0.0..=1.0).contains(&threshold), "threshold must lie in [0, 1]");
    let model = if cfg.eval.sanity {
        None
    } else {
        let dir = cfg
            .eval
            .checkpoint
            .as_deref()
            .context("`eval` needs a checkpoint directory (--checkpoint) unless --sanity is set")?;
        let (bin, meta) = (dir.join(CHECKPOINT_BIN), dir.join(CHECKPOINT_META));
        for p in [&bin, &meta] {
            ensure!(p.is_file(), "missing checkpoint file {}", p.display());
        }
        Some(load_checkpoint(&bin, &meta)?.0)
    };
    let examples = load_dataset(input)?;
    echo_config(cfg, out)?;
    let dirs = ["pred", "continuous", "dmap"].map(|d| out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }

    let scored = examples
        .par_iter()
        .map(|(id, ex)| -> Result<_> {
            let (i_hat, i_c, d) = match &model {
                None => (ex.target.clone(), ex.target.clone(), ex.dgt.clone()),
                Some(m) => {
                    let o = m.infer(&[&ex.inputs[0], &ex.inputs[1], &ex.inputs[2], &ex.inputs[3]])?;
                    (o.i_hat, o.i_c, o.d)
                }
            };
            io::write_frame(&i_hat, dirs[0].join(format!("{id}.png")))?;
            io::write_frame(&i_c, dirs[1].join(format!("{id}.png")))?;
            io::write_mask(&d, dirs[2].join(format!("{id}.png")))?;
            let blended = sample_metrics(id, &i_hat, &ex.target, Some((&d, &ex.dgt)), threshold)?;
            let continuous = sample_metrics(id, &i_c, &ex.target, None, threshold)?;
            Ok((blended, continuous, d.mean()))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = scored.len() as f64;
    let mean_d = scored.iter().map(|s| s.2).sum::<f64>() / n;
    let (blended, continuous): (Vec<_>, Vec<_>) = scored.into_iter().map(|(b, c, _)| (b, c)).unzip();
    let blended = MetricsReport::from_samples(blended);
    let continuous = MetricsReport::from_samples(continuous);
    let report = EvalReport {
        sanity: cfg.eval.sanity,
        threshold,
        interpolator: model.as_ref().map(|m| m.interpolator_name().to_owned()),
        mean_d,
        delta_psnr_db: blended.mean.psnr_db - continuous.mean.psnr_db,
        blended,
        continuous,
    };
    dataset::write_json(&out.join(REPORT), &report)?;
    io::write_atomic(&out.join("blended.csv"), report.blended.to_csv().as_bytes())?;
    io::write_atomic(&out.join("continuous.csv"), report.continuous.to_csv().as_bytes())?;
    println!(
        "evaluated {} samples: PSNR blended {:.3} dB, continuous {:.3} dB (delta {:+.3}); IoU {}",
        report.blended.count,
        report.blended.mean.psnr_db,
        report.continuous.mean.psnr_db,
        report.delta_psnr_db,
        report
            .blended
            .mean
            .iou
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn inspect(cfg: &RunConfig, out: &Path) -> Result<()> {
    let input = cfg.input()?;
    let seq: Sequence = split_roles(&dataset::read_septuplet(input)?, 4)?;
    let dmap_path = cfg
        .inspect
        .dmap
        .clone()
        .unwrap_or_else(|| input.join(dataset::DGT_FILE));
    ensure!(dmap_path.is_file(), "missing D-map {}", dmap_path.display());
    let dmap: Mask = io::read_mask(&dmap_path)?;
    dmap.ensure_dims(seq.dims())?;
    let image = panel::render(seq.frame(SEPTUPLET_PREVIOUS), &dmap, seq.frame(SEPTUPLET_TARGET))?;
    echo_config(cfg, out)?;
    io::write_frame(&image, out.join(PANEL))?;
    println!("wrote {}", out.join(PANEL).display());
    Ok(())
}
