//! The pipeline stages behind each CLI subcommand.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lnms_core::eval::{evaluate_method, Evaluation, Method};
use lnms_core::synth::{generate_split, Split};
use lnms_core::train::{initial_network, new_optimizer, train, FrameSource, TrainEvent};
use lnms_core::Frame;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointMeta};
use crate::config::{RunConfig, Variant};
use crate::dataset::{read_dataset, write_dataset};
use crate::error::{LnmsError, Result};
use crate::report::{collate, write_result, Report, Summary};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| LnmsError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LnmsError::io(dir, e))
}

#[derive(Serialize)]
struct ManifestEntry {
    split: &'static str,
    file: String,
    frames: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: String,
    synth: &'a lnms_core::synth::SynthConfig,
    splits: Vec<ManifestEntry>,
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl`, `config.json` and
/// `manifest.json` into `out`.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    create_dir(out)?;
    let mut splits = Vec::new();
    for (split, count) in [
        (Split::Train, cfg.splits.train),
        (Split::Val, cfg.splits.val),
        (Split::Test, cfg.splits.test),
    ] {
        let frames = generate_split(&cfg.synth, split, count)?;
        let file = format!("{}.jsonl", split.name());
        let path = out.join(&file);
        write_dataset(&path, &frames)?;
        let bytes = fs::read(&path).map_err(|e| LnmsError::io(&path, e))?;
        log::info!("{}: {} frames", path.display(), frames.len());
        splits.push(ManifestEntry {
            split: split.name(),
            file,
            frames: frames.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        config_hash: cfg.config_hash(),
        synth: &cfg.synth,
        splits,
    };
    write_file(&out.join("config.json"), cfg.to_json())?;
    write_file(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )
}

fn read_nonempty(path: &Path) -> Result<Vec<Frame>> {
    let frames = read_dataset(path)?;
    if frames.is_empty() {
        return Err(LnmsError::Format {
            path: path.to_path_buf(),
            reason: "dataset has no frames".into(),
        });
    }
    Ok(frames)
}

pub fn greedy_eval(cfg: &RunConfig, frames: &[Frame], tau: f64) -> Result<Evaluation> {
    Ok(evaluate_method(frames, &Method::Greedy { tau }, cfg.eval.match_iou)?)
}

/// GreedyNMS at every configured threshold; also writes `greedy_sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Vec<Summary>> {
    cfg.validate()?;
    let frames = read_nonempty(data)?;
    let hash = cfg.config_hash();
    let mut table = String::from("tau,ar,config_hash\n");
    let mut summaries = Vec::new();
    for &tau in &cfg.eval.sweep_taus {
        let eval = greedy_eval(cfg, &frames, tau)?;
        let summary = Summary::greedy(tau, &eval, &hash);
        write_result(out, &summary, &eval, cfg.eval.pr_max_points)?;
        log::info!("tau {tau:.2}: AR {:.4}", summary.ar);
        table.push_str(&format!("{tau:.2},{:.6},{hash}\n", summary.ar));
        summaries.push(summary);
    }
    write_file(&out.join("greedy_sweep.csv"), table)?;
    Ok(summaries)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_loss: Option<f64>,
}

#[derive(Serialize)]
struct FailureDump<'a> {
    variant: &'a str,
    train_seed: u64,
    config_hash: String,
    error: String,
}

/// File stem shared by everything one training run writes.
pub fn run_stem(variant: Variant, train_seed: u64) -> String {
    format!("tnet_{}_seed{train_seed}", variant.slug())
}

/// Trains one variant. Writes `<stem>.ckpt` (with optimizer state),
/// intermediate `<stem>_it<N>.ckpt`, the `<stem>.log.csv` training log and
/// `<stem>.config.json`. The log row at iteration N carries the mean loss and
/// gradient norm of the iterations since the previous row.
pub fn cmd_train(cfg: &RunConfig, variant: Variant, data: Option<&Path>, out: &Path) -> Result<TrainOutput> {
    cfg.validate()?;
    let frames = match (cfg.fresh_scenes, data) {
        (true, _) => None,
        (false, Some(path)) => Some(read_nonempty(path)?),
        (false, None) => {
            return Err(LnmsError::Format {
                path: PathBuf::from("--data"),
                reason: "a training dataset is required unless fresh_scenes is set".into(),
            })
        }
    };
    let source = match &frames {
        Some(f) => FrameSource::Dataset(f),
        None => FrameSource::Fresh(&cfg.synth),
    };
    create_dir(out)?;
    let features = cfg.features(variant);
    let hash = cfg.config_hash();
    let stem = run_stem(variant, cfg.train.seed);
    let meta = |iteration: u64| CheckpointMeta {
        variant: variant.name(),
        train_seed: cfg.train.seed,
        config_hash: &hash,
        features: &features,
        iteration,
    };
    write_file(&out.join(format!("{stem}.config.json")), cfg.to_json())?;

    let mut network = initial_network::<f32>(cfg.net_config(variant), &cfg.train)?;
    let mut optimizer = new_optimizer(&network, &cfg.train);
    let log_path = out.join(format!("{stem}.log.csv"));
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| LnmsError::io(&log_path, e))?);
    writeln!(log_file, "iteration,loss,grad_norm,wall_ms").map_err(|e| LnmsError::io(&log_path, e))?;

    let started = Instant::now();
    let every = cfg.train.log_every.max(1);
    let total = cfg.train.iterations;
    let (mut loss_sum, mut norm_sum, mut n) = (0.0, 0.0, 0usize);
    let mut last_loss = None;
    let result = train(&mut network, &mut optimizer, source, &features, &cfg.train, |event| -> Result<()> {
        match event {
            TrainEvent::Iteration(r) => {
                loss_sum += r.loss;
                norm_sum += r.grad_norm;
                n += 1;
                if r.iteration % every == 0 || r.iteration == total {
                    let loss = loss_sum / n as f64;
                    let wall = started.elapsed().as_millis();
                    // flushed per row so a long run can be followed live
                    writeln!(log_file, "{},{loss},{},{wall}", r.iteration, norm_sum / n as f64)
                        .and_then(|_| log_file.flush())
                        .map_err(|e| LnmsError::io(&log_path, e))?;
                    log::info!("{stem} iteration {}: loss {loss:.5}", r.iteration);
                    last_loss = Some(loss);
                    (loss_sum, norm_sum, n) = (0.0, 0.0, 0);
                }
            }
            TrainEvent::Checkpoint {
                iteration,
                network,
                optimizer,
            } => {
                let path = out.join(format!("{stem}_it{iteration}.ckpt"));
                save_checkpoint(&path, network, Some(optimizer), &meta(iteration as u64))?;
            }
        }
        Ok(())
    });
    log_file.flush().map_err(|e| LnmsError::io(&log_path, e))?;
    if let Err(err) = result {
        let dump = FailureDump {
            variant: variant.name(),
            train_seed: cfg.train.seed,
            config_hash: hash.clone(),
            error: err.to_string(),
        };
        write_file(
            &out.join(format!("{stem}.failure.json")),
            serde_json::to_string_pretty(&dump).expect("dump serializes") + "\n",
        )?;
        return Err(err);
    }
    let checkpoint = out.join(format!("{stem}.ckpt"));
    save_checkpoint(&checkpoint, &network, Some(&optimizer), &meta(total as u64))?;
    Ok(TrainOutput {
        checkpoint,
        log: log_path,
        final_loss: last_loss,
    })
}

#[derive(Debug, Clone)]
pub enum EvalTarget {
    Greedy(f64),
    Checkpoint(PathBuf),
}

/// Evaluates one method on `data`, writing its PR curve and summary into `out`.
pub fn cmd_eval(cfg: &RunConfig, data: &Path, target: &EvalTarget, out: &Path) -> Result<Summary> {
    cfg.validate()?;
    let frames = read_nonempty(data)?;
    let hash = cfg.config_hash();
    let (summary, eval) = match target {
        EvalTarget::Greedy(tau) => {
            let eval = greedy_eval(cfg, &frames, *tau)?;
            (Summary::greedy(*tau, &eval, &hash), eval)
        }
        EvalTarget::Checkpoint(path) => {
            let header = load_checkpoint(path)?.header;
            let variant: Variant = header.variant.parse().map_err(|reason| LnmsError::Format {
                path: path.clone(),
                reason,
            })?;
            let features = cfg.features(variant);
            let ckpt = load_checkpoint_expecting(path, &cfg.net_config(variant), &features)?;
            if ckpt.header.config_hash != hash {
                log::warn!(
                    "{}: trained under config {} but evaluated under {hash}",
                    path.display(),
                    ckpt.header.config_hash
                );
            }
            let method = Method::Tnet {
                network: &ckpt.network,
                features: &features,
            };
            let eval = evaluate_method(&frames, &method, cfg.eval.match_iou)?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            (Summary::tnet(variant.name(), header.train_seed, &name, &eval, &hash), eval)
        }
    };
    write_result(out, &summary, &eval, cfg.eval.pr_max_points)?;
    log::info!("{}: AR {:.4}", summary.label(), summary.ar);
    Ok(summary)
}

/// Collates every result under `results` and writes the tables into `out`.
pub fn cmd_report(results: &Path, out: &Path, force: bool) -> Result<Report> {
    let report = collate(results, force)?;
    report.write(out)?;
    Ok(report)
}
