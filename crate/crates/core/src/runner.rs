//! Training runs: the sample / gradient / update loop with periodic
//! evaluation, checkpointing, and the files written to a run directory.
//!
//! A run directory holds `config.toml`, `metrics.csv`, `checkpoint.bin` with
//! its `checkpoint.json` sidecar, SVG plots, and `manifest.json`. Only the
//! manifest contains wall-clock data; every other file is a pure function of
//! the config.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, TrainState};
use crate::collapse::{collapse_gap, COLLAPSE_WINDOW};
use crate::config::ExperimentConfig;
use crate::data::class_label;
use crate::error::{Error, Result};
use crate::metrics::{eval_checkpoint, EvalSpec, MeanErr, MetricsRecord};
use crate::model::Model;
use crate::objective::{loss_and_grad, sample_batch, sample_batch_in, TrainingBatch};
use crate::optim::{adamw_step, AdamWState};
use crate::plot::{Chart, Series, YScale};
use crate::sampler::sample_rng;

pub const METRICS_SCHEMA: &str = "# carflow metrics schema v1";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Sampler seed offset for evaluation; every checkpoint uses the same
/// evaluation noise.
const EVAL_SEED_OFFSET: u64 = 0x0E7A_1000;
/// Stream of the fixed collapse-gap batch.
const GAP_STREAM: u64 = 2;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from `checkpoint.bin` in the output directory.
    pub resume: bool,
    /// Stop after this step; the checkpoint is saved there, metrics rows
    /// only at regular evaluation steps.
    pub stop_after: Option<u64>,
    /// Reuse a completed run with the same config hash.
    pub reuse_completed: bool,
    /// Print one line per evaluation to stderr.
    pub progress: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub carflow_version: String,
    pub git_commit: Option<String>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub wall_clock_secs: Option<f64>,
    pub final_step: u64,
    pub completed: bool,
}

/// Result of a finished or reused run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub metrics: MetricsTable,
    pub reused: bool,
}

impl RunResult {
    pub fn final_model(&self) -> Result<Model> {
        Ok(load_checkpoint(&self.dir.join(CHECKPOINT_FILE))?.model)
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn git_commit() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    write_file(&dir.join(MANIFEST_FILE), &(serde_json::to_string_pretty(m).expect("manifest serializes") + "\n"))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

/// Column names of the metrics CSV for a config.
pub fn metrics_columns(cfg: &ExperimentConfig) -> Vec<String> {
    let k = cfg.data.num_classes();
    let d = cfg.data.dim;
    let per_class = |prefix: &str| (0..k).map(|y| format!("{prefix}_{}", class_label(y))).collect::<Vec<_>>();
    let per_coord = |prefix: &str| {
        (0..k)
            .flat_map(|y| (0..d).map(move |i| if d == 1 { format!("{prefix}_{}", class_label(y)) } else { format!("{prefix}_{}_{i}", class_label(y)) }))
            .collect::<Vec<_>>()
    };
    let mut cols = vec!["step".to_string(), "loss_ema".to_string()];
    cols.extend(per_class("w1"));
    cols.extend(["w1_mean", "traj_len", "traj_len_err2", "displacement", "displacement_err2"].map(String::from));
    cols.extend(per_coord("mu0"));
    cols.extend(per_class("sigma0"));
    cols.extend(per_coord("mu1"));
    cols.extend(per_class("sigma1"));
    cols.extend(["collapse_gap", "sample_error"].map(String::from));
    cols
}

fn csv_header(cfg: &ExperimentConfig) -> String {
    format!("{METRICS_SCHEMA}\n{}\n", metrics_columns(cfg).join(","))
}

fn csv_row(r: &MetricsRecord, sample_error: &str) -> String {
    let mut f: Vec<String> = vec![r.step.to_string(), r.loss_ema.to_string()];
    f.extend(r.w1.iter().map(f64::to_string));
    f.push(r.mean_w1().to_string());
    for m in [r.traj_len, r.displacement] {
        f.push(m.mean.to_string());
        f.push(m.err2.to_string());
    }
    f.extend(r.maps.iter().flat_map(|m| m.mu0.iter().map(f64::to_string)));
    f.extend(r.maps.iter().map(|m| m.sigma0.to_string()));
    f.extend(r.maps.iter().flat_map(|m| m.mu1.iter().map(f64::to_string)));
    f.extend(r.maps.iter().map(|m| m.sigma1.to_string()));
    f.push(r.collapse_gap.map_or(String::new(), |g| g.to_string()));
    f.push(sample_error.to_string());
    f.join(",") + "\n"
}

/// A parsed metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l == METRICS_SCHEMA => {}
            other => return Err(Error::Config(format!("metrics CSV has schema line {other:?}, expected `{METRICS_SCHEMA}`"))),
        }
        let columns: Vec<String> = lines.next().ok_or_else(|| Error::Config("metrics CSV has no header".into()))?.split(',').map(String::from).collect();
        let rows: Vec<Vec<String>> = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(String::from).collect()).collect();
        if let Some(r) = rows.iter().find(|r| r.len() != columns.len()) {
            return Err(Error::Config(format!("metrics row has {} fields, expected {}", r.len(), columns.len())));
        }
        Ok(MetricsTable { columns, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric column; empty or unparsable cells become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name).ok_or_else(|| Error::Config(format!("metrics CSV has no column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }

    pub fn text_column(&self, name: &str) -> Result<Vec<String>> {
        let i = self.index(name).ok_or_else(|| Error::Config(format!("metrics CSV has no column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    pub fn last(&self, name: &str) -> Result<f64> {
        self.column(name)?.last().copied().ok_or_else(|| Error::Config("metrics CSV has no rows".into()))
    }

    pub fn steps(&self) -> Result<Vec<f64>> {
        self.column("step")
    }

    /// `(step, value)` pairs of a column.
    pub fn series(&self, name: &str) -> Result<Vec<(f64, f64)>> {
        Ok(self.steps()?.into_iter().zip(self.column(name)?).collect())
    }
}

/// Completed run in `dir` whose config hash matches `cfg`, if any.
pub fn completed_run(cfg: &ExperimentConfig) -> Option<RunResult> {
    let dir = &cfg.output_dir;
    let m = read_manifest(dir).ok()?;
    if !m.completed || m.config_hash != cfg.hash() {
        return None;
    }
    let metrics = MetricsTable::read(&dir.join(METRICS_FILE)).ok()?;
    Some(RunResult { dir: dir.clone(), config: cfg.clone(), metrics, reused: true })
}

struct Evaluator<'a> {
    cfg: &'a ExperimentConfig,
    gap_batch: Option<TrainingBatch>,
}

impl Evaluator<'_> {
    fn record(&self, model: &Model, step: u64, loss_ema: f64) -> Result<(MetricsRecord, String)> {
        let schedule = self.cfg.schedule()?;
        let spec = EvalSpec {
            data: &self.cfg.data,
            samples_per_class: self.cfg.eval_samples,
            seed: self.cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
            sampler: &self.cfg.sampler,
            schedule: &schedule,
            exec: self.cfg.exec,
        };
        let (mut rec, err) = match eval_checkpoint(model, step, &spec) {
            Ok(r) => (r, String::new()),
            Err(Error::SingularMap { .. }) if self.cfg.variant.is_affine() => {
                let k = self.cfg.data.num_classes();
                let nan = MeanErr { mean: f64::NAN, err2: f64::NAN };
                let r = MetricsRecord {
                    step,
                    loss_ema,
                    w1: vec![f64::NAN; k],
                    traj_len: nan,
                    displacement: nan,
                    maps: model.reparam.all_class_maps(),
                    collapse_gap: None,
                };
                (r, "singular_map".to_string())
            }
            Err(e) => return Err(e),
        };
        rec.loss_ema = loss_ema;
        if let Some(b) = &self.gap_batch {
            rec.collapse_gap = Some(collapse_gap(model, b, &schedule, self.cfg.exec)?);
        }
        Ok((rec, err))
    }
}

/// Keep the CSV lines up to and including `step`.
fn truncate_metrics(text: &str, step: u64) -> String {
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i < 2 || line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// True when `cfg.output_dir` holds a checkpoint written by the same config.
pub fn can_resume(cfg: &ExperimentConfig) -> bool {
    load_checkpoint(&cfg.output_dir.join(CHECKPOINT_FILE)).is_ok_and(|ck| ck.meta.config_hash == cfg.hash())
}

/// Train according to `cfg`, writing every artifact into `cfg.output_dir`.
pub fn run_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    if opts.reuse_completed {
        if let Some(r) = completed_run(cfg) {
            return Ok(r);
        }
    }
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let hash = cfg.hash();
    let schedule = cfg.schedule()?;
    let total = cfg.steps();
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let metrics_path = dir.join(METRICS_FILE);

    let (mut model, mut opt, mut rng, mut loss_ema, start, mut csv) = if opts.resume {
        let ck = load_checkpoint(&ckpt_path)?;
        if ck.meta.config_hash != hash {
            return Err(Error::Checkpoint(format!("checkpoint was written by config {}, current config is {hash}", ck.meta.config_hash)));
        }
        let text = std::fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let rng = ck.rng()?;
        (ck.model, ck.optimizer, rng, ck.loss_ema, ck.meta.step, truncate_metrics(&text, ck.meta.step))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::init(cfg.net.clone(), cfg.variant, cfg.global_source_shift, &mut rng)?;
        let opt = AdamWState::new(&model);
        (model, opt, rng, f64::NAN, 0, csv_header(cfg))
    };

    let started = unix_now();
    let clock = Instant::now();
    let mut manifest = Manifest {
        config_hash: hash.clone(),
        seed: cfg.seed,
        variant: cfg.variant.to_string(),
        carflow_version: env!("CARGO_PKG_VERSION").to_string(),
        git_commit: git_commit(),
        started_unix: started,
        finished_unix: None,
        wall_clock_secs: None,
        final_step: start,
        completed: false,
    };
    write_file(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    write_manifest(&dir, &manifest)?;

    let evaluator = Evaluator {
        cfg,
        gap_batch: cfg
            .variant
            .is_affine()
            .then(|| sample_batch_in(&mut sample_rng(cfg.seed, GAP_STREAM), cfg.gap_batch, &cfg.data, COLLAPSE_WINDOW.0, COLLAPSE_WINDOW.1)),
    };
    let checkpoint = |model: &Model, opt: &AdamWState, rng: &ChaCha8Rng, step: u64, loss_ema: f64, csv: &mut String| -> Result<()> {
        let (rec, err) = evaluator.record(model, step, loss_ema)?;
        csv.push_str(&csv_row(&rec, &err));
        write_file(&metrics_path, csv)?;
        save_checkpoint(&ckpt_path, &TrainState { model, optimizer: opt, step, loss_ema, seed: cfg.seed, rng, config_hash: &hash })?;
        if opts.progress {
            eprintln!(
                "[{}] step {step:>7} loss_ema {loss_ema:.5} w1 {:.4} len {:.4}{}",
                cfg.variant,
                rec.mean_w1(),
                rec.traj_len.mean,
                rec.collapse_gap.map_or(String::new(), |g| format!(" gap {g:.3e}"))
            );
        }
        Ok(())
    };

    if !opts.resume {
        checkpoint(&model, &opt, &rng, 0, loss_ema, &mut csv)?;
    }
    let stop = opts.stop_after.map_or(total, |s| s.min(total));
    let mut step = start;
    while step < stop {
        let batch = sample_batch(&mut rng, cfg.batch_size, &cfg.data);
        let grads = loss_and_grad(&model, &batch, &schedule, cfg.exec)?;
        if !grads.loss.is_finite() {
            let bad: Vec<String> = model
                .groups()
                .into_iter()
                .filter_map(|(g, p)| p.first_non_finite().map(|a| format!("{g}/{a}")))
                .collect();
            let scale: Vec<String> = model
                .groups()
                .into_iter()
                .map(|(g, p)| format!("{g} {:.3e}", p.data().iter().fold(0.0f64, |m, x| m.max(x.abs()))))
                .collect();
            return Err(Error::NonFinite(format!(
                "loss {} at step {step}; non-finite parameters: {bad:?}; max |param| per group: {}",
                grads.loss,
                scale.join(", ")
            )));
        }
        adamw_step(&mut opt, &cfg.optimizer, &mut model, &grads)?;
        loss_ema = if loss_ema.is_nan() { grads.loss } else { cfg.loss_ema_decay * loss_ema + (1.0 - cfg.loss_ema_decay) * grads.loss };
        step += 1;
        if step % cfg.eval_every == 0 || step == total {
            checkpoint(&model, &opt, &rng, step, loss_ema, &mut csv)?;
        }
    }
    if step == stop && !stop.is_multiple_of(cfg.eval_every) && stop != total {
        save_checkpoint(&ckpt_path, &TrainState { model: &model, optimizer: &opt, step, loss_ema, seed: cfg.seed, rng: &rng, config_hash: &hash })?;
    }

    if step == total {
        write_plots(cfg, &MetricsTable::parse(&csv)?)?;
    }
    manifest.final_step = step;
    manifest.completed = step == total;
    manifest.finished_unix = Some(unix_now());
    manifest.wall_clock_secs = Some(clock.elapsed().as_secs_f64());
    write_manifest(&dir, &manifest)?;
    std::io::stderr().flush().ok();
    Ok(RunResult { dir, config: cfg.clone(), metrics: MetricsTable::parse(&csv)?, reused: false })
}

/// Per-run convergence plots.
pub fn write_plots(cfg: &ExperimentConfig, t: &MetricsTable) -> Result<()> {
    let dir = &cfg.output_dir;
    let k = cfg.data.num_classes();
    let mut w1 = Chart::new(format!("W1 to ground truth ({})", cfg.variant), "step", "W1").y_scale(YScale::SymLog { linthresh: 0.01 });
    for y in 0..k {
        let c = format!("w1_{}", class_label(y));
        w1 = w1.with(Series::new(c.clone(), t.series(&c)?));
    }
    w1.save(&dir.join("w1.svg"))?;
    let len = Chart::new(format!("trajectory length ({})", cfg.variant), "step", "length").with(Series::new("traj_len", t.series("traj_len")?));
    len.save(&dir.join("traj_len.svg"))?;
    if cfg.data.dim == 1 {
        let mut shifts = Chart::new(format!("learned shifts ({})", cfg.variant), "step", "shift");
        for y in 0..k {
            for p in ["mu0", "mu1"] {
                let c = format!("{p}_{}", class_label(y));
                shifts = shifts.with(Series::new(c.clone(), t.series(&c)?));
            }
        }
        shifts.save(&dir.join("shifts.svg"))?;
    }
    if cfg.variant.is_affine() {
        let p = if cfg.variant.has_source_scale() { "sigma0" } else { "sigma1" };
        let mut sigma = Chart::new(format!("learned scale ({})", cfg.variant), "step", p).y_scale(YScale::SymLog { linthresh: 1e-3 });
        for y in 0..k {
            let c = format!("{p}_{}", class_label(y));
            sigma = sigma.with(Series::new(c.clone(), t.series(&c)?));
        }
        sigma.save(&dir.join("sigma.svg"))?;
        let gap = Chart::new(format!("collapse gap ({})", cfg.variant), "step", "E|v - v*|^2")
            .y_scale(YScale::SymLog { linthresh: 1e-3 })
            .with(Series::new("gap", t.series("collapse_gap")?));
        gap.save(&dir.join("collapse_gap.svg"))?;
    }
    Ok(())
}
