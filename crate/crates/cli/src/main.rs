use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use carflow::checkpoint::load_checkpoint;
use carflow::collapse::{collapse_gap, collapsed_field, example_cases, verify_pointwise_identity, COLLAPSE_WINDOW};
use carflow::config::ExperimentConfig;
use carflow::data::class_label;
use carflow::metrics::{eval_checkpoint, EvalSpec};
use carflow::objective::{cfm_loss_with_maps, sample_batch_in};
use carflow::runner::{run_train, RunOptions, CONFIG_FILE};
use carflow::sampler::{sample_many, sample_rng, write_trajectories_jsonl};
use carflow::suite::{run_suite, SuiteName, SuiteOptions};

#[derive(Parser)]
#[command(name = "carflow", version, about = "Condition-aware reparameterized flow matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print its metrics as JSON.
    Eval(EvalArgs),
    /// Sample trajectories from a checkpoint as JSONL.
    Sample(SampleArgs),
    /// Run an experiment suite (table2, fig2, fig4, appD_sweep, appD_uncond).
    Suite(SuiteArgs),
    /// Check the analytic collapsed fields, or measure the collapse gap of a checkpoint.
    Collapse(CollapseArgs),
}

/// Config sources shared by every subcommand. Named flags are applied after
/// the file and before `--set`.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set optimizer.source_shift.learning_rate=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    schedule: Option<String>,
    /// Force sequential execution.
    #[arg(long)]
    sequential: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = vec![];
        if let Some(v) = &self.variant {
            o.push(format!("variant=\"{v}\""));
        }
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(s) = &self.schedule {
            o.push(format!("schedule=\"{s}\""));
        }
        if self.sequential {
            o.push("exec=\"sequential\"".into());
        }
        o.extend(self.set.iter().cloned());
        o
    }

    fn load(&self, extra: &[String]) -> anyhow::Result<ExperimentConfig> {
        self.load_with_default(None, extra)
    }

    /// Like `load`, but falls back to `fallback` when no `--config` is given.
    fn load_with_default(&self, fallback: Option<&Path>, extra: &[String]) -> anyhow::Result<ExperimentConfig> {
        let mut o = extra.to_vec();
        o.extend(self.overrides());
        let path = self.config.as_deref().or(fallback.filter(|p| p.exists()));
        Ok(ExperimentConfig::load(path, &o)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop early after this step.
    #[arg(long)]
    stop_after: Option<u64>,
    /// Return a completed run with the same config instead of retraining.
    #[arg(long)]
    reuse: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct CheckpointArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint file, or a run directory containing `checkpoint.bin`.
    #[arg(long)]
    checkpoint: PathBuf,
}

impl CheckpointArgs {
    fn resolve(&self) -> anyhow::Result<(PathBuf, ExperimentConfig)> {
        let bin = if self.checkpoint.is_dir() { self.checkpoint.join(carflow::runner::CHECKPOINT_FILE) } else { self.checkpoint.clone() };
        let run_cfg = bin.parent().map(|d| d.join(CONFIG_FILE));
        let cfg = self.cfg.load_with_default(run_cfg.as_deref(), &[])?;
        Ok((bin, cfg))
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// Samples per class.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// Samples per class.
    #[arg(long, short, default_value_t = 100)]
    n: usize,
    /// Restrict to one class, by label (A, B, ...) or index.
    #[arg(long)]
    class: Option<String>,
    /// Output JSONL file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    /// table2, fig2, fig4, appD_sweep or appD_uncond.
    name: String,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, short, default_value = "runs")]
    out: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct CollapseArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Measure the collapse gap of this affine checkpoint instead of running the analytic checks.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Random points per pointwise-identity check.
    #[arg(long, default_value_t = 10_000)]
    points: usize,
    /// Batch size of the loss check.
    #[arg(long, default_value_t = 4096)]
    batch: usize,
}

fn parse_class(s: &str, k: usize) -> anyhow::Result<usize> {
    let y = match s.parse::<usize>() {
        Ok(y) => y,
        Err(_) => (0..k).find(|&y| class_label(y).eq_ignore_ascii_case(s)).with_context(|| format!("unknown class `{s}`"))?,
    };
    if y >= k {
        bail!("class {y} out of range for {k} classes");
    }
    Ok(y)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut extra = vec![];
    if let Some(s) = a.steps {
        extra.push(format!("total_steps={s}"));
    }
    if let Some(o) = &a.out {
        extra.push(format!("output_dir={}", toml_string(&o.display().to_string())));
    }
    let cfg = a.cfg.load(&extra)?;
    let opts = RunOptions { resume: a.resume, stop_after: a.stop_after, reuse_completed: a.reuse, progress: !a.quiet };
    let run = run_train(&cfg, &opts)?;
    println!("{}", run.dir.display());
    Ok(())
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (bin, mut cfg) = a.ckpt.resolve()?;
    if let Some(n) = a.samples {
        cfg.eval_samples = n;
    }
    let ck = load_checkpoint(&bin)?;
    let schedule = cfg.schedule()?;
    let spec = EvalSpec { data: &cfg.data, samples_per_class: cfg.eval_samples, seed: cfg.seed, sampler: &cfg.sampler, schedule: &schedule, exec: cfg.exec };
    let mut rec = eval_checkpoint(&ck.model, ck.meta.step, &spec)?;
    rec.loss_ema = ck.loss_ema;
    println!("{}", serde_json::to_string_pretty(&rec)?);
    Ok(())
}

fn sample(a: SampleArgs) -> anyhow::Result<()> {
    let (bin, cfg) = a.ckpt.resolve()?;
    let ck = load_checkpoint(&bin)?;
    let k = cfg.data.num_classes();
    let classes: Vec<usize> = match &a.class {
        Some(c) => vec![parse_class(c, k)?],
        None => (0..k).collect(),
    };
    let ys: Vec<usize> = classes.iter().flat_map(|&y| std::iter::repeat_n(y, a.n)).collect();
    let maps = ck.model.reparam.all_class_maps();
    let trajs = sample_many(&ck.model.net, &maps, &ys, cfg.seed, &cfg.sampler, &cfg.schedule()?, cfg.exec)?;
    match &a.out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(f);
            write_trajectories_jsonl(&mut w, &trajs)?;
            w.flush()?;
        }
        None => write_trajectories_jsonl(std::io::stdout().lock(), &trajs)?,
    }
    Ok(())
}

fn suite(a: SuiteArgs) -> anyhow::Result<()> {
    let name: SuiteName = a.name.parse()?;
    let extra: Vec<String> = a.steps.map(|s| format!("total_steps={s}")).into_iter().collect();
    let base = a.cfg.load(&extra)?;
    let opts = SuiteOptions { out_dir: a.out, seeds: a.seeds, base, progress: !a.quiet };
    let report = run_suite(name, &opts)?;
    print!("{}", report.markdown);
    Ok(())
}

fn collapse(a: CollapseArgs) -> anyhow::Result<()> {
    if let Some(p) = &a.checkpoint {
        let ck_args = CheckpointArgs { cfg: a.cfg.clone(), checkpoint: p.clone() };
        let (bin, cfg) = ck_args.resolve()?;
        let ck = load_checkpoint(&bin)?;
        let schedule = cfg.schedule()?;
        let batch = sample_batch_in(&mut sample_rng(cfg.seed, 2), a.batch, &cfg.data, COLLAPSE_WINDOW.0, COLLAPSE_WINDOW.1);
        let gap = collapse_gap(&ck.model, &batch, &schedule, cfg.exec)?;
        println!("step {} variant {} collapse_gap {gap:.6e}", ck.meta.step, ck.model.variant());
        return Ok(());
    }
    let cfg = a.cfg.load(&[])?;
    let schedule = cfg.schedule()?;
    let (k, d) = (cfg.data.num_classes(), cfg.data.dim);
    let mut failed = false;
    println!("case,max_pointwise_residual,cfm_loss");
    for (i, case) in example_cases(k, d).into_iter().enumerate() {
        let residual = verify_pointwise_identity(&case, &schedule, &mut sample_rng(cfg.seed, 10 + i as u64), a.points)?;
        let maps = case.degenerate_maps();
        let field = collapsed_field(case.clone(), &schedule)?;
        let batch = sample_batch_in(&mut sample_rng(cfg.seed, 20 + i as u64), a.batch, &cfg.data, COLLAPSE_WINDOW.0, COLLAPSE_WINDOW.1);
        let loss = cfm_loss_with_maps(&field, &maps, &batch, &schedule, cfg.exec)?;
        println!("{},{residual:.3e},{loss:.3e}", case.label());
        failed |= !(residual <= 1e-10 && loss <= 1e-20);
    }
    if failed {
        bail!("a collapsed field failed its identity or loss check");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sample(a) => sample(a),
        Command::Suite(a) => suite(a),
        Command::Collapse(a) => collapse(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
