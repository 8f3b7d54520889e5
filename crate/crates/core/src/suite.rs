//! Experiment suites: groups of training runs plus a report.
//!
//! Every run lives in `<out>/runs/<tag>` and is reused when a completed run
//! with the same config hash is already there, so suites that share runs
//! (e.g. `table2` and `fig2`) train each configuration once.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::data::class_label;
use crate::error::{Error, Result};
use crate::metrics::{generate, EvalSpec, MeanErr};
use crate::optim::OptimizerConfig;
use crate::plot::{Chart, Series, YScale};
use crate::reparam::CarVariant;
use crate::runner::{can_resume, run_train, RunOptions, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    Table2,
    Fig2,
    Fig4,
    AppdSweep,
    AppdUncond,
}

impl SuiteName {
    pub const ALL: [SuiteName; 5] = [SuiteName::Table2, SuiteName::Fig2, SuiteName::Fig4, SuiteName::AppdSweep, SuiteName::AppdUncond];

    pub fn name(self) -> &'static str {
        match self {
            SuiteName::Table2 => "table2",
            SuiteName::Fig2 => "fig2",
            SuiteName::Fig4 => "fig4",
            SuiteName::AppdSweep => "appD_sweep",
            SuiteName::AppdUncond => "appD_uncond",
        }
    }
}

impl FromStr for SuiteName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteName::ALL
            .into_iter()
            .find(|n| n.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}` (expected one of table2, fig2, fig4, appD_sweep, appD_uncond)")))
    }
}

/// Settings shared by every run of a suite.
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Template for every run; `variant`, `seed`, `output_dir` and the
    /// swept keys are set per run.
    pub base: ExperimentConfig,
    pub progress: bool,
}

impl SuiteOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        SuiteOptions { out_dir: out_dir.into(), seeds: vec![0, 1, 2], base: ExperimentConfig::default(), progress: false }
    }

    fn config(&self, variant: CarVariant, seed: u64, tag: &str) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.variant = variant;
        cfg.seed = seed;
        cfg.output_dir = self.out_dir.join("runs").join(format!("{tag}_seed{seed}"));
        cfg
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<RunResult> {
        let resume = can_resume(cfg);
        run_train(cfg, &RunOptions { resume, reuse_completed: true, progress: self.progress, ..RunOptions::default() })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub markdown: String,
    pub data: serde_json::Value,
}

impl SuiteReport {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let md = dir.join("report.md");
        std::fs::write(&md, &self.markdown).map_err(|e| Error::io(&md, e))?;
        let js = dir.join("report.json");
        std::fs::write(&js, serde_json::to_string_pretty(&self.data).expect("report serializes") + "\n").map_err(|e| Error::io(&js, e))
    }
}

pub fn run_suite(name: SuiteName, opts: &SuiteOptions) -> Result<SuiteReport> {
    if opts.seeds.is_empty() {
        return Err(Error::Config("a suite needs at least one seed".into()));
    }
    let report = match name {
        SuiteName::Table2 => table2(opts)?,
        SuiteName::Fig2 => fig2(opts)?,
        SuiteName::Fig4 => fig4(opts)?,
        SuiteName::AppdSweep => appd_sweep(opts)?,
        SuiteName::AppdUncond => appd_uncond(opts)?,
    };
    report.save(&opts.out_dir.join(name.name()))?;
    Ok(report)
}

pub const TABLE2_VARIANTS: [CarVariant; 4] = [CarVariant::Baseline, CarVariant::SourceOnly, CarVariant::TargetOnly, CarVariant::Joint];

/// Final-step statistics of one variant across seeds.
#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: CarVariant,
    pub seeds: Vec<u64>,
    /// Across-seed mean and 2-stderr of the final trajectory length.
    pub traj_len: MeanErr,
    pub displacement: MeanErr,
    /// Final mean-over-classes W1 per seed.
    pub w1: MeanErr,
    pub per_seed_traj_len: Vec<f64>,
    pub per_seed_w1: Vec<f64>,
    /// Final per-class W1, averaged over seeds.
    pub w1_per_class: Vec<f64>,
}

pub fn summarize(variant: CarVariant, runs: &[RunResult]) -> Result<VariantSummary> {
    let k = runs[0].config.data.num_classes();
    let lens = runs.iter().map(|r| r.metrics.last("traj_len")).collect::<Result<Vec<_>>>()?;
    let disp = runs.iter().map(|r| r.metrics.last("displacement")).collect::<Result<Vec<_>>>()?;
    let w1 = runs.iter().map(|r| r.metrics.last("w1_mean")).collect::<Result<Vec<_>>>()?;
    let mut w1_per_class = vec![0.0; k];
    for r in runs {
        for (y, w) in w1_per_class.iter_mut().enumerate() {
            *w += r.metrics.last(&format!("w1_{}", class_label(y)))? / runs.len() as f64;
        }
    }
    Ok(VariantSummary {
        variant,
        seeds: runs.iter().map(|r| r.config.seed).collect(),
        traj_len: MeanErr::of(&lens),
        displacement: MeanErr::of(&disp),
        w1: MeanErr::of(&w1),
        per_seed_traj_len: lens,
        per_seed_w1: w1,
        w1_per_class,
    })
}

/// Runs of the four Table-2 variants, one entry per variant.
pub fn table2_runs(opts: &SuiteOptions) -> Result<Vec<(CarVariant, Vec<RunResult>)>> {
    TABLE2_VARIANTS
        .iter()
        .map(|&v| {
            let runs = opts.seeds.iter().map(|&s| opts.run(&opts.config(v, s, v.name()))).collect::<Result<Vec<_>>>()?;
            Ok((v, runs))
        })
        .collect()
}

fn table2(opts: &SuiteOptions) -> Result<SuiteReport> {
    let runs = table2_runs(opts)?;
    let rows = runs.iter().map(|(v, r)| summarize(*v, r)).collect::<Result<Vec<_>>>()?;
    let mut md = String::new();
    let _ = writeln!(md, "# Average trajectory length\n");
    let _ = writeln!(md, "Seeds: {:?}. Bounds are 2 standard errors across seeds.\n", opts.seeds);
    let _ = writeln!(md, "| variant | length | displacement | final W1 (mean over classes) |");
    let _ = writeln!(md, "|---|---|---|---|");
    for r in &rows {
        let _ = writeln!(
            md,
            "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
            r.variant, r.traj_len.mean, r.traj_len.err2, r.displacement.mean, r.displacement.err2, r.w1.mean, r.w1.err2
        );
    }
    let m = |v: CarVariant| rows.iter().find(|r| r.variant == v).map(|r| r.traj_len.mean).unwrap_or(f64::NAN);
    let ordered = m(CarVariant::Joint) <= m(CarVariant::TargetOnly) && m(CarVariant::TargetOnly) <= m(CarVariant::SourceOnly) && m(CarVariant::SourceOnly) < m(CarVariant::Baseline);
    let _ = writeln!(md, "\nOrdering joint <= target_only <= source_only < baseline: {}", if ordered { "holds" } else { "violated" });
    Ok(SuiteReport { suite: "table2".into(), markdown: md, data: json!({ "rows": rows, "ordering_holds": ordered }) })
}

fn fig2(opts: &SuiteOptions) -> Result<SuiteReport> {
    let runs = table2_runs(opts)?;
    let dir = opts.out_dir.join("fig2");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut w1 = Chart::new("W1 to ground truth (mean over classes)", "step", "W1").y_scale(YScale::SymLog { linthresh: 0.01 });
    let mut shifts = Chart::new("learned shifts", "step", "shift");
    let mut finals = serde_json::Map::new();
    for (v, r) in &runs {
        let first = &r[0];
        w1 = w1.with(Series::new(v.name(), first.metrics.series("w1_mean")?));
        for (p, on) in [("mu0", v.has_source_shift()), ("mu1", v.has_target_shift())] {
            if on && first.config.data.dim == 1 {
                for y in 0..first.config.data.num_classes() {
                    let c = format!("{p}_{}", class_label(y));
                    shifts = shifts.with(Series::new(format!("{} {c}", v.name()), first.metrics.series(&c)?));
                }
            }
        }
        finals.insert(v.name().into(), json!(summarize(*v, r)?));
    }
    w1.save(&dir.join("w1_vs_step.svg"))?;
    shifts.save(&dir.join("shift_vs_step.svg"))?;
    let base_w1 = summarize(CarVariant::Baseline, &runs[0].1)?.w1_per_class;
    let mut md = String::from("# Convergence\n\nFinal per-class W1 (seed mean):\n\n| variant | per-class W1 | below baseline |\n|---|---|---|\n");
    for (v, r) in &runs {
        let s = summarize(*v, r)?;
        let below = s.w1_per_class.iter().zip(&base_w1).all(|(a, b)| a < b);
        let _ = writeln!(md, "| {} | {:?} | {} |", v, s.w1_per_class.iter().map(|w| (w * 1e4).round() / 1e4).collect::<Vec<_>>(), if *v == CarVariant::Baseline { "-" } else if below { "yes" } else { "no" });
    }
    let _ = writeln!(md, "\nPlots: fig2/w1_vs_step.svg, fig2/shift_vs_step.svg");
    Ok(SuiteReport { suite: "fig2".into(), markdown: md, data: serde_json::Value::Object(finals) })
}

/// Outcome of one collapse run.
#[derive(Debug, Clone, Serialize)]
pub struct CollapseSummary {
    pub variant: CarVariant,
    pub seed: u64,
    pub final_sigma: Vec<f64>,
    pub final_gap: f64,
    /// `(step, sigma per class)` at every evaluation.
    pub sigma_history: Vec<(f64, Vec<f64>)>,
    /// Whether sampling the final model raised the singular-map error.
    pub sampling_singular: bool,
    pub sampling_error: Option<String>,
}

pub fn collapse_summary(run: &RunResult) -> Result<CollapseSummary> {
    let cfg = &run.config;
    let p = if cfg.variant.has_source_scale() { "sigma0" } else { "sigma1" };
    let k = cfg.data.num_classes();
    let cols = (0..k).map(|y| run.metrics.column(&format!("{p}_{}", class_label(y)))).collect::<Result<Vec<_>>>()?;
    let steps = run.metrics.steps()?;
    let sigma_history = steps.iter().enumerate().map(|(i, &s)| (s, cols.iter().map(|c| c[i]).collect())).collect();
    let model = run.final_model()?;
    let schedule = cfg.schedule()?;
    let spec = EvalSpec { data: &cfg.data, samples_per_class: 1000, seed: cfg.seed, sampler: &cfg.sampler, schedule: &schedule, exec: cfg.exec };
    let err = generate(&model, &spec).err();
    Ok(CollapseSummary {
        variant: cfg.variant,
        seed: cfg.seed,
        final_sigma: cols.iter().map(|c| *c.last().expect("rows")).collect(),
        final_gap: run.metrics.last("collapse_gap")?,
        sigma_history,
        sampling_singular: matches!(err, Some(Error::SingularMap { .. })),
        sampling_error: err.map(|e| e.to_string()),
    })
}

pub fn fig4_runs(opts: &SuiteOptions) -> Result<Vec<RunResult>> {
    let seed = opts.seeds[0];
    [CarVariant::AffineSource, CarVariant::AffineTarget]
        .iter()
        .map(|&v| {
            opts.run(&opts.config(v, seed, v.name()))
        })
        .collect()
}

fn fig4(opts: &SuiteOptions) -> Result<SuiteReport> {
    let runs = fig4_runs(opts)?;
    let dir = opts.out_dir.join("fig4");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut sigma = Chart::new("learned scale", "step", "sigma").y_scale(YScale::SymLog { linthresh: 1e-3 });
    let mut gap = Chart::new("collapse gap E|v - v*|^2", "step", "gap").y_scale(YScale::SymLog { linthresh: 1e-3 });
    let mut md = String::from("# Mode collapse with affine maps\n\n| variant | final sigma per class | final gap | sampling |\n|---|---|---|---|\n");
    let mut data = vec![];
    for r in &runs {
        let s = collapse_summary(r)?;
        let p = if s.variant.has_source_scale() { "sigma0" } else { "sigma1" };
        for y in 0..r.config.data.num_classes() {
            let c = format!("{p}_{}", class_label(y));
            sigma = sigma.with(Series::new(format!("{} {c}", s.variant), r.metrics.series(&c)?));
        }
        gap = gap.with(Series::new(s.variant.name(), r.metrics.series("collapse_gap")?));
        let sampling = match (&s.sampling_error, s.sampling_singular) {
            (None, _) => "ok".to_string(),
            (Some(_), true) => "singular map raised".to_string(),
            (Some(e), false) => format!("error: {e}"),
        };
        let _ = writeln!(md, "| {} | {:?} | {:.3e} | {} |", s.variant, s.final_sigma, s.final_gap, sampling);
        data.push(s);
    }
    sigma.save(&dir.join("sigma_vs_step.svg"))?;
    gap.save(&dir.join("gap_vs_step.svg"))?;
    let _ = writeln!(md, "\nPlots: fig4/sigma_vs_step.svg, fig4/gap_vs_step.svg");
    Ok(SuiteReport { suite: "fig4".into(), markdown: md, data: json!(data) })
}

pub const SWEEP_RATES: [f64; 3] = [1e-5, 1e-4, 1e-3];

fn appd_sweep(opts: &SuiteOptions) -> Result<SuiteReport> {
    let seed = opts.seeds[0];
    let dir = opts.out_dir.join("appD_sweep");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let defaults = OptimizerConfig::default();
    let mut md = String::from("# Shift-network learning-rate sweep\n\n| variant | shift lr | final shifts | final W1 |\n|---|---|---|---|\n");
    let mut data = vec![];
    for (v, p, default_lr) in [
        (CarVariant::SourceOnly, "mu0", defaults.source_shift.learning_rate),
        (CarVariant::TargetOnly, "mu1", defaults.target_shift.learning_rate),
    ] {
        let mut mu = Chart::new(format!("learned {p} ({v})"), "step", p);
        let mut w1 = Chart::new(format!("W1 ({v})"), "step", "W1").y_scale(YScale::SymLog { linthresh: 0.01 });
        for lr in SWEEP_RATES {
            let tag = if lr == default_lr { v.name().to_string() } else { format!("{}_lr{lr:e}", v.name()) };
            let mut cfg = opts.config(v, seed, &tag);
            match v {
                CarVariant::SourceOnly => cfg.optimizer.source_shift.learning_rate = lr,
                _ => cfg.optimizer.target_shift.learning_rate = lr,
            }
            let r = opts.run(&cfg)?;
            let k = cfg.data.num_classes();
            let mut finals = vec![];
            for y in 0..k {
                let c = format!("{p}_{}", class_label(y));
                if cfg.data.dim == 1 {
                    mu = mu.with(Series::new(format!("lr {lr:e} {c}"), r.metrics.series(&c)?));
                    finals.push(r.metrics.last(&c)?);
                }
            }
            w1 = w1.with(Series::new(format!("lr {lr:e}"), r.metrics.series("w1_mean")?));
            let fw = r.metrics.last("w1_mean")?;
            let _ = writeln!(md, "| {v} | {lr:e} | {finals:?} | {fw:.4} |");
            data.push(json!({ "variant": v, "lr": lr, "final_shifts": finals, "final_w1": fw }));
        }
        mu.save(&dir.join(format!("{p}_{}.svg", v.name())))?;
        w1.save(&dir.join(format!("w1_{}.svg", v.name())))?;
    }
    Ok(SuiteReport { suite: "appD_sweep".into(), markdown: md, data: json!(data) })
}

/// Source-only runs with a global shift and with the condition-aware shift.
pub fn appd_uncond_runs(opts: &SuiteOptions) -> Result<(Vec<RunResult>, Vec<RunResult>)> {
    let v = CarVariant::SourceOnly;
    let global = opts
        .seeds
        .iter()
        .map(|&s| {
            let mut cfg = opts.config(v, s, "source_only_global");
            cfg.global_source_shift = true;
            opts.run(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let conditional = opts
        .seeds
        .iter()
        .map(|&s| {
            let mut cfg = opts.config(v, s, v.name());
            cfg.global_source_shift = false;
            opts.run(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((global, conditional))
}

fn appd_uncond(opts: &SuiteOptions) -> Result<SuiteReport> {
    let (global, conditional) = appd_uncond_runs(opts)?;
    let g = summarize(CarVariant::SourceOnly, &global)?;
    let c = summarize(CarVariant::SourceOnly, &conditional)?;
    let mut md = String::from("# Global versus condition-aware source shift\n\n| source shift | final W1 | trajectory length |\n|---|---|---|\n");
    let _ = writeln!(md, "| global | {:.4} ± {:.4} | {:.4} |", g.w1.mean, g.w1.err2, g.traj_len.mean);
    let _ = writeln!(md, "| condition-aware | {:.4} ± {:.4} | {:.4} |", c.w1.mean, c.w1.err2, c.traj_len.mean);
    let lower = c.w1.mean < g.w1.mean;
    let _ = writeln!(md, "\nCondition-aware W1 lower: {}", if lower { "yes" } else { "no" });
    Ok(SuiteReport { suite: "appD_uncond".into(), markdown: md, data: json!({ "global": g, "conditional": c, "conditional_lower": lower }) })
}
