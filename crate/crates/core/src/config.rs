//! Experiment configuration: a TOML file with nested sections, dotted
//! `key=value` overrides, and a stable content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::net::NetConfig;
use crate::optim::OptimizerConfig;
use crate::reparam::CarVariant;
use crate::sampler::SamplerConfig;
use crate::schedule::Schedule;

pub const DEFAULT_STEPS: u64 = 50_000;
pub const DEFAULT_COLLAPSE_STEPS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: CarVariant,
    pub schedule: String,
    pub seed: u64,
    pub batch_size: usize,
    /// Defaults to 50k, or 100k for the affine collapse variants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    pub eval_every: u64,
    pub eval_samples: usize,
    /// Batch size of the collapse-gap estimate (affine variants only).
    pub gap_batch: usize,
    pub loss_ema_decay: f64,
    /// One learnable source shift shared by every class.
    pub global_source_shift: bool,
    pub exec: Exec,
    pub output_dir: PathBuf,
    pub net: NetConfig,
    pub optimizer: OptimizerConfig,
    pub sampler: SamplerConfig,
    pub data: DataSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: CarVariant::Baseline,
            schedule: "linear".into(),
            seed: 0,
            batch_size: 1024,
            total_steps: None,
            eval_every: 1000,
            eval_samples: 10_000,
            gap_batch: 4096,
            loss_ema_decay: 0.99,
            global_source_shift: false,
            exec: Exec::default(),
            output_dir: PathBuf::from("runs/default"),
            net: NetConfig::default(),
            optimizer: OptimizerConfig::default(),
            sampler: SamplerConfig::default(),
            data: DataSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_variant(variant: CarVariant) -> Self {
        ExperimentConfig { variant, ..Default::default() }
    }

    pub fn steps(&self) -> u64 {
        self.total_steps.unwrap_or(if self.variant.is_affine() { DEFAULT_COLLAPSE_STEPS } else { DEFAULT_STEPS })
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::by_name(&self.schedule)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.net.validate()?;
        self.optimizer.validate()?;
        self.sampler.validate()?;
        self.schedule()?;
        if self.net.dim != self.data.dim || self.net.num_classes != self.data.num_classes() {
            return Err(Error::Config(format!(
                "net expects dim {} with {} classes but data has dim {} with {} classes",
                self.net.dim,
                self.net.num_classes,
                self.data.dim,
                self.data.num_classes()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.eval_samples == 0 || self.gap_batch == 0 {
            return Err(Error::Config("eval_samples and gap_batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.loss_ema_decay) {
            return Err(Error::Config(format!("loss_ema_decay must lie in [0, 1), got {}", self.loss_ema_decay)));
        }
        if self.global_source_shift && !self.variant.has_source_shift() {
            return Err(Error::Config(format!("global_source_shift needs a source shift, variant is {}", self.variant)));
        }
        Ok(())
    }

    /// Parse TOML text and apply `key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        let mut value = toml::Value::try_from(ExperimentConfig::default()).expect("defaults serialize");
        merge(&mut value, toml::Value::Table(table));
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = value.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from a file, or start from the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the canonical TOML form, leaving out `output_dir` and
    /// `exec`, which do not change any result.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { output_dir: PathBuf::new(), exec: Exec::Sequential, ..self.clone() };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Set a dotted key such as `optimizer.source_shift.learning_rate=1e-4`.
/// Numeric path segments index into arrays. The value is parsed as a TOML
/// value and falls back to a bare string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("non-empty key");
    let mut node = root;
    for part in path {
        node = step(node, part, key)?;
    }
    match node {
        toml::Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        toml::Value::Array(_) => *step(node, last, key)? = value,
        _ => return Err(Error::Config(format!("`{key}`: cannot descend into a scalar"))),
    }
    Ok(())
}

fn step<'a>(v: &'a mut toml::Value, part: &str, key: &str) -> Result<&'a mut toml::Value> {
    match v {
        toml::Value::Table(t) => Ok(t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))),
        toml::Value::Array(a) => {
            let i: usize = part.parse().map_err(|_| Error::Config(format!("`{key}`: expected an array index at `{part}`")))?;
            a.get_mut(i).ok_or_else(|| Error::Config(format!("`{key}`: index {i} out of range")))
        }
        _ => Err(Error::Config(format!("`{key}`: cannot descend into a scalar at `{part}`"))),
    }
}

/// Deep-merge `over` into `base`; tables merge key by key, everything else
/// is replaced.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.batch_size, 1024);
        assert_eq!(cfg.steps(), 50_000);
        assert_eq!(cfg.optimizer.beta1, 0.9);
        assert_eq!(cfg.optimizer.beta2, 0.95);
        assert_eq!(cfg.optimizer.source_shift.learning_rate, 1e-3);
        assert_eq!(cfg.optimizer.target_shift.learning_rate, 1e-4);
        assert_eq!(cfg.optimizer.backbone.learning_rate, 1e-5);
        assert_eq!(cfg.sampler.steps, 50);
        assert_eq!(ExperimentConfig::for_variant(CarVariant::AffineTarget).steps(), 100_000);
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::from_toml_str(
            "variant = \"joint\"\n[optimizer.source_shift]\nlearning_rate = 0.5\n",
            &[
                "optimizer.source_shift.learning_rate=1e-4".into(),
                "total_steps=10".into(),
                "output_dir=runs/x".into(),
                "sampler.sigma={kind=\"constant\", value=0.3}".into(),
                "data.classes.1.components.0.mean=[2.0]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.variant, CarVariant::Joint);
        assert_eq!(cfg.optimizer.source_shift.learning_rate, 1e-4);
        assert_eq!(cfg.steps(), 10);
        assert_eq!(cfg.output_dir, PathBuf::from("runs/x"));
        assert_eq!(cfg.sampler.sigma, crate::sampler::DiffusionSchedule::Constant { value: 0.3 });
        assert_eq!(cfg.data.classes[1].components[0].mean, vec![2.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml_str("nonsense = 1", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["batch_size=0".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["no_equals".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["data.classes.7.components.0.std=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["schedule=cosine".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["net.num_classes=3".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["global_source_shift=true".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("[[[", &[]).is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut cfg = ExperimentConfig::for_variant(CarVariant::AffineSource);
        cfg.total_steps = Some(123);
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml_str(&text, &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(other.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let moved = ExperimentConfig { output_dir: "elsewhere".into(), exec: Exec::Parallel, ..cfg.clone() };
        assert_eq!(moved.hash(), cfg.hash());
    }
}
