//! Sampling by integrating a velocity field from `t = 0` to `t = 1`.
//!
//! A sample starts from `x0 ~ N(0, I)`, is mapped to `z = f(x0, y)`,
//! integrated on the uniform grid `t_k = k / N`, and mapped back with
//! `x1 = g^{-1}(z, y)`. ODE mode uses explicit Euler. SDE mode uses
//! Euler-Maruyama on
//!
//! ```text
//! dZ = [u + sigma_t^2 / 2 * s] dt + sigma_t dW
//! s  = (alpha u - alpha' z) / (beta^2 alpha' - alpha beta' beta) + mu0(y) / beta
//! ```
//!
//! where `u` is the learned velocity and `s` the score implied by it. The
//! score has a `1/beta` pole at `t = 1`, so grid steps starting at or after
//! `t_max` and the final step into `t = 1` are noise-free drift steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{chunk_count, chunk_range, Exec};
use crate::net::{Scratch, VelocityField};
use crate::reparam::{inverse_target_with, ClassMaps};
use crate::schedule::{Schedule, ScheduleValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Ode,
    Sde,
}

/// Diffusion coefficient as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSchedule {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `value * (1 - t)`
    Decaying { value: f64 },
}

impl DiffusionSchedule {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            DiffusionSchedule::Zero => 0.0,
            DiffusionSchedule::Constant { value } => value,
            DiffusionSchedule::Decaying { value } => value * (1.0 - t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub mode: SamplerMode,
    pub sigma: DiffusionSchedule,
    pub t_max: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 50, mode: SamplerMode::Ode, sigma: DiffusionSchedule::Zero, t_max: 1.0 - 1e-3 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if self.mode == SamplerMode::Sde && !(self.t_max > 0.0 && self.t_max < 1.0) {
            return Err(Error::Config(format!("SDE t_max must lie in (0, 1), got {}", self.t_max)));
        }
        let bad_sigma = match self.sigma {
            DiffusionSchedule::Zero => false,
            DiffusionSchedule::Constant { value } | DiffusionSchedule::Decaying { value } => !(value >= 0.0 && value.is_finite()),
        };
        if bad_sigma {
            return Err(Error::Config("diffusion coefficient must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One generated sample with its latent trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub y: usize,
    pub dim: usize,
    pub x0: Vec<f64>,
    /// Latent states at every grid time, `(steps + 1) * dim` values.
    pub z: Vec<f64>,
    pub x1: Vec<f64>,
}

impl Trajectory {
    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.z.chunks_exact(self.dim)
    }

    pub fn start(&self) -> &[f64] {
        &self.z[..self.dim]
    }

    pub fn end(&self) -> &[f64] {
        &self.z[self.z.len() - self.dim..]
    }
}

/// Score implied by a velocity under a shifted Gaussian source.
pub fn marginal_score(s: ScheduleValues, t: f64, z: f64, u: f64, mu0: f64) -> Result<f64> {
    let denom = s.beta * s.beta * s.alpha_dot - s.alpha * s.beta_dot * s.beta;
    if denom.abs() < 1e-12 || s.beta.abs() < 1e-12 {
        return Err(Error::ScoreSingularity { t, denom });
    }
    Ok((s.alpha * u - s.alpha_dot * z) / denom + mu0 / s.beta)
}

/// [`marginal_score`] for `alpha = t`, `beta = 1 - t`, where the
/// denominator reduces to `1 - t`.
pub fn linear_marginal_score(t: f64, z: f64, u: f64, mu0: f64) -> f64 {
    (t * u - z) / (1.0 - t) + mu0 / (1.0 - t)
}

/// Score of `N(alpha z1 + beta mu0, beta^2)` at `z`.
pub fn conditional_score(s: ScheduleValues, z: f64, z1: f64, mu0: f64) -> f64 {
    (s.alpha * z1 + s.beta * mu0 - z) / (s.beta * s.beta)
}

/// Conditional velocity toward a fixed endpoint `z1`.
pub fn conditional_velocity(s: ScheduleValues, z: f64, z1: f64) -> f64 {
    s.beta_dot * (z - s.alpha * z1) / s.beta + s.alpha_dot * z1
}

fn integrate<F: VelocityField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    maps: &ClassMaps,
    y: usize,
    rng: &mut R,
    cfg: &SamplerConfig,
    schedule: &Schedule,
    scratch: &mut Scratch,
) -> Result<Trajectory> {
    let d = field.dim();
    let n = cfg.steps;
    let x0: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let mut z: Vec<f64> = x0.iter().enumerate().map(|(i, &x)| maps.source(x, i)).collect();
    let mut traj = Vec::with_capacity((n + 1) * d);
    traj.extend_from_slice(&z);
    let mut u = vec![0.0; d];
    let dt = 1.0 / n as f64;
    let sqrt_dt = dt.sqrt();
    let sde = cfg.mode == SamplerMode::Sde;

    for k in 0..n {
        let t = k as f64 / n as f64;
        field.velocity_into(scratch, &z, t, y, &mut u);
        let sigma = if sde && k + 1 < n && t < cfg.t_max { cfg.sigma.at(t) } else { 0.0 };
        if sigma == 0.0 {
            for (zi, ui) in z.iter_mut().zip(&u) {
                *zi += dt * ui;
            }
        } else {
            let s = schedule.eval_unchecked(t);
            for i in 0..d {
                let score = marginal_score(s, t, z[i], u[i], maps.mu0[i])?;
                let noise: f64 = StandardNormal.sample(rng);
                z[i] += dt * (u[i] + 0.5 * sigma * sigma * score) + sigma * sqrt_dt * noise;
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplerDiverged { step: k });
        }
        traj.extend_from_slice(&z);
    }
    let x1 = inverse_target_with(maps, &z, y)?;
    Ok(Trajectory { y, dim: d, x0, z: traj, x1 })
}

/// Euler ODE sample for class `y`.
pub fn sample_ode<F: VelocityField + ?Sized, R: Rng + ?Sized>(field: &F, maps: &ClassMaps, y: usize, rng: &mut R, steps: usize) -> Result<Trajectory> {
    let cfg = SamplerConfig { steps, ..SamplerConfig::default() };
    cfg.validate()?;
    integrate(field, maps, y, rng, &cfg, &Schedule::linear(), &mut Scratch::default())
}

/// Euler-Maruyama sample for class `y`; with zero diffusion it coincides
/// bit for bit with [`sample_ode`] under the same random stream.
pub fn sample_sde<F: VelocityField + ?Sized, R: Rng + ?Sized>(field: &F, maps: &ClassMaps, y: usize, rng: &mut R, cfg: &SamplerConfig, schedule: &Schedule) -> Result<Trajectory> {
    let cfg = SamplerConfig { mode: SamplerMode::Sde, ..cfg.clone() };
    cfg.validate()?;
    integrate(field, maps, y, rng, &cfg, schedule, &mut Scratch::default())
}

/// Random stream for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generate one trajectory per entry of `ys`. Sample `i` draws from
/// [`sample_rng`]`(seed, i)`, so the result does not depend on `exec`.
pub fn sample_many<F: VelocityField + ?Sized>(
    field: &F,
    maps: &[ClassMaps],
    ys: &[usize],
    seed: u64,
    cfg: &SamplerConfig,
    schedule: &Schedule,
    exec: Exec,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    if let Some(&y) = ys.iter().find(|&&y| y >= maps.len()) {
        return Err(Error::Domain(format!("class index {y} out of range for {} classes", maps.len())));
    }
    let n = ys.len();
    let chunks = exec.map(chunk_count(n), |c| {
        let mut scratch = Scratch::default();
        chunk_range(c, n)
            .map(|i| integrate(field, &maps[ys[i]], ys[i], &mut sample_rng(seed, i as u64), cfg, schedule, &mut scratch))
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(n);
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// One JSON object per line: `{"y": .., "z": [..], "x1": ..}`. For `dim > 1`
/// the latent rows and `x1` are nested arrays.
pub fn write_trajectories_jsonl<W: std::io::Write>(mut w: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for t in trajectories {
        let record = if t.dim == 1 {
            serde_json::json!({ "y": t.y, "z": t.z, "x1": t.x1[0] })
        } else {
            let rows: Vec<&[f64]> = t.points().collect();
            serde_json::json!({ "y": t.y, "z": rows, "x1": t.x1 })
        };
        writeln!(w, "{record}")?;
    }
    Ok(())
}
