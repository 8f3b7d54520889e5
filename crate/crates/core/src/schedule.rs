//! Noise schedules and the Gaussian interpolation path between endpoints.
//!
//! A schedule is a pair of monotone scalar functions `alpha(t)`, `beta(t)`
//! with `alpha(0) = beta(1) = 0` and `alpha(1) = beta(0) = 1`. The path point
//! at time `t` is `z_t = beta(t) z0 + alpha(t) z1` and the conditional target
//! velocity is its time derivative `u_t = beta'(t) z0 + alpha'(t) z1`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// The four scalar schedule values at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Linear,
    Custom {
        alpha: ScalarFn,
        beta: ScalarFn,
        alpha_dot: ScalarFn,
        beta_dot: ScalarFn,
    },
}

/// A noise schedule. Only the linear schedule is built in; closed-form
/// pairs can be supplied with [`Schedule::custom`].
#[derive(Clone)]
pub struct Schedule {
    name: String,
    kind: Kind,
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Schedule").field("name", &self.name).finish()
    }
}

impl Schedule {
    /// `alpha(t) = t`, `beta(t) = 1 - t`.
    pub fn linear() -> Self {
        Schedule { name: "linear".into(), kind: Kind::Linear }
    }

    pub fn custom(
        name: impl Into<String>,
        alpha: impl Fn(f64) -> f64 + Send + Sync + 'static,
        beta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
        beta_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Schedule {
            name: name.into(),
            kind: Kind::Custom {
                alpha: Arc::new(alpha),
                beta: Arc::new(beta),
                alpha_dot: Arc::new(alpha_dot),
                beta_dot: Arc::new(beta_dot),
            },
        }
    }

    /// Look up a built-in schedule by its config name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(Self::linear()),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, Kind::Linear)
    }

    /// Schedule values at `t`, rejecting times outside `[0, 1]`.
    pub fn eval(&self, t: f64) -> Result<ScheduleValues> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, 1]")));
        }
        Ok(self.eval_unchecked(t))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, t: f64) -> ScheduleValues {
        match &self.kind {
            Kind::Linear => ScheduleValues { alpha: t, beta: 1.0 - t, alpha_dot: 1.0, beta_dot: -1.0 },
            Kind::Custom { alpha, beta, alpha_dot, beta_dot } => ScheduleValues {
                alpha: alpha(t),
                beta: beta(t),
                alpha_dot: alpha_dot(t),
                beta_dot: beta_dot(t),
            },
        }
    }

    /// Verify boundary conditions, monotonicity and derivative consistency on
    /// a uniform grid of `grid` points. Returns a description of the first
    /// violation.
    pub fn validate(&self, grid: usize) -> std::result::Result<(), String> {
        let at0 = self.eval_unchecked(0.0);
        let at1 = self.eval_unchecked(1.0);
        let bc = [(at0.alpha, 0.0, "alpha(0)"), (at1.beta, 0.0, "beta(1)"), (at1.alpha, 1.0, "alpha(1)"), (at0.beta, 1.0, "beta(0)")];
        for (got, want, what) in bc {
            if (got - want).abs() > 1e-12 {
                return Err(format!("{what} = {got}, expected {want}"));
            }
        }
        let grid = grid.max(3);
        let h = 1e-5;
        let mut prev = at0;
        for i in 1..grid {
            let t = i as f64 / (grid - 1) as f64;
            let cur = self.eval_unchecked(t);
            if cur.alpha < prev.alpha || cur.beta > prev.beta {
                return Err(format!("schedule not monotone near t={t}"));
            }
            prev = cur;
            if i + 1 < grid && t - h > 0.0 && t + h < 1.0 {
                let lo = self.eval_unchecked(t - h);
                let hi = self.eval_unchecked(t + h);
                let fd_alpha = (hi.alpha - lo.alpha) / (2.0 * h);
                let fd_beta = (hi.beta - lo.beta) / (2.0 * h);
                if (fd_alpha - cur.alpha_dot).abs() > 1e-6 || (fd_beta - cur.beta_dot).abs() > 1e-6 {
                    return Err(format!("derivative mismatch at t={t}"));
                }
            }
        }
        Ok(())
    }

    /// Interpolant and target velocity between `z0` and `z1` at time `t`.
    pub fn interpolate(&self, z0: &[f64], z1: &[f64], t: f64) -> Result<PathPoint> {
        if z0.len() != z1.len() {
            return Err(Error::Shape { expected: z0.len(), got: z1.len() });
        }
        let s = self.eval(t)?;
        let z_t = z0.iter().zip(z1).map(|(&a, &b)| s.beta * a + s.alpha * b).collect();
        let u_t = z0.iter().zip(z1).map(|(&a, &b)| s.beta_dot * a + s.alpha_dot * b).collect();
        Ok(PathPoint { z_t, u_t, t })
    }
}

/// A point on the probability path together with its target velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub z_t: Vec<f64>,
    pub u_t: Vec<f64>,
    pub t: f64,
}
