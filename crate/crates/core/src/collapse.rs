//! Zero-cost collapse modes of the reparameterized objective.
//!
//! When the source or target map degenerates, the flow-matching loss has a
//! trivial minimum at an affine field `v*(z, t, y) = gamma(t, y) z + eta(t, y)`.
//! Under the linear schedule:
//!
//! | case | degeneracy               | gamma       | eta           |
//! |------|--------------------------|-------------|---------------|
//! | i    | `z0 = mu0(y)`            | `1/t`       | `-mu0/t`      |
//! | ii   | `z1 = mu1(y)`            | `-1/(1-t)`  | `mu1/(1-t)`   |
//! | iii  | source scale unbounded   | `-1/(1-t)`  | `0`           |
//! | iv   | target scale unbounded   | `1/t`       | `0`           |
//! | v    | `z0 = mu0`, `z1 = k mu0` | `0`         | `(k-1) mu0`   |
//!
//! The unbounded cases are represented by their limits relative to the
//! diverging side: case (iii) pins `z1 = 0` and case (iv) pins `z0 = 0`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{chunk_count, chunk_range, Exec};
use crate::model::Model;
use crate::net::{Scratch, VelocityField};
use crate::objective::{endpoints, TrainingBatch};
use crate::reparam::{CarVariant, ClassMaps};
use crate::schedule::{Schedule, ScheduleValues};

/// Lower and upper end of the time window used for every collapse check.
pub const COLLAPSE_WINDOW: (f64, f64) = (0.01, 0.99);

/// A collapse pattern with its per-class parameters (one row per class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum CollapseCase {
    ConstantSource { mu0: Vec<Vec<f64>> },
    ConstantTarget { mu1: Vec<Vec<f64>> },
    UnboundedSource { classes: usize, dim: usize },
    UnboundedTarget { classes: usize, dim: usize },
    Proportional { mu0: Vec<Vec<f64>>, k: Vec<f64> },
}

impl CollapseCase {
    pub fn label(&self) -> &'static str {
        match self {
            CollapseCase::ConstantSource { .. } => "constant_source",
            CollapseCase::ConstantTarget { .. } => "constant_target",
            CollapseCase::UnboundedSource { .. } => "unbounded_source",
            CollapseCase::UnboundedTarget { .. } => "unbounded_target",
            CollapseCase::Proportional { .. } => "proportional",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            CollapseCase::ConstantSource { mu0: c } | CollapseCase::ConstantTarget { mu1: c } | CollapseCase::Proportional { mu0: c, .. } => c.len(),
            CollapseCase::UnboundedSource { classes, .. } | CollapseCase::UnboundedTarget { classes, .. } => *classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CollapseCase::ConstantSource { mu0: c } | CollapseCase::ConstantTarget { mu1: c } | CollapseCase::Proportional { mu0: c, .. } => {
                c.first().map_or(0, Vec::len)
            }
            CollapseCase::UnboundedSource { dim, .. } | CollapseCase::UnboundedTarget { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (classes, dim) = (self.num_classes(), self.dim());
        if classes == 0 || dim == 0 {
            return Err(Error::Domain(format!("{} case needs at least one class and one dimension", self.label())));
        }
        let rows = match self {
            CollapseCase::ConstantSource { mu0: c } | CollapseCase::ConstantTarget { mu1: c } | CollapseCase::Proportional { mu0: c, .. } => c.as_slice(),
            _ => &[],
        };
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("collapse parameters have inconsistent dimensions".into()));
        }
        let mut values = rows.iter().flatten().copied().collect::<Vec<_>>();
        if let CollapseCase::Proportional { k, .. } = self {
            if k.len() != classes {
                return Err(Error::Shape { expected: classes, got: k.len() });
            }
            values.extend_from_slice(k);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("{} parameters must be finite", self.label())));
        }
        Ok(())
    }

    /// Per-class maps that realize this degeneracy exactly.
    pub fn degenerate_maps(&self) -> Vec<ClassMaps> {
        let (classes, dim) = (self.num_classes(), self.dim());
        (0..classes)
            .map(|y| {
                let mut m = ClassMaps::identity(dim);
                match self {
                    CollapseCase::ConstantSource { mu0 } => {
                        m.sigma0 = 0.0;
                        m.mu0 = mu0[y].clone();
                    }
                    CollapseCase::ConstantTarget { mu1 } => {
                        m.sigma1 = 0.0;
                        m.mu1 = mu1[y].clone();
                    }
                    CollapseCase::UnboundedSource { .. } => m.sigma1 = 0.0,
                    CollapseCase::UnboundedTarget { .. } => m.sigma0 = 0.0,
                    CollapseCase::Proportional { mu0, k } => {
                        m.sigma0 = 0.0;
                        m.sigma1 = 0.0;
                        m.mu0 = mu0[y].clone();
                        m.mu1 = mu0[y].iter().map(|c| k[y] * c).collect();
                    }
                }
                m
            })
            .collect()
    }
}

/// One fixed instance of every collapse case on `k` classes in `d` dimensions.
pub fn example_cases(k: usize, d: usize) -> Vec<CollapseCase> {
    let rows = |f: &dyn Fn(usize, usize) -> f64| (0..k).map(|y| (0..d).map(|i| f(y, i)).collect()).collect::<Vec<Vec<f64>>>();
    vec![
        CollapseCase::ConstantSource { mu0: rows(&|y, i| 1.5 * y as f64 - 0.7 + 0.1 * i as f64) },
        CollapseCase::ConstantTarget { mu1: rows(&|y, i| -1.2 * y as f64 + 0.4 - 0.2 * i as f64) },
        CollapseCase::UnboundedSource { classes: k, dim: d },
        CollapseCase::UnboundedTarget { classes: k, dim: d },
        CollapseCase::Proportional { mu0: rows(&|y, i| 0.8 - 1.1 * y as f64 + 0.3 * i as f64), k: (0..k).map(|y| 0.5 + y as f64).collect() },
    ]
}

/// The affine zero-loss field of a collapse case.
#[derive(Debug, Clone)]
pub struct AffineField {
    case: CollapseCase,
    schedule: Schedule,
}

/// Build the collapsed field of `case` under `schedule`.
pub fn collapsed_field(case: CollapseCase, schedule: &Schedule) -> Result<AffineField> {
    case.validate()?;
    Ok(AffineField { case, schedule: schedule.clone() })
}

const POLE_TOL: f64 = 1e-12;

impl AffineField {
    pub fn case(&self) -> &CollapseCase {
        &self.case
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.case.num_classes() {
            return Err(Error::Domain(format!("class index {y} out of range for {} classes", self.case.num_classes())));
        }
        Ok(())
    }

    fn pole(&self, t: f64) -> Error {
        Error::Pole { case: self.case.label(), t }
    }

    fn values(&self, t: f64) -> Result<ScheduleValues> {
        self.schedule.eval(t)
    }

    pub fn gamma(&self, t: f64, y: usize) -> Result<f64> {
        self.check_class(y)?;
        let s = self.values(t)?;
        let linear = self.schedule.is_linear();
        match &self.case {
            CollapseCase::ConstantSource { .. } | CollapseCase::UnboundedTarget { .. } => {
                if s.alpha.abs() < POLE_TOL {
                    return Err(self.pole(t));
                }
                Ok(if linear { 1.0 / t } else { s.alpha_dot / s.alpha })
            }
            CollapseCase::ConstantTarget { .. } | CollapseCase::UnboundedSource { .. } => {
                if s.beta.abs() < POLE_TOL {
                    return Err(self.pole(t));
                }
                Ok(if linear { -1.0 / (1.0 - t) } else { s.beta_dot / s.beta })
            }
            CollapseCase::Proportional { .. } => Ok(0.0),
        }
    }

    pub fn eta(&self, t: f64, y: usize) -> Result<Vec<f64>> {
        let gamma = self.gamma(t, y)?;
        let s = self.values(t)?;
        let linear = self.schedule.is_linear();
        Ok(match &self.case {
            CollapseCase::ConstantSource { mu0 } => {
                mu0[y].iter().map(|c| if linear { -c / t } else { c * (s.beta_dot - gamma * s.beta) }).collect()
            }
            CollapseCase::ConstantTarget { mu1 } => {
                mu1[y].iter().map(|c| if linear { c / (1.0 - t) } else { c * (s.alpha_dot - gamma * s.alpha) }).collect()
            }
            CollapseCase::UnboundedSource { dim, .. } | CollapseCase::UnboundedTarget { dim, .. } => vec![0.0; *dim],
            CollapseCase::Proportional { mu0, k } => {
                mu0[y].iter().map(|c| if linear { (k[y] - 1.0) * c } else { s.beta_dot * c + s.alpha_dot * k[y] * c }).collect()
            }
        })
    }

    /// `gamma(t, y) z + eta(t, y)`.
    pub fn eval(&self, z: &[f64], t: f64, y: usize) -> Result<Vec<f64>> {
        if z.len() != self.case.dim() {
            return Err(Error::Shape { expected: self.case.dim(), got: z.len() });
        }
        let gamma = self.gamma(t, y)?;
        let eta = self.eta(t, y)?;
        Ok(z.iter().zip(&eta).map(|(zi, e)| gamma * zi + e).collect())
    }
}

impl VelocityField for AffineField {
    fn dim(&self) -> usize {
        self.case.dim()
    }

    /// Writes NaN at a pole.
    fn velocity_into(&self, _: &mut Scratch, z: &[f64], t: f64, y: usize, out: &mut [f64]) {
        match self.eval(z, t, y) {
            Ok(v) => out.copy_from_slice(&v),
            Err(_) => out.fill(f64::NAN),
        }
    }
}

/// Growth rate of the zero-loss field along the line `z0 = k z1`.
pub fn proportional_gamma(schedule: &Schedule, t: f64, k: f64) -> Result<f64> {
    let s = schedule.eval(t)?;
    let den = s.beta * k + s.alpha;
    if den.abs() < POLE_TOL {
        return Err(Error::Pole { case: "proportional", t });
    }
    Ok((s.beta_dot * k + s.alpha_dot) / den)
}

/// `max_i |v(z_t)_i - (beta' z0 + alpha' z1)_i|` at one point.
pub fn pointwise_residual(field: &AffineField, z0: &[f64], z1: &[f64], t: f64, y: usize, schedule: &Schedule) -> Result<f64> {
    let s = schedule.eval(t)?;
    let zt: Vec<f64> = z0.iter().zip(z1).map(|(a, b)| s.beta * a + s.alpha * b).collect();
    let v = field.eval(&zt, t, y)?;
    Ok(v.iter()
        .zip(z0.iter().zip(z1))
        .map(|(vi, (a, b))| (vi - (s.beta_dot * a + s.alpha_dot * b)).abs())
        .fold(0.0, f64::max))
}

/// Largest pointwise residual over `n_trials` random points on the
/// collapse manifold of `case`, with `t` uniform in the collapse window.
pub fn verify_pointwise_identity<R: Rng + ?Sized>(case: &CollapseCase, schedule: &Schedule, rng: &mut R, n_trials: usize) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::Domain("n_trials must be at least 1".into()));
    }
    let field = collapsed_field(case.clone(), schedule)?;
    let maps = case.degenerate_maps();
    let d = case.dim();
    let mut worst = 0.0f64;
    let (mut z0, mut z1) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..n_trials {
        let y = rng.random_range(0..maps.len());
        for i in 0..d {
            let x0: f64 = StandardNormal.sample(rng);
            let x1: f64 = StandardNormal.sample(rng);
            z0[i] = maps[y].source(3.0 * x0, i);
            z1[i] = maps[y].target(3.0 * x1, i);
        }
        let t = rng.random_range(COLLAPSE_WINDOW.0..COLLAPSE_WINDOW.1);
        worst = worst.max(pointwise_residual(&field, &z0, &z1, t, y, schedule)?);
    }
    Ok(worst)
}

/// The constant-map collapse case matching a model's current affine maps:
/// case (i) for `affine_source`, case (ii) for `affine_target`.
pub fn matching_case(model: &Model) -> Result<CollapseCase> {
    let maps = model.reparam.all_class_maps();
    match model.variant() {
        CarVariant::AffineSource => Ok(CollapseCase::ConstantSource { mu0: maps.iter().map(|m| m.mu0.clone()).collect() }),
        CarVariant::AffineTarget => Ok(CollapseCase::ConstantTarget { mu1: maps.iter().map(|m| m.mu1.clone()).collect() }),
        v => Err(Error::Domain(format!("variant {v} has no learnable scale to collapse"))),
    }
}

/// `E ||v(z_t) - v*(z_t)||^2` over `batch`, with `z_t` built from `maps`.
/// Batch times must lie in the collapse window.
pub fn collapse_gap_with<F: VelocityField + ?Sized>(
    field: &F,
    maps: &[ClassMaps],
    reference: &AffineField,
    batch: &TrainingBatch,
    schedule: &Schedule,
    exec: Exec,
) -> Result<f64> {
    batch.validate()?;
    let (lo, hi) = COLLAPSE_WINDOW;
    if let Some(t) = batch.t.iter().find(|t| !(lo..=hi).contains(*t)) {
        return Err(Error::Domain(format!("collapse gap time {t} outside [{lo}, {hi}]")));
    }
    let d = batch.dim;
    if field.dim() != d || reference.dim() != d {
        return Err(Error::Shape { expected: d, got: if field.dim() != d { field.dim() } else { reference.dim() } });
    }
    if let Some(&y) = batch.y.iter().find(|&&y| y >= maps.len() || y >= reference.case.num_classes()) {
        return Err(Error::Domain(format!("class index {y} out of range")));
    }
    let n = batch.size();
    let partial = exec.map(chunk_count(n), |c| -> Result<f64> {
        let (mut z0, mut z1, mut zt, mut u, mut v) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut scratch = Scratch::default();
        let mut acc = 0.0;
        for i in chunk_range(c, n) {
            let (t, y) = (batch.t[i], batch.y[i]);
            endpoints(batch, &maps[y], schedule, i, &mut z0, &mut z1, &mut zt, &mut u);
            field.velocity_into(&mut scratch, &zt, t, y, &mut v);
            let star = reference.eval(&zt, t, y)?;
            acc += v.iter().zip(&star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(acc)
    });
    let mut total = 0.0;
    for p in partial {
        total += p?;
    }
    Ok(total / n as f64)
}

/// Collapse gap of a trained affine model against the constant-map field
/// instantiated with its current shifts.
pub fn collapse_gap(model: &Model, batch: &TrainingBatch, schedule: &Schedule, exec: Exec) -> Result<f64> {
    let reference = collapsed_field(matching_case(model)?, schedule)?;
    collapse_gap_with(&model.net, &model.reparam.all_class_maps(), &reference, batch, schedule, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataSpec;
    use crate::net::{NetConfig, VelocityNet};
    use crate::objective::{cfm_loss_with_maps, sample_batch_in};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trig() -> Schedule {
        use std::f64::consts::FRAC_PI_2;
        Schedule::custom(
            "trig",
            |t| (FRAC_PI_2 * t).sin(),
            |t| (FRAC_PI_2 * t).cos(),
            |t| FRAC_PI_2 * (FRAC_PI_2 * t).cos(),
            |t| -FRAC_PI_2 * (FRAC_PI_2 * t).sin(),
        )
    }

    fn all_cases() -> Vec<CollapseCase> {
        vec![
            CollapseCase::ConstantSource { mu0: vec![vec![-0.7], vec![0.4]] },
            CollapseCase::ConstantTarget { mu1: vec![vec![1.2], vec![-0.3]] },
            CollapseCase::UnboundedSource { classes: 2, dim: 1 },
            CollapseCase::UnboundedTarget { classes: 2, dim: 1 },
            CollapseCase::Proportional { mu0: vec![vec![0.3], vec![-1.1]], k: vec![2.0, -0.5] },
        ]
    }

    #[test]
    fn table_examples() {
        let lin = Schedule::linear();
        let f = collapsed_field(CollapseCase::ConstantSource { mu0: vec![vec![0.5]] }, &lin).unwrap();
        for z in [-1.0, 0.0, 0.8] {
            assert!((f.eval(&[z], 0.5, 0).unwrap()[0] - (2.0 * z - 1.0)).abs() < 1e-15);
        }
        let f = collapsed_field(CollapseCase::Proportional { mu0: vec![vec![0.3]], k: vec![2.0] }, &lin).unwrap();
        for z in [-4.0, 0.0, 9.0] {
            assert!((f.eval(&[z], 0.37, 0).unwrap()[0] - 0.3).abs() < 1e-15);
        }
        let f = collapsed_field(CollapseCase::ConstantTarget { mu1: vec![vec![1.0]] }, &lin).unwrap();
        for z in [-1.0, 0.5, 2.0] {
            assert!((f.eval(&[z], 0.75, 0).unwrap()[0] - (4.0 - 4.0 * z)).abs() < 1e-14);
        }
    }

    #[test]
    fn poles() {
        let lin = Schedule::linear();
        for case in all_cases() {
            let f = collapsed_field(case.clone(), &lin).unwrap();
            let (at0, at1) = (f.eval(&[0.2], 0.0, 0), f.eval(&[0.2], 1.0, 0));
            match case {
                CollapseCase::ConstantSource { .. } | CollapseCase::UnboundedTarget { .. } => {
                    assert!(matches!(at0, Err(Error::Pole { .. })));
                    assert!(at1.is_ok());
                }
                CollapseCase::ConstantTarget { .. } | CollapseCase::UnboundedSource { .. } => {
                    assert!(matches!(at1, Err(Error::Pole { .. })));
                    assert!(at0.is_ok());
                }
                CollapseCase::Proportional { .. } => assert!(at0.is_ok() && at1.is_ok()),
            }
        }
    }

    #[test]
    fn invalid_parameters() {
        let lin = Schedule::linear();
        assert!(collapsed_field(CollapseCase::ConstantSource { mu0: vec![vec![f64::INFINITY]] }, &lin).is_err());
        assert!(collapsed_field(CollapseCase::Proportional { mu0: vec![vec![1.0]], k: vec![] }, &lin).is_err());
        assert!(collapsed_field(CollapseCase::UnboundedSource { classes: 0, dim: 1 }, &lin).is_err());
        let f = collapsed_field(CollapseCase::UnboundedSource { classes: 2, dim: 1 }, &lin).unwrap();
        assert!(f.eval(&[0.0], 0.5, 2).is_err());
        assert!(f.eval(&[0.0, 1.0], 0.5, 0).is_err());
    }

    #[test]
    fn pointwise_identity_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for schedule in [Schedule::linear(), trig()] {
            for case in all_cases() {
                let r = verify_pointwise_identity(&case, &schedule, &mut rng, 10_000).unwrap();
                assert!(r <= 1e-10, "{} under {}: {r}", case.label(), schedule.name());
            }
        }
    }

    #[test]
    fn identity_fails_off_manifold() {
        let lin = Schedule::linear();
        let f = collapsed_field(CollapseCase::ConstantSource { mu0: vec![vec![0.0]] }, &lin).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut big = 0;
        for _ in 0..100 {
            let z0 = [rng.sample::<f64, _>(StandardNormal) * 2.0];
            let z1 = [rng.sample::<f64, _>(StandardNormal) * 2.0];
            let t = rng.random_range(0.01..0.99);
            if pointwise_residual(&f, &z0, &z1, t, 0, &lin).unwrap() > 0.1 {
                big += 1;
            }
        }
        assert!(big > 80, "{big}");
    }

    #[test]
    fn linear_closed_forms_match_general_formulas() {
        let lin = Schedule::linear();
        let general = Schedule::custom("linear_general", |t| t, |t| 1.0 - t, |_| 1.0, |_| -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for case in all_cases() {
            let a = collapsed_field(case.clone(), &lin).unwrap();
            let b = collapsed_field(case, &general).unwrap();
            for _ in 0..1000 {
                let t = rng.random_range(0.01..0.99);
                let y = rng.random_range(0..2);
                let ga = a.gamma(t, y).unwrap();
                let gb = b.gamma(t, y).unwrap();
                assert!((ga - gb).abs() <= 1e-12 * ga.abs().max(1.0));
                let (ea, eb) = (a.eta(t, y).unwrap()[0], b.eta(t, y).unwrap()[0]);
                assert!((ea - eb).abs() <= 1e-12 * ea.abs().max(1.0), "{ea} {eb}");
            }
        }
    }

    #[test]
    fn shared_growth_rates() {
        let lin = Schedule::linear();
        let f = |c| collapsed_field(c, &lin).unwrap();
        let (i, ii) = (f(all_cases()[0].clone()), f(all_cases()[1].clone()));
        let (iii, iv) = (f(all_cases()[2].clone()), f(all_cases()[3].clone()));
        for t in [0.1, 0.5, 0.9] {
            assert_eq!(i.gamma(t, 0).unwrap(), iv.gamma(t, 0).unwrap());
            assert_eq!(ii.gamma(t, 0).unwrap(), iii.gamma(t, 0).unwrap());
            assert!((i.gamma(t, 0).unwrap() - 1.0 / t).abs() < 1e-15);
            assert!((ii.gamma(t, 0).unwrap() + 1.0 / (1.0 - t)).abs() < 1e-15);
        }
    }

    #[test]
    fn proportional_line_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for schedule in [Schedule::linear(), trig()] {
            for _ in 0..1000 {
                let k: f64 = rng.random_range(0.1..3.0);
                let t = rng.random_range(0.01..0.99);
                let z1: f64 = rng.sample(StandardNormal);
                let s = schedule.eval(t).unwrap();
                let g = proportional_gamma(&schedule, t, k).unwrap();
                let zt = s.beta * k * z1 + s.alpha * z1;
                let target = s.beta_dot * k * z1 + s.alpha_dot * z1;
                assert!((g * zt - target).abs() <= 1e-10 * target.abs().max(1.0));
            }
        }
        // beta k + alpha = 0 at t = 1/2 for k = -1
        assert!(matches!(proportional_gamma(&Schedule::linear(), 0.5, -1.0), Err(Error::Pole { .. })));
    }

    #[test]
    fn analytic_fields_zero_the_loss() {
        let data = DataSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for case in all_cases() {
            let schedule = Schedule::linear();
            let field = collapsed_field(case.clone(), &schedule).unwrap();
            let batch = sample_batch_in(&mut rng, 4096, &data, 0.01, 0.99);
            let loss = cfm_loss_with_maps(&field, &case.degenerate_maps(), &batch, &schedule, Exec::Parallel).unwrap();
            assert!(loss <= 1e-20, "{}: {loss}", case.label());
        }
    }

    #[test]
    fn gap_of_exact_field_is_zero_and_shuffle_invariant() {
        let case = CollapseCase::ConstantSource { mu0: vec![vec![0.2], vec![-0.1]] };
        let lin = Schedule::linear();
        let field = collapsed_field(case.clone(), &lin).unwrap();
        let maps = vec![ClassMaps::identity(1), ClassMaps::identity(1)];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = sample_batch_in(&mut rng, 500, &DataSpec::default(), 0.01, 0.99);
        assert_eq!(collapse_gap_with(&field, &maps, &field, &batch, &lin, Exec::Parallel).unwrap(), 0.0);

        let net = VelocityNet::init(NetConfig::default(), &mut rng).unwrap();
        let perm: Vec<usize> = (0..500).rev().collect();
        let a = collapse_gap_with(&net, &maps, &field, &batch, &lin, Exec::Sequential).unwrap();
        let b = collapse_gap_with(&net, &maps, &field, &batch.permuted(&perm), &lin, Exec::Sequential).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn gap_rejects_times_outside_window() {
        let lin = Schedule::linear();
        let field = collapsed_field(CollapseCase::ConstantSource { mu0: vec![vec![0.0], vec![0.0]] }, &lin).unwrap();
        let maps = vec![ClassMaps::identity(1); 2];
        let batch = sample_batch_in(&mut ChaCha8Rng::seed_from_u64(0), 100, &DataSpec::default(), 0.0, 1.0);
        assert!(collapse_gap_with(&field, &maps, &field, &batch, &lin, Exec::Parallel).is_err());
    }

    #[test]
    fn untrained_gap_matches_second_moment() {
        let model = Model::init(NetConfig::default(), CarVariant::AffineSource, false, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let lin = Schedule::linear();
        let batch = sample_batch_in(&mut ChaCha8Rng::seed_from_u64(7), 1_000_000, &DataSpec::default(), 0.01, 0.99);
        let gap = collapse_gap(&model, &batch, &lin, Exec::Parallel).unwrap();

        // E[z_t^2 | t] = (1-t)^2 + t^2 (1.5^2 + 0.2^2) for identity maps and
        // a zero field; per-sample terms give the Monte-Carlo error.
        let second = 1.5f64.powi(2) + 0.04;
        let (lo, hi) = COLLAPSE_WINDOW;
        let exact = ((1.0 / lo - 1.0 / hi) - 2.0 * (hi / lo).ln() + (hi - lo)) / (hi - lo) + second;
        assert!((exact - 94.92).abs() < 0.01, "{exact}");
        let terms: Vec<f64> = (0..batch.size())
            .map(|i| {
                let t = batch.t[i];
                ((1.0 - t) * batch.x0[i] + t * batch.x1[i]).powi(2) / (t * t)
            })
            .collect();
        let n = terms.len() as f64;
        let mean = terms.iter().sum::<f64>() / n;
        let se = (terms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!((gap - mean).abs() <= 1e-9 * mean);
        assert!((gap - exact).abs() <= 5.0 * se, "gap {gap} exact {exact} se {se}");
    }

    #[test]
    fn matching_case_requires_affine_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::init(NetConfig::default(), CarVariant::Joint, false, &mut rng).unwrap();
        assert!(matching_case(&m).is_err());
        let m = Model::init(NetConfig::default(), CarVariant::AffineTarget, false, &mut rng).unwrap();
        assert_eq!(matching_case(&m).unwrap(), CollapseCase::ConstantTarget { mu1: vec![vec![0.0], vec![0.0]] });
    }
}
