//! Evaluation metrics: empirical Wasserstein-1, trajectory length, and the
//! per-checkpoint record written to the metrics CSV.

use serde::{Deserialize, Serialize};

use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Model;
use crate::reparam::ClassMaps;
use crate::sampler::{sample_many, sample_rng, SamplerConfig, Trajectory};
use crate::schedule::Schedule;

/// Stream offset separating ground-truth draws from sampler streams.
const GROUND_TRUTH_STREAM: u64 = 1 << 40;

/// Exact W1 between two equally weighted 1D samples of the same size.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("W1 of an empty sample".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Domain(format!("W1 needs equal sample counts, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("W1 input".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// W1 between `N(m1, s1^2)` and `N(m2, s2^2)`: `E|(s1 - s2) Z + (m1 - m2)|`.
pub fn gaussian_w1(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let a = (s1 - s2).abs();
    let b = (m1 - m2).abs();
    if a == 0.0 {
        return b;
    }
    let r = b / a;
    a * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * r * r).exp() + b * libm::erf(r / std::f64::consts::SQRT_2)
}

/// Mean and twice the standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanErr {
    pub mean: f64,
    pub err2: f64,
}

impl MeanErr {
    pub fn of(xs: &[f64]) -> MeanErr {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return MeanErr { mean: f64::NAN, err2: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return MeanErr { mean, err2: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        MeanErr { mean, err2: 2.0 * (var / n).sqrt() }
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.err2
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.err2
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Integrated Euler path length of one trajectory.
pub fn path_length(tr: &Trajectory) -> f64 {
    let pts: Vec<&[f64]> = tr.points().collect();
    pts.windows(2).map(|w| norm_diff(w[0], w[1])).sum()
}

/// `||z_N - z_0||` of one trajectory.
pub fn displacement(tr: &Trajectory) -> f64 {
    norm_diff(tr.end(), tr.start())
}

/// Mean integrated path length with 2-stderr bounds.
pub fn trajectory_length(trajectories: &[Trajectory]) -> MeanErr {
    MeanErr::of(&trajectories.iter().map(path_length).collect::<Vec<_>>())
}

/// Mean endpoint displacement with 2-stderr bounds.
pub fn trajectory_displacement(trajectories: &[Trajectory]) -> MeanErr {
    MeanErr::of(&trajectories.iter().map(displacement).collect::<Vec<_>>())
}

/// Per-class W1 between generated `x1` and fresh ground-truth draws. For
/// `dim > 1` this is the mean over coordinates of the marginal W1.
pub fn per_class_w1(trajectories: &[Trajectory], data: &DataSpec, seed: u64) -> Result<Vec<f64>> {
    let d = data.dim;
    (0..data.num_classes())
        .map(|y| {
            let gen: Vec<&Trajectory> = trajectories.iter().filter(|t| t.y == y).collect();
            if gen.is_empty() {
                return Err(Error::Domain(format!("no samples for class {y}")));
            }
            let truth = data.sample_conditional(y, gen.len(), &mut sample_rng(seed, GROUND_TRUTH_STREAM + y as u64))?;
            let mut total = 0.0;
            for i in 0..d {
                let a: Vec<f64> = gen.iter().map(|t| t.x1[i]).collect();
                let b: Vec<f64> = truth.iter().skip(i).step_by(d).copied().collect();
                total += wasserstein1_1d(&a, &b)?;
            }
            Ok(total / d as f64)
        })
        .collect()
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss_ema: f64,
    pub w1: Vec<f64>,
    pub traj_len: MeanErr,
    pub displacement: MeanErr,
    /// Per-class maps at this step.
    pub maps: Vec<ClassMaps>,
    pub collapse_gap: Option<f64>,
}

impl MetricsRecord {
    pub fn mean_w1(&self) -> f64 {
        self.w1.iter().sum::<f64>() / self.w1.len() as f64
    }
}

/// Evaluation settings for one checkpoint.
#[derive(Debug, Clone)]
pub struct EvalSpec<'a> {
    pub data: &'a DataSpec,
    pub samples_per_class: usize,
    pub seed: u64,
    pub sampler: &'a SamplerConfig,
    pub schedule: &'a Schedule,
    pub exec: Exec,
}

/// Generate `samples_per_class` trajectories per class, ordered by class.
pub fn generate(model: &Model, spec: &EvalSpec) -> Result<Vec<Trajectory>> {
    if spec.samples_per_class == 0 {
        return Err(Error::Domain("samples_per_class must be positive".into()));
    }
    let ys: Vec<usize> = (0..spec.data.num_classes()).flat_map(|y| std::iter::repeat_n(y, spec.samples_per_class)).collect();
    sample_many(&model.net, &model.reparam.all_class_maps(), &ys, spec.seed, spec.sampler, spec.schedule, spec.exec)
}

/// Sample the model and compute every metric except the loss EMA and the
/// collapse gap, which the caller fills in.
pub fn eval_checkpoint(model: &Model, step: u64, spec: &EvalSpec) -> Result<MetricsRecord> {
    let trajectories = generate(model, spec)?;
    Ok(MetricsRecord {
        step,
        loss_ema: f64::NAN,
        w1: per_class_w1(&trajectories, spec.data, spec.seed)?,
        traj_len: trajectory_length(&trajectories),
        displacement: trajectory_displacement(&trajectories),
        maps: model.reparam.all_class_maps(),
        collapse_gap: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::reparam::CarVariant;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn traj(z: &[f64]) -> Trajectory {
        Trajectory { y: 0, dim: 1, x0: vec![z[0]], z: z.to_vec(), x1: vec![*z.last().unwrap()] }
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1_1d(&[0.0, 1.0], &[2.0, 5.0]).unwrap(), 3.0);
        let a = [0.3, -1.2, 4.0, 2.2];
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x - 0.75).collect();
        assert!((wasserstein1_1d(&a, &b).unwrap() - 0.75).abs() < 1e-15);
        assert!(wasserstein1_1d(&[], &[]).is_err());
        assert!(wasserstein1_1d(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wasserstein1_1d(&[f64::NAN], &[1.0]).is_err());
    }

    fn brute_force(a: &[f64], b: &[f64]) -> f64 {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        perms(a.len())
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / a.len() as f64
    }

    #[test]
    fn w1_matches_best_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..=6 {
            for _ in 0..20 {
                let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                assert!((wasserstein1_1d(&a, &b).unwrap() - brute_force(&a, &b)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn w1_symmetric_and_triangle(
            a in prop::collection::vec(-10.0f64..10.0, 1..40),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
            let c: Vec<f64> = a.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
            let ab = wasserstein1_1d(&a, &b).unwrap();
            prop_assert_eq!(ab, wasserstein1_1d(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            let ac = wasserstein1_1d(&a, &c).unwrap();
            let cb = wasserstein1_1d(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }

    #[test]
    fn gaussian_w1_matches_quadrature() {
        // E|0.8 Z - 1.5| by Simpson's rule over the normal density.
        let (lo, hi, n) = (-12.0, 12.0, 200_000);
        let h = (hi - lo) / n as f64;
        let f = |z: f64| (0.8 * z - 1.5f64).abs() * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = s * h / 3.0;
        assert!((gaussian_w1(0.0, 1.0, 1.5, 0.2) - quad).abs() < 1e-8, "{quad}");
        assert!((gaussian_w1(0.0, 1.0, -1.5, 0.2) - quad).abs() < 1e-8);
        assert_eq!(gaussian_w1(1.0, 0.5, -1.0, 0.5), 2.0);
        assert!((gaussian_w1(0.0, 1.0, 0.0, 3.0) - 2.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_w1_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let a: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| 1.5 + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mc = wasserstein1_1d(&a, &b).unwrap();
        assert!((mc - gaussian_w1(0.0, 1.0, 1.5, 0.2)).abs() < 5e-3, "{mc}");
    }

    #[test]
    fn self_distance_floor() {
        let spec = DataSpec::default();
        let mut worst = 0.0f64;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = spec.sample_conditional(0, 10_000, &mut rng).unwrap();
            let b = spec.sample_conditional(0, 10_000, &mut rng).unwrap();
            worst = worst.max(wasserstein1_1d(&a, &b).unwrap());
        }
        assert!(worst <= 0.01, "{worst}");
    }

    #[test]
    fn lengths() {
        assert_eq!(path_length(&traj(&[0.0, 0.5, 1.0, 1.5, 2.0])), 2.0);
        assert_eq!(path_length(&traj(&[0.7, 0.7, 0.7])), 0.0);
        assert_eq!(path_length(&traj(&[0.0, 1.0, 0.0])), 2.0);
        assert_eq!(displacement(&traj(&[0.0, 1.0, 0.0])), 0.0);
        let m = trajectory_length(&[traj(&[0.0, 1.0]), traj(&[0.0, 3.0])]);
        assert_eq!(m.mean, 2.0);
        assert!((m.err2 - 2.0 * (2.0f64 / 2.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn length_dominates_displacement(z in prop::collection::vec(-5.0f64..5.0, 2..30)) {
            let t = traj(&z);
            prop_assert!(path_length(&t) + 1e-12 >= displacement(&t));
        }
    }

    #[test]
    fn untrained_model_w1_is_gaussian_distance() {
        let data = DataSpec::default();
        let model = Model::init(NetConfig::default(), CarVariant::Baseline, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let sampler = SamplerConfig::default();
        let schedule = Schedule::linear();
        let spec = EvalSpec { data: &data, samples_per_class: 10_000, seed: 3, sampler: &sampler, schedule: &schedule, exec: Exec::Parallel };
        let rec = eval_checkpoint(&model, 0, &spec).unwrap();
        let exact = gaussian_w1(0.0, 1.0, 1.5, 0.2);
        for w in &rec.w1 {
            assert!((w - exact).abs() < 0.03, "{w} vs {exact}");
        }
        assert_eq!(rec.traj_len.mean, 0.0);
    }

    #[test]
    fn perfect_transport_hits_monte_carlo_floor() {
        // Exact samples from each class produced through the quantile map.
        let data = DataSpec::default();
        let trajectories: Vec<Trajectory> = (0..2)
            .flat_map(|y| {
                let m = data.class_mean(y)[0];
                (0..10_000).map(move |i| {
                    let x0: f64 = sample_rng(11, (y * 10_000 + i) as u64).sample(StandardNormal);
                    let x1 = m + 0.2 * x0;
                    Trajectory { y, dim: 1, x0: vec![x0], z: vec![x1, x1], x1: vec![x1] }
                })
            })
            .collect();
        let w = per_class_w1(&trajectories, &data, 5).unwrap();
        let mut floor = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = data.sample_conditional(0, 10_000, &mut rng).unwrap();
            let b = data.sample_conditional(0, 10_000, &mut rng).unwrap();
            floor += wasserstein1_1d(&a, &b).unwrap() / 20.0;
        }
        assert!(w.iter().all(|&v| v <= 3.0 * floor), "{w:?} floor {floor}");
    }

    #[test]
    fn mean_err_edge_cases() {
        assert!(MeanErr::of(&[]).mean.is_nan());
        assert_eq!(MeanErr::of(&[4.0]), MeanErr { mean: 4.0, err2: 0.0 });
    }
}
