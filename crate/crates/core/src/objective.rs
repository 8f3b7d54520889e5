//! The conditional flow-matching objective over reparameterized endpoints:
//!
//! ```text
//! z0 = f(x0, y),  z1 = g(x1, y),  z_t = beta_t z0 + alpha_t z1
//! L = mean_i || v(z_t, t_i, y_i) - (beta'_t z0 + alpha'_t z1) ||^2
//! ```
//!
//! With identity maps this is the plain conditional flow-matching loss.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::exec::{chunk_count, chunk_range, Exec};
use crate::model::{GradientBundle, Model};
use crate::net::{Scratch, VelocityField};
use crate::reparam::{ClassGrads, ClassMaps};
use crate::schedule::Schedule;

/// A batch of `(x0, x1, y, t)` tuples; `x0` and `x1` are row-major `size * dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub dim: usize,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub y: Vec<usize>,
    pub t: Vec<f64>,
}

impl TrainingBatch {
    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.size();
        if n == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        for (len, what) in [(self.x0.len(), "x0"), (self.x1.len(), "x1")] {
            if len != n * self.dim {
                return Err(Error::Domain(format!("{what} has {len} values, expected {}", n * self.dim)));
            }
        }
        if self.t.len() != n {
            return Err(Error::Shape { expected: n, got: self.t.len() });
        }
        if let Some(t) = self.t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain(format!("batch time {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// Same batch with the samples reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> TrainingBatch {
        let d = self.dim;
        let rows = |v: &[f64]| perm.iter().flat_map(|&i| v[i * d..(i + 1) * d].iter().copied()).collect();
        TrainingBatch {
            dim: d,
            x0: rows(&self.x0),
            x1: rows(&self.x1),
            y: perm.iter().map(|&i| self.y[i]).collect(),
            t: perm.iter().map(|&i| self.t[i]).collect(),
        }
    }
}

/// Draw `size` training tuples: `y` from the class prior, `x0 ~ N(0, I)`,
/// `x1 ~ p_data(. | y)`, `t ~ U[0, 1]`.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, size: usize, data: &DataSpec) -> TrainingBatch {
    sample_batch_in(rng, size, data, 0.0, 1.0)
}

/// As [`sample_batch`] with `t ~ U[t_lo, t_hi]`.
pub fn sample_batch_in<R: Rng + ?Sized>(rng: &mut R, size: usize, data: &DataSpec, t_lo: f64, t_hi: f64) -> TrainingBatch {
    let d = data.dim;
    let mut batch = TrainingBatch { dim: d, x0: vec![0.0; size * d], x1: vec![0.0; size * d], y: vec![0; size], t: vec![0.0; size] };
    for i in 0..size {
        let y = data.sample_class(rng);
        batch.y[i] = y;
        for x in &mut batch.x0[i * d..(i + 1) * d] {
            *x = StandardNormal.sample(rng);
        }
        data.sample_into(y, rng, &mut batch.x1[i * d..(i + 1) * d]);
        batch.t[i] = t_lo + (t_hi - t_lo) * rng.random::<f64>();
    }
    batch
}

/// Endpoints, interpolant and target velocity of sample `i`.
#[inline]
pub(crate) fn endpoints(batch: &TrainingBatch, maps: &ClassMaps, schedule: &Schedule, i: usize, z0: &mut [f64], z1: &mut [f64], zt: &mut [f64], u: &mut [f64]) {
    let d = batch.dim;
    let s = schedule.eval_unchecked(batch.t[i]);
    for k in 0..d {
        z0[k] = maps.source(batch.x0[i * d + k], k);
        z1[k] = maps.target(batch.x1[i * d + k], k);
        zt[k] = s.beta * z0[k] + s.alpha * z1[k];
        u[k] = s.beta_dot * z0[k] + s.alpha_dot * z1[k];
    }
}

/// Loss of an arbitrary velocity field under explicit per-class maps.
/// The maps may be degenerate (e.g. zero scale), which the learnable
/// parameterization cannot express.
pub fn cfm_loss_with_maps<F: VelocityField + ?Sized>(field: &F, maps: &[ClassMaps], batch: &TrainingBatch, schedule: &Schedule, exec: Exec) -> Result<f64> {
    batch.validate()?;
    let n = batch.size();
    let d = batch.dim;
    if field.dim() != d {
        return Err(Error::Shape { expected: d, got: field.dim() });
    }
    if let Some(&y) = batch.y.iter().find(|&&y| y >= maps.len()) {
        return Err(Error::Domain(format!("class index {y} out of range for {} classes", maps.len())));
    }
    let partial = exec.map(chunk_count(n), |c| {
        let (mut z0, mut z1, mut zt, mut u, mut v) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut scratch = Scratch::default();
        let mut acc = 0.0;
        for i in chunk_range(c, n) {
            endpoints(batch, &maps[batch.y[i]], schedule, i, &mut z0, &mut z1, &mut zt, &mut u);
            field.velocity_into(&mut scratch, &zt, batch.t[i], batch.y[i], &mut v);
            acc += v.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        acc
    });
    Ok(partial.into_iter().sum::<f64>() / n as f64)
}

/// Loss of a model's network under its own reparameterization.
pub fn cfm_loss(model: &Model, batch: &TrainingBatch, schedule: &Schedule, exec: Exec) -> Result<f64> {
    cfm_loss_with_maps(&model.net, &model.reparam.all_class_maps(), batch, schedule, exec)
}

/// Loss and exact gradients with respect to every network and map parameter.
pub fn loss_and_grad(model: &Model, batch: &TrainingBatch, schedule: &Schedule, exec: Exec) -> Result<GradientBundle> {
    batch.validate()?;
    let n = batch.size();
    let d = batch.dim;
    let net = &model.net;
    if net.config().dim != d {
        return Err(Error::Shape { expected: net.config().dim, got: d });
    }
    let k = model.reparam.num_classes();
    if let Some(&y) = batch.y.iter().find(|&&y| y >= k) {
        return Err(Error::Domain(format!("class index {y} out of range for {k} classes")));
    }
    let maps = model.reparam.all_class_maps();
    let scale = 2.0 / n as f64;

    let partial = exec.map(chunk_count(n), |c| {
        let mut tape = net.new_tape();
        let mut grad = vec![0.0; net.param_count()];
        let mut cg = ClassGrads::zeros(k, d);
        let (mut z0, mut z1, mut zt, mut u) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let (mut dout, mut dz) = (vec![0.0; d], vec![0.0; d]);
        let mut loss = 0.0;
        for i in chunk_range(c, n) {
            let y = batch.y[i];
            endpoints(batch, &maps[y], schedule, i, &mut z0, &mut z1, &mut zt, &mut u);
            net.forward_tape(&mut tape, &zt, batch.t[i], y);
            for j in 0..d {
                let r = tape.out[j] - u[j];
                loss += r * r;
                dout[j] = scale * r;
            }
            net.backward(&mut tape, &zt, &dout, &mut grad, &mut dz);
            let s = schedule.eval_unchecked(batch.t[i]);
            for j in 0..d {
                // dL/du = -dout
                let g0 = s.beta * dz[j] - s.beta_dot * dout[j];
                let g1 = s.alpha * dz[j] - s.alpha_dot * dout[j];
                cg.mu0[y][j] += g0;
                cg.mu1[y][j] += g1;
                cg.sigma0[y] += g0 * batch.x0[i * d + j];
                cg.sigma1[y] += g1 * batch.x1[i * d + j];
            }
        }
        (loss, grad, cg)
    });

    let mut loss = 0.0;
    let mut net_grad = net.params.zeros_like();
    let mut class_grads = ClassGrads::zeros(k, d);
    for (l, g, cg) in partial {
        loss += l;
        for (a, b) in net_grad.data_mut().iter_mut().zip(&g) {
            *a += b;
        }
        class_grads.add_assign(&cg);
    }
    let mut reparam = model.reparam.zero_grads();
    model.reparam.backward(&maps, &class_grads, &mut reparam);
    Ok(GradientBundle { loss: loss / n as f64, net: net_grad, reparam })
}

/// Worst finite-difference disagreement within one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: &'static str,
    pub params: usize,
    pub max_rel_err: f64,
    pub worst_array: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare [`loss_and_grad`] against central differences of [`cfm_loss`]
/// for every parameter. The relative error is
/// `|fd - g| / max(|fd|, |g|, floor)`.
pub fn gradient_check(model: &Model, batch: &TrainingBatch, schedule: &Schedule, h: f64, floor: f64) -> Result<Vec<GroupCheck>> {
    let grads = loss_and_grad(model, batch, schedule, Exec::Sequential)?;
    let mut probe = model.clone();
    let mut out = vec![];
    for (group, g) in grads.groups() {
        let mut check = GroupCheck { group, params: g.len(), max_rel_err: 0.0, worst_array: String::new(), analytic: 0.0, numeric: 0.0 };
        for spec in g.specs() {
            for i in spec.range() {
                let set = |m: &mut Model, v: f64| m.group_mut(group).expect("group exists").data_mut()[i] = v;
                let orig = model.groups().into_iter().find(|(n, _)| *n == group).expect("group exists").1.data()[i];
                set(&mut probe, orig + h);
                let up = cfm_loss(&probe, batch, schedule, Exec::Sequential)?;
                set(&mut probe, orig - h);
                let dn = cfm_loss(&probe, batch, schedule, Exec::Sequential)?;
                set(&mut probe, orig);
                let fd = (up - dn) / (2.0 * h);
                let an = g.data()[i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(floor);
                if !(err <= check.max_rel_err) {
                    check.max_rel_err = err;
                    check.worst_array = spec.name.clone();
                    check.analytic = an;
                    check.numeric = fd;
                }
            }
        }
        out.push(check);
    }
    Ok(out)
}
