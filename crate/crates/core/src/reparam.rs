//! Condition-aware source and target maps.
//!
//! Shift-only variants use `f(x0, y) = x0 + mu0(y)` and
//! `g(x1, y) = x1 + mu1(y)`; the affine variants add a positive scale,
//! `sigma(y) * x + mu(y)` with `sigma = exp(s(y))`. Every map reads the same
//! sinusoidal class embedding as the velocity network and is zero
//! initialized, so a fresh model is the identity reparameterization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ClassEmbeddings;
use crate::params::ParamSet;
use crate::schedule::Schedule;

/// Scales below this raise [`Error::SingularMap`] when inverting the target map.
pub const SINGULAR_SCALE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarVariant {
    Baseline,
    SourceOnly,
    TargetOnly,
    Joint,
    AffineSource,
    AffineTarget,
}

impl CarVariant {
    pub const ALL: [CarVariant; 6] = [
        CarVariant::Baseline,
        CarVariant::SourceOnly,
        CarVariant::TargetOnly,
        CarVariant::Joint,
        CarVariant::AffineSource,
        CarVariant::AffineTarget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CarVariant::Baseline => "baseline",
            CarVariant::SourceOnly => "source_only",
            CarVariant::TargetOnly => "target_only",
            CarVariant::Joint => "joint",
            CarVariant::AffineSource => "affine_source",
            CarVariant::AffineTarget => "affine_target",
        }
    }

    pub fn has_source_shift(self) -> bool {
        matches!(self, CarVariant::SourceOnly | CarVariant::Joint | CarVariant::AffineSource)
    }

    pub fn has_target_shift(self) -> bool {
        matches!(self, CarVariant::TargetOnly | CarVariant::Joint | CarVariant::AffineTarget)
    }

    pub fn has_source_scale(self) -> bool {
        self == CarVariant::AffineSource
    }

    pub fn has_target_scale(self) -> bool {
        self == CarVariant::AffineTarget
    }

    pub fn is_affine(self) -> bool {
        self.has_source_scale() || self.has_target_scale()
    }
}

impl fmt::Display for CarVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CarVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CarVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Linear map from the class embedding to a `dim`-dimensional shift.
/// A global (unconditional) shift keeps only the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftNet {
    pub params: ParamSet,
    conditional: bool,
    dim: usize,
    embed_width: usize,
}

impl ShiftNet {
    pub fn zeros(dim: usize, embed_width: usize, conditional: bool) -> Self {
        let params = if conditional {
            ParamSet::zeros([("weight", vec![dim, embed_width]), ("bias", vec![dim])])
        } else {
            ParamSet::zeros([("bias", vec![dim])])
        };
        ShiftNet { params, conditional, dim, embed_width }
    }

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub fn eval(&self, class_embedding: &[f64]) -> Vec<f64> {
        let p = self.params.data();
        if !self.conditional {
            return p.to_vec();
        }
        let (w, b) = p.split_at(self.dim * self.embed_width);
        (0..self.dim)
            .map(|i| {
                b[i] + w[i * self.embed_width..(i + 1) * self.embed_width]
                    .iter()
                    .zip(class_embedding)
                    .map(|(a, e)| a * e)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Accumulate parameter gradients given `d loss / d shift` for one class.
    pub fn accumulate_grad(&self, class_embedding: &[f64], grad_shift: &[f64], grad: &mut [f64]) {
        if !self.conditional {
            for (g, d) in grad.iter_mut().zip(grad_shift) {
                *g += d;
            }
            return;
        }
        let (gw, gb) = grad.split_at_mut(self.dim * self.embed_width);
        for i in 0..self.dim {
            gb[i] += grad_shift[i];
            for (g, e) in gw[i * self.embed_width..(i + 1) * self.embed_width].iter_mut().zip(class_embedding) {
                *g += grad_shift[i] * e;
            }
        }
    }
}

/// Isotropic positive scale `sigma(y) = exp(w . e(y) + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleNet {
    pub params: ParamSet,
    embed_width: usize,
}

impl ScaleNet {
    pub fn zeros(embed_width: usize) -> Self {
        ScaleNet { params: ParamSet::zeros([("weight", vec![embed_width]), ("bias", vec![1])]), embed_width }
    }

    pub fn log_scale(&self, class_embedding: &[f64]) -> f64 {
        let p = self.params.data();
        p[self.embed_width] + p[..self.embed_width].iter().zip(class_embedding).map(|(a, e)| a * e).sum::<f64>()
    }

    pub fn eval(&self, class_embedding: &[f64]) -> f64 {
        self.log_scale(class_embedding).exp()
    }

    /// Accumulate parameter gradients given `d loss / d sigma` for one class.
    pub fn accumulate_grad(&self, class_embedding: &[f64], sigma: f64, grad_sigma: f64, grad: &mut [f64]) {
        let g_log = sigma * grad_sigma;
        for (g, e) in grad[..self.embed_width].iter_mut().zip(class_embedding) {
            *g += g_log * e;
        }
        grad[self.embed_width] += g_log;
    }
}

/// The per-class values of all maps, evaluated once and reused across a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMaps {
    pub mu0: Vec<f64>,
    pub sigma0: f64,
    pub mu1: Vec<f64>,
    pub sigma1: f64,
}

impl ClassMaps {
    pub fn identity(dim: usize) -> Self {
        ClassMaps { mu0: vec![0.0; dim], sigma0: 1.0, mu1: vec![0.0; dim], sigma1: 1.0 }
    }

    #[inline]
    pub fn source(&self, x0: f64, i: usize) -> f64 {
        self.sigma0 * x0 + self.mu0[i]
    }

    #[inline]
    pub fn target(&self, x1: f64, i: usize) -> f64 {
        self.sigma1 * x1 + self.mu1[i]
    }
}

/// All reparameterization parameters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Reparam {
    variant: CarVariant,
    dim: usize,
    classes: ClassEmbeddings,
    pub source_shift: Option<ShiftNet>,
    pub target_shift: Option<ShiftNet>,
    pub source_scale: Option<ScaleNet>,
    pub target_scale: Option<ScaleNet>,
}

impl Reparam {
    /// Zero-initialized maps for `variant`. `global_source_shift` replaces
    /// the conditional source shift by a single learnable offset.
    pub fn new(variant: CarVariant, dim: usize, classes: ClassEmbeddings, global_source_shift: bool) -> Self {
        let ew = classes.width();
        Reparam {
            variant,
            dim,
            source_shift: variant.has_source_shift().then(|| ShiftNet::zeros(dim, ew, !global_source_shift)),
            target_shift: variant.has_target_shift().then(|| ShiftNet::zeros(dim, ew, true)),
            source_scale: variant.has_source_scale().then(|| ScaleNet::zeros(ew)),
            target_scale: variant.has_target_scale().then(|| ScaleNet::zeros(ew)),
            classes,
        }
    }

    pub fn variant(&self) -> CarVariant {
        self.variant
    }

    pub fn has_global_source_shift(&self) -> bool {
        self.source_shift.as_ref().is_some_and(|n| !n.is_conditional())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &ClassEmbeddings {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.num_classes()
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::Domain(format!("class index {y} out of range for {} classes", self.num_classes())));
        }
        Ok(())
    }

    pub fn class_maps(&self, y: usize) -> ClassMaps {
        let e = self.classes.get(y);
        ClassMaps {
            mu0: self.source_shift.as_ref().map_or_else(|| vec![0.0; self.dim], |n| n.eval(e)),
            sigma0: self.source_scale.as_ref().map_or(1.0, |n| n.eval(e)),
            mu1: self.target_shift.as_ref().map_or_else(|| vec![0.0; self.dim], |n| n.eval(e)),
            sigma1: self.target_scale.as_ref().map_or(1.0, |n| n.eval(e)),
        }
    }

    pub fn all_class_maps(&self) -> Vec<ClassMaps> {
        (0..self.num_classes()).map(|y| self.class_maps(y)).collect()
    }

    pub fn map_source(&self, x0: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_class(y)?;
        check_finite(x0)?;
        let m = self.class_maps(y);
        Ok(x0.iter().enumerate().map(|(i, &x)| m.source(x, i)).collect())
    }

    pub fn map_target(&self, x1: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_class(y)?;
        check_finite(x1)?;
        let m = self.class_maps(y);
        Ok(x1.iter().enumerate().map(|(i, &x)| m.target(x, i)).collect())
    }

    pub fn inverse_target(&self, z1: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_class(y)?;
        inverse_target_with(&self.class_maps(y), z1, y)
    }

    /// Push per-class endpoint gradients back into the map parameters.
    ///
    /// `grad_mu0[y]`, `grad_mu1[y]` are `d loss / d mu(y)`; `grad_sigma0[y]`,
    /// `grad_sigma1[y]` are `d loss / d sigma(y)`.
    pub fn backward(&self, maps: &[ClassMaps], upstream: &ClassGrads, grads: &mut ReparamGrads) {
        for y in 0..self.num_classes() {
            let e = self.classes.get(y);
            if let (Some(n), Some(g)) = (&self.source_shift, grads.source_shift.as_mut()) {
                n.accumulate_grad(e, &upstream.mu0[y], g.data_mut());
            }
            if let (Some(n), Some(g)) = (&self.target_shift, grads.target_shift.as_mut()) {
                n.accumulate_grad(e, &upstream.mu1[y], g.data_mut());
            }
            if let (Some(n), Some(g)) = (&self.source_scale, grads.source_scale.as_mut()) {
                n.accumulate_grad(e, maps[y].sigma0, upstream.sigma0[y], g.data_mut());
            }
            if let (Some(n), Some(g)) = (&self.target_scale, grads.target_scale.as_mut()) {
                n.accumulate_grad(e, maps[y].sigma1, upstream.sigma1[y], g.data_mut());
            }
        }
    }

    pub fn zero_grads(&self) -> ReparamGrads {
        ReparamGrads {
            source_shift: self.source_shift.as_ref().map(|n| n.params.zeros_like()),
            target_shift: self.target_shift.as_ref().map(|n| n.params.zeros_like()),
            source_scale: self.source_scale.as_ref().map(|n| n.params.zeros_like()),
            target_scale: self.target_scale.as_ref().map(|n| n.params.zeros_like()),
        }
    }

    /// `(group name, parameters)` for every active map.
    pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParamSet)> {
        let mut out = Vec::new();
        if let Some(n) = self.source_shift.as_mut() {
            out.push(("source_shift", &mut n.params));
        }
        if let Some(n) = self.target_shift.as_mut() {
            out.push(("target_shift", &mut n.params));
        }
        if let Some(n) = self.source_scale.as_mut() {
            out.push(("source_scale", &mut n.params));
        }
        if let Some(n) = self.target_scale.as_mut() {
            out.push(("target_scale", &mut n.params));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        let shift = |n: &Option<ShiftNet>| n.as_ref().map_or(0, |n| n.params.len());
        let scale = |n: &Option<ScaleNet>| n.as_ref().map_or(0, |n| n.params.len());
        shift(&self.source_shift) + shift(&self.target_shift) + scale(&self.source_scale) + scale(&self.target_scale)
    }
}

pub(crate) fn inverse_target_with(m: &ClassMaps, z1: &[f64], y: usize) -> Result<Vec<f64>> {
    if m.sigma1 < SINGULAR_SCALE_TOL {
        return Err(Error::SingularMap { class: y, scale: m.sigma1, tol: SINGULAR_SCALE_TOL });
    }
    check_finite(z1)?;
    Ok(z1.iter().enumerate().map(|(i, &z)| (z - m.mu1[i]) / m.sigma1).collect())
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sample {x:?}")));
    }
    Ok(())
}

/// Per-class upstream gradients with respect to the map outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGrads {
    pub mu0: Vec<Vec<f64>>,
    pub mu1: Vec<Vec<f64>>,
    pub sigma0: Vec<f64>,
    pub sigma1: Vec<f64>,
}

impl ClassGrads {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        ClassGrads {
            mu0: vec![vec![0.0; dim]; num_classes],
            mu1: vec![vec![0.0; dim]; num_classes],
            sigma0: vec![0.0; num_classes],
            sigma1: vec![0.0; num_classes],
        }
    }

    pub fn add_assign(&mut self, other: &ClassGrads) {
        for (a, b) in self.mu0.iter_mut().zip(&other.mu0).chain(self.mu1.iter_mut().zip(&other.mu1)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.sigma0.iter_mut().zip(&other.sigma0).chain(self.sigma1.iter_mut().zip(&other.sigma1)) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReparamGrads {
    pub source_shift: Option<ParamSet>,
    pub target_shift: Option<ParamSet>,
    pub source_scale: Option<ParamSet>,
    pub target_scale: Option<ParamSet>,
}

impl ReparamGrads {
    pub fn groups(&self) -> Vec<(&'static str, &ParamSet)> {
        [
            ("source_shift", &self.source_shift),
            ("target_shift", &self.target_shift),
            ("source_scale", &self.source_scale),
            ("target_scale", &self.target_scale),
        ]
        .into_iter()
        .filter_map(|(n, p)| p.as_ref().map(|p| (n, p)))
        .collect()
    }
}

/// Result of testing whether a source shift and a target shift produce the
/// same interpolant at every time on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEquivalence {
    pub equivalent: bool,
    /// `max_i |beta_t mu0_i - alpha_t mu1_i|` per grid time.
    pub residuals: Vec<f64>,
}

/// Source shift `mu0` and target shift `mu1` give identical interpolants
/// iff `beta_t mu0 = alpha_t mu1` for all `t`, which for constant shifts
/// forces both to vanish.
pub fn check_shift_equivalence(mu0: &[f64], mu1: &[f64], schedule: &Schedule, t_grid: &[f64]) -> Result<ShiftEquivalence> {
    if mu0.len() != mu1.len() {
        return Err(Error::Shape { expected: mu0.len(), got: mu1.len() });
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Domain("shift-equivalence grid must lie in (0, 1)".into()));
    }
    let mut distinct = t_grid.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Domain("shift-equivalence grid needs at least two distinct times".into()));
    }
    let residuals: Vec<f64> = t_grid
        .iter()
        .map(|&t| {
            let s = schedule.eval_unchecked(t);
            mu0.iter().zip(mu1).map(|(a, b)| (s.beta * a - s.alpha * b).abs()).fold(0.0, f64::max)
        })
        .collect();
    Ok(ShiftEquivalence { equivalent: residuals.iter().all(|&r| r <= 1e-10), residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn reparam(variant: CarVariant) -> Reparam {
        Reparam::new(variant, 1, ClassEmbeddings::new(&NetConfig::default()), false)
    }

    fn set_bias(net: &mut ShiftNet, v: f64) {
        net.params.array_mut("bias").unwrap()[0] = v;
    }

    #[test]
    fn variant_names_round_trip() {
        for v in CarVariant::ALL {
            assert_eq!(v.name().parse::<CarVariant>().unwrap(), v);
        }
        assert!("both".parse::<CarVariant>().is_err());
    }

    #[test]
    fn baseline_is_identity() {
        let r = reparam(CarVariant::Baseline);
        assert_eq!(r.map_source(&[0.7], 0).unwrap(), vec![0.7]);
        assert_eq!(r.map_target(&[-1.5], 1).unwrap(), vec![-1.5]);
        assert_eq!(r.inverse_target(&[0.25], 1).unwrap(), vec![0.25]);
        assert_eq!(r.param_count(), 0);
    }

    #[test]
    fn zero_initialized_shifts_are_identity() {
        for v in CarVariant::ALL {
            let r = reparam(v);
            for y in 0..2 {
                assert_eq!(r.map_source(&[0.7], y).unwrap(), vec![0.7]);
                assert_eq!(r.map_target(&[-1.5], y).unwrap(), vec![-1.5]);
                assert_eq!(r.class_maps(y), ClassMaps::identity(1));
            }
        }
    }

    #[test]
    fn variants_have_expected_maps() {
        assert_eq!(reparam(CarVariant::SourceOnly).param_count(), 9);
        assert!(reparam(CarVariant::SourceOnly).target_shift.is_none());
        assert!(reparam(CarVariant::TargetOnly).source_shift.is_none());
        assert_eq!(reparam(CarVariant::Joint).param_count(), 18);
        assert_eq!(reparam(CarVariant::AffineSource).param_count(), 18);
        let global = Reparam::new(CarVariant::SourceOnly, 1, ClassEmbeddings::new(&NetConfig::default()), true);
        assert_eq!(global.param_count(), 1);
    }

    #[test]
    fn target_shift_and_inverse() {
        let mut r = reparam(CarVariant::TargetOnly);
        set_bias(r.target_shift.as_mut().unwrap(), 0.4);
        let z1 = r.map_target(&[-1.5], 0).unwrap();
        assert!((z1[0] + 1.1).abs() < 1e-15);
        let x1 = r.inverse_target(&[-1.1], 0).unwrap();
        assert!((x1[0] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn affine_maps() {
        let mut r = reparam(CarVariant::AffineSource);
        // sigma0 = exp(ln 2) = 2, mu0 = -1
        r.source_scale.as_mut().unwrap().params.array_mut("bias").unwrap()[0] = 2f64.ln();
        set_bias(r.source_shift.as_mut().unwrap(), -1.0);
        assert!(r.map_source(&[0.5], 1).unwrap()[0].abs() < 1e-15);

        let mut r = reparam(CarVariant::AffineTarget);
        r.target_scale.as_mut().unwrap().params.array_mut("bias").unwrap()[0] = 0.5f64.ln();
        set_bias(r.target_shift.as_mut().unwrap(), 1.0);
        assert!(r.inverse_target(&[1.0], 0).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn collapsed_target_scale_is_singular() {
        let mut r = reparam(CarVariant::AffineTarget);
        r.target_scale.as_mut().unwrap().params.array_mut("bias").unwrap()[0] = -20.0;
        assert!(matches!(r.inverse_target(&[0.3], 1), Err(Error::SingularMap { class: 1, .. })));
    }

    #[test]
    fn invalid_class_rejected() {
        let r = reparam(CarVariant::Joint);
        assert!(matches!(r.map_source(&[0.0], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn shift_equivalence_examples() {
        let s = Schedule::linear();
        let grid = [0.25, 0.5, 0.75];
        let zero = check_shift_equivalence(&[0.0], &[0.0], &s, &grid).unwrap();
        assert!(zero.equivalent);
        assert!(zero.residuals.iter().all(|&r| r == 0.0));

        let r = check_shift_equivalence(&[1.0], &[1.0], &s, &[0.25, 0.5]).unwrap();
        assert!(!r.equivalent);
        assert!((r.residuals[0] - 0.5).abs() < 1e-15);

        let r = check_shift_equivalence(&[1.0], &[3.0], &s, &[0.75, 0.5]).unwrap();
        assert!(!r.equivalent);
        assert!((r.residuals[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn shift_equivalence_preconditions() {
        let s = Schedule::linear();
        assert!(check_shift_equivalence(&[0.0], &[0.0], &s, &[0.5, 0.5]).is_err());
        assert!(check_shift_equivalence(&[0.0], &[0.0], &s, &[0.0, 0.5]).is_err());
    }

    #[test]
    fn shift_nets_do_not_depend_on_time() {
        let mut r = reparam(CarVariant::Joint);
        r.source_shift.as_mut().unwrap().params.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = 0.1 * i as f64);
        // the map signature has no time input; repeated evaluation is constant
        let a = r.class_maps(1);
        let b = r.class_maps(1);
        assert_eq!(a, b);
        assert!(a.mu0[0] != 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inverse_round_trip(x1 in -10.0..10.0f64, shift in -3.0..3.0f64, log_scale in -5.0..3.0f64, y in 0usize..2) {
                for v in CarVariant::ALL {
                    let mut r = reparam(v);
                    if let Some(n) = r.target_shift.as_mut() {
                        n.params.data_mut().iter_mut().for_each(|p| *p = shift * 0.3);
                    }
                    if let Some(n) = r.target_scale.as_mut() {
                        n.params.array_mut("bias").unwrap()[0] = log_scale;
                    }
                    let back = r.inverse_target(&r.map_target(&[x1], y).unwrap(), y).unwrap();
                    prop_assert!((back[0] - x1).abs() <= 1e-12);
                }
            }
        }
    }
}
