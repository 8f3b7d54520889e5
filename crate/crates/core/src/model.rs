//! A trainable model: velocity network plus reparameterization maps.

use rand::Rng;

use crate::error::Result;
use crate::net::{NetConfig, VelocityNet};
use crate::params::ParamSet;
use crate::reparam::{CarVariant, Reparam, ReparamGrads};

/// Optimizer group names, in a fixed order.
pub const GROUPS: [&str; 5] = ["backbone", "source_shift", "target_shift", "source_scale", "target_scale"];

#[derive(Debug, Clone)]
pub struct Model {
    pub net: VelocityNet,
    pub reparam: Reparam,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(net_cfg: NetConfig, variant: CarVariant, global_source_shift: bool, rng: &mut R) -> Result<Self> {
        let net = VelocityNet::init(net_cfg, rng)?;
        let reparam = Reparam::new(variant, net.config().dim, net.classes().clone(), global_source_shift);
        Ok(Model { net, reparam })
    }

    /// Network with unit norm gains and every other parameter zero.
    pub fn new(net_cfg: NetConfig, variant: CarVariant, global_source_shift: bool) -> Result<Self> {
        let net = VelocityNet::new(net_cfg)?;
        let reparam = Reparam::new(variant, net.config().dim, net.classes().clone(), global_source_shift);
        Ok(Model { net, reparam })
    }

    pub fn variant(&self) -> CarVariant {
        self.reparam.variant()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.reparam.param_count()
    }

    /// Every trainable parameter set with its group name.
    pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParamSet)> {
        let mut out = vec![("backbone", &mut self.net.params)];
        out.extend(self.reparam.groups_mut());
        out
    }

    pub fn groups(&self) -> Vec<(&'static str, &ParamSet)> {
        let r = &self.reparam;
        let mut out = vec![("backbone", &self.net.params)];
        if let Some(n) = &r.source_shift {
            out.push(("source_shift", &n.params));
        }
        if let Some(n) = &r.target_shift {
            out.push(("target_shift", &n.params));
        }
        if let Some(n) = &r.source_scale {
            out.push(("source_scale", &n.params));
        }
        if let Some(n) = &r.target_scale {
            out.push(("target_scale", &n.params));
        }
        out
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut ParamSet> {
        self.groups_mut().into_iter().find(|(n, _)| *n == name).map(|(_, p)| p)
    }
}

/// Loss value and gradients for every parameter of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub net: ParamSet,
    pub reparam: ReparamGrads,
}

impl GradientBundle {
    pub fn groups(&self) -> Vec<(&'static str, &ParamSet)> {
        let mut out = vec![("backbone", &self.net)];
        out.extend(self.reparam.groups());
        out
    }

    pub fn group(&self, name: &str) -> Option<&ParamSet> {
        self.groups().into_iter().find(|(n, _)| *n == name).map(|(_, p)| p)
    }
}
