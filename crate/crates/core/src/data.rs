//! Conditional synthetic targets: each class is an isotropic Gaussian or a
//! mixture of isotropic Gaussians.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: Vec<f64>,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub components: Vec<Component>,
    /// Mixture weights; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub dim: usize,
    pub classes: Vec<ClassSpec>,
    /// Class prior; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
}

impl Default for DataSpec {
    /// Class A ~ N(-1.5, 0.2^2), class B ~ N(+1.5, 0.2^2).
    fn default() -> Self {
        DataSpec::gaussians(&[(vec![-1.5], 0.2), (vec![1.5], 0.2)]).expect("valid default spec")
    }
}

impl DataSpec {
    /// One isotropic Gaussian per class.
    pub fn gaussians(classes: &[(Vec<f64>, f64)]) -> Result<Self> {
        let dim = classes.first().map_or(0, |c| c.0.len());
        let spec = DataSpec {
            dim,
            classes: classes
                .iter()
                .map(|(mean, std)| ClassSpec { components: vec![Component { mean: mean.clone(), std: *std }], weights: None })
                .collect(),
            prior: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("data dimension must be positive".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("data spec needs at least one class".into()));
        }
        for (y, class) in self.classes.iter().enumerate() {
            if class.components.is_empty() {
                return Err(Error::Config(format!("class {y} has no components")));
            }
            for c in &class.components {
                if c.mean.len() != self.dim {
                    return Err(Error::Config(format!("class {y} mean has dimension {}, expected {}", c.mean.len(), self.dim)));
                }
                if !(c.std.is_finite() && c.std > 0.0) {
                    return Err(Error::Config(format!("class {y} std must be positive, got {}", c.std)));
                }
            }
            if let Some(w) = &class.weights {
                check_weights(w, class.components.len(), &format!("class {y} mixture weights"))?;
            }
        }
        if let Some(p) = &self.prior {
            check_weights(p, self.classes.len(), "class prior")?;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Draw a class index from the prior.
    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.prior {
            None => rng.random_range(0..self.classes.len()),
            Some(p) => pick(p, rng),
        }
    }

    /// One draw from class `y` written into `out` (length `dim`).
    pub fn sample_into<R: Rng + ?Sized>(&self, y: usize, rng: &mut R, out: &mut [f64]) {
        let class = &self.classes[y];
        let comp = match &class.weights {
            Some(w) if class.components.len() > 1 => &class.components[pick(w, rng)],
            None if class.components.len() > 1 => &class.components[rng.random_range(0..class.components.len())],
            _ => &class.components[0],
        };
        for (o, &m) in out.iter_mut().zip(&comp.mean) {
            let e: f64 = StandardNormal.sample(rng);
            *o = m + comp.std * e;
        }
    }

    /// `n` i.i.d. draws from class `y`, flattened row-major (`n * dim`).
    pub fn sample_conditional<R: Rng + ?Sized>(&self, y: usize, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        if y >= self.classes.len() {
            return Err(Error::Domain(format!("class index {y} out of range for {} classes", self.classes.len())));
        }
        let mut out = vec![0.0; n * self.dim];
        for row in out.chunks_exact_mut(self.dim) {
            self.sample_into(y, rng, row);
        }
        Ok(out)
    }

    /// Mixture mean of class `y` (used for reporting).
    pub fn class_mean(&self, y: usize) -> Vec<f64> {
        let class = &self.classes[y];
        let k = class.components.len();
        let mut mean = vec![0.0; self.dim];
        for (i, c) in class.components.iter().enumerate() {
            let w = class.weights.as_ref().map_or(1.0 / k as f64, |w| w[i] / w.iter().sum::<f64>());
            for (m, v) in mean.iter_mut().zip(&c.mean) {
                *m += w * v;
            }
        }
        mean
    }
}

/// Conventional display names for class indices: A, B, ..., Z, C26, ...
pub fn class_label(y: usize) -> String {
    if y < 26 {
        ((b'A' + y as u8) as char).to_string()
    } else {
        format!("C{y}")
    }
}

fn check_weights(w: &[f64], expected: usize, what: &str) -> Result<()> {
    if w.len() != expected {
        return Err(Error::Config(format!("{what}: {} entries, expected {expected}", w.len())));
    }
    if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!("{what} must be nonnegative with a positive sum")));
    }
    Ok(())
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}
