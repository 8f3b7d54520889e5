//! Sinusoidal feature embedding of scalar inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width and frequency base of a sinusoidal embedding. Frequencies are
/// geometric: `w_k = freq_base^(-2k/dim)` for `k = 0..dim/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub freq_base: f64,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec { dim: 8, freq_base: 10_000.0 }
    }
}

impl EmbeddingSpec {
    pub fn new(dim: usize, freq_base: f64) -> Result<Self> {
        let spec = EmbeddingSpec { dim, freq_base };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!("embedding dim must be a positive even integer, got {}", self.dim)));
        }
        if !(self.freq_base.is_finite() && self.freq_base > 0.0) {
            return Err(Error::Config(format!("embedding freq_base must be positive, got {}", self.freq_base)));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let half = self.dim / 2;
        (0..half)
            .map(|k| self.freq_base.powf(-2.0 * k as f64 / self.dim as f64))
            .collect()
    }
}

/// Embed `x` as `[sin(x w_0), .., sin(x w_{h-1}), cos(x w_0), .., cos(x w_{h-1})]`.
pub fn sinusoidal_embed(x: f64, spec: &EmbeddingSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("embedding input {x}")));
    }
    let mut out = vec![0.0; spec.dim];
    embed_into(x, &spec.frequencies(), &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn embed_into(x: f64, freqs: &[f64], out: &mut [f64]) {
    let half = freqs.len();
    for (k, &w) in freqs.iter().enumerate() {
        let (s, c) = (x * w).sin_cos();
        out[k] = s;
        out[half + k] = c;
    }
}
