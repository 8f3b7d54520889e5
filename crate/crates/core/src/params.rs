//! Flat parameter storage: a list of named, shaped arrays laid out
//! contiguously in one `Vec<f64>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ArraySpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    specs: Vec<ArraySpec>,
    data: Vec<f64>,
}

impl ParamSet {
    /// Zero-filled storage for the given `(name, shape)` list.
    pub fn zeros<S: Into<String>>(arrays: impl IntoIterator<Item = (S, Vec<usize>)>) -> Self {
        let mut specs = Vec::new();
        let mut offset = 0;
        for (name, shape) in arrays {
            let spec = ArraySpec { name: name.into(), shape, offset };
            offset += spec.len();
            specs.push(spec);
        }
        ParamSet { specs, data: vec![0.0; offset] }
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamSet { specs: self.specs.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn specs(&self) -> &[ArraySpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn spec(&self, name: &str) -> Option<&ArraySpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.spec(name).map(|s| &self.data[s.range()])
    }

    pub fn array_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.spec(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.specs == other.specs
    }

    /// Replace values from another set with an identical layout.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Shape { expected: self.len(), got: other.len() });
        }
        self.data.copy_from_slice(&other.data);
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// First array containing a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.specs
            .iter()
            .find(|s| self.data[s.range()].iter().any(|x| !x.is_finite()))
            .map(|s| s.name.as_str())
    }
}
