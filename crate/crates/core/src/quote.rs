use serde::{Deserialize, Serialize};
use std::ops::Deref;

/// Where a quote vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Raw,
    LocallyRepaired,
    JointlyRepaired,
}

/// A vector of quoted probabilities, one per Bernoulli question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub values: Vec<f64>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Quote {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            provenance: Provenance::Raw,
        }
    }

    pub fn with_provenance(values: Vec<f64>, provenance: Provenance) -> Self {
        Self { values, provenance }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

impl Deref for Quote {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for Quote {
    fn from(values: Vec<f64>) -> Self {
        Quote::raw(values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
