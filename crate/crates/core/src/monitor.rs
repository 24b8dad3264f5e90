//! Anytime-valid sequential test on a stream of squared residuals.
//!
//! Under the null that every population quote is coherent, a `K`-sample
//! estimate has `E[ε²] ≤ m/(4K)`. For each bet size `λ` the running product
//! of `exp(λ(ε² − m/4K) − λ²m/2K)` is a non-negative supermartingale; their
//! uniform mixture over a fixed grid is one too, so by Ville's inequality
//! the mixture exceeds `1/α` with probability at most `α`, uniformly over
//! stopping times.

use crate::error::{CoherenceError, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Bet sizes mixed uniformly.
pub const LAMBDA_GRID: [f64; 8] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];

/// Significance levels watched by default.
pub const DEFAULT_WATCH: [f64; 2] = [0.05, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamStep {
    pub eps_sq: f64,
    /// Question count (joint dimension for composed streams).
    pub m: u64,
    /// Samples per quote; for composed streams the minimum over components.
    pub k_samples: u64,
}

impl StreamStep {
    pub fn new(eps_sq: f64, m: u64, k_samples: u64) -> Result<Self> {
        let step = Self { eps_sq, m, k_samples };
        step.validate()?;
        Ok(step)
    }

    /// A composed-stream step: the envelope uses the smallest component `K`.
    pub fn composed(eps_sq: f64, m_star: u64, component_k: &[u64]) -> Result<Self> {
        let k = component_k
            .iter()
            .copied()
            .min()
            .ok_or_else(|| CoherenceError::InvalidArgument("no component sample counts".into()))?;
        Self::new(eps_sq, m_star, k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k_samples == 0 {
            return Err(CoherenceError::InvalidArgument(format!(
                "m and K must be positive (m={}, K={})",
                self.m, self.k_samples
            )));
        }
        if !self.eps_sq.is_finite() || self.eps_sq < 0.0 || self.eps_sq > self.m as f64 {
            return Err(CoherenceError::InvalidArgument(format!(
                "eps_sq={} outside [0, m={}]",
                self.eps_sq, self.m
            )));
        }
        Ok(())
    }

    /// Log increment of the `λ` e-process for this step.
    pub fn log_increment(&self, lambda: f64) -> f64 {
        let scale = self.m as f64 / self.k_samples as f64;
        lambda * (self.eps_sq - scale / 4.0) - lambda * lambda * scale / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    RejectNull,
}

/// Running state of the mixture e-process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EProcess {
    lambdas: Vec<f64>,
    log_e: Vec<f64>,
    log_e_mix: f64,
    sup_log_e_mix: f64,
    t: u64,
    watch: Vec<f64>,
    crossed_at: Vec<Option<u64>>,
}

impl Default for EProcess {
    fn default() -> Self {
        Self::new(DEFAULT_WATCH.to_vec()).expect("default watch list is valid")
    }
}

impl EProcess {
    /// Fresh process over [`LAMBDA_GRID`] watching the given `α` levels.
    pub fn new(watch: Vec<f64>) -> Result<Self> {
        Self::with_grid(LAMBDA_GRID.to_vec(), watch)
    }

    pub fn with_grid(lambdas: Vec<f64>, watch: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(CoherenceError::InvalidArgument(
                "lambda grid must be positive and nonempty".into(),
            ));
        }
        if let Some(a) = watch.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
            return Err(CoherenceError::InvalidArgument(format!("alpha {a} not in (0, 1)")));
        }
        let n = lambdas.len();
        Ok(Self {
            lambdas,
            log_e: vec![0.0; n],
            log_e_mix: 0.0,
            sup_log_e_mix: 0.0,
            t: 0,
            crossed_at: vec![None; watch.len()],
            watch,
        })
    }

    pub fn update(&mut self, step: &StreamStep) -> Result<()> {
        step.validate()?;
        for (l, log_e) in self.lambdas.iter().zip(self.log_e.iter_mut()) {
            *log_e += step.log_increment(*l);
        }
        self.t += 1;
        self.log_e_mix = log_mean_exp(&self.log_e);
        self.sup_log_e_mix = self.sup_log_e_mix.max(self.log_e_mix);
        for (alpha, crossed) in self.watch.iter().zip(self.crossed_at.iter_mut()) {
            if crossed.is_none() && self.log_e_mix >= -alpha.ln() {
                *crossed = Some(self.t);
            }
        }
        Ok(())
    }

    /// Consuming form of [`EProcess::update`].
    pub fn updated(mut self, step: &StreamStep) -> Result<Self> {
        self.update(step)?;
        Ok(self)
    }

    /// Reject once the mixture has ever reached `1/α`.
    pub fn decide(&self, alpha: f64) -> Result<Decision> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CoherenceError::InvalidArgument(format!("alpha {alpha} not in (0, 1)")));
        }
        Ok(if self.sup_log_e_mix >= -alpha.ln() {
            Decision::RejectNull
        } else {
            Decision::Continue
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn log_e_mix(&self) -> f64 {
        self.log_e_mix
    }

    pub fn sup_log_e_mix(&self) -> f64 {
        self.sup_log_e_mix
    }

    /// `(λ, log e-value)` pairs.
    pub fn log_e(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lambdas.iter().copied().zip(self.log_e.iter().copied())
    }

    /// `(α, first step at which the mixture reached 1/α)`.
    pub fn crossings(&self) -> impl Iterator<Item = (f64, Option<u64>)> + '_ {
        self.watch.iter().copied().zip(self.crossed_at.iter().copied())
    }

    pub fn report(&self) -> StepReport {
        StepReport {
            t: self.t,
            log_e_mix: self.log_e_mix,
            crossed: self.crossings().map(|(a, c)| (alpha_key(a), c)).collect(),
        }
    }
}

/// Per-step monitor output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub t: u64,
    pub log_e_mix: f64,
    pub crossed: IndexMap<String, Option<u64>>,
}

/// Short key for an `α` level: `1e-4`, `0.05`.
pub fn alpha_key(alpha: f64) -> String {
    if alpha < 1e-2 {
        format!("{alpha:e}")
    } else {
        format!("{alpha}")
    }
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + (s / xs.len() as f64).ln()
}

/// Bet size maximizing the drift under an alternative of size `delta`: `δK/m`.
pub fn optimal_lambda(delta: f64, m: u64, k_samples: u64) -> f64 {
    if delta <= 0.0 || m == 0 {
        return 0.0;
    }
    delta * k_samples as f64 / m as f64
}

/// Batch replay of a whole stream from a fresh state.
pub fn replay(steps: &[StreamStep], watch: Vec<f64>) -> Result<EProcess> {
    steps.iter().try_fold(EProcess::new(watch)?, |s, step| s.updated(step))
}
