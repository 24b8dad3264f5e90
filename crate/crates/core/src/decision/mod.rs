//! What incoherence costs a downstream decision maker.
//!
//! * [`exposure`]: the deterministic Dutch-book exposure of a quote.
//! * [`allocate`]: turning a quote into bet weights.
//! * [`regret`]: Brier and log-payoff differences between naive and
//!   repaired quotes, with paired-bootstrap intervals.
//! * [`gate_sweep`]: how well the residual flags harmful bets.
//! * [`murphy`] and [`diebold_mariano`]: forecast-scoring diagnostics.
//!
//! Brier scores are per-coordinate means so cliques of different sizes are
//! comparable.

mod allocation;
mod gating;
mod regret;
mod scoring;

pub use allocation::{allocate, exposure, AllocationKind, AllocationRule};
pub use gating::{auc, gate_sweep, quartile_table, CvReport, GateConfig, GateReport, OperatingPoint, QuartileRow};
pub use regret::{regret, BetOutcome, ConfidenceInterval, RegretConfig, RegretSummary};
pub use scoring::{brier, diebold_mariano, murphy, DieboldMariano, MurphyDecomposition};

use crate::error::{check_dim, CoherenceError, Result};
use serde::{Deserialize, Serialize};

/// One resolved bet: the naive and repaired quotes for a clique and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetRecord {
    pub clique_id: String,
    pub seed: u64,
    pub naive: Vec<f64>,
    pub repaired: Vec<f64>,
    pub labels: Vec<u8>,
    pub eps_star: f64,
}

impl BetRecord {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.labels.len(), self.naive.len())?;
        check_dim(self.labels.len(), self.repaired.len())?;
        if self.labels.iter().any(|&y| y > 1) {
            return Err(CoherenceError::InvalidArgument(format!(
                "bet {}: labels must be 0 or 1",
                self.clique_id
            )));
        }
        if !(self.eps_star >= 0.0) {
            return Err(CoherenceError::InvalidArgument(format!(
                "bet {}: eps_star must be >= 0",
                self.clique_id
            )));
        }
        Ok(())
    }

    /// Index of the single YES label, if exactly one label is 1.
    pub fn unique_yes(&self) -> Option<usize> {
        let mut yes = self.labels.iter().enumerate().filter(|(_, &y)| y == 1).map(|(i, _)| i);
        match (yes.next(), yes.next()) {
            (Some(i), None) => Some(i),
            _ => None,
        }
    }
}
