//! L2 projection onto coherent polytopes.
//!
//! Three independent routes are provided:
//!
//! * [`closed_form`]: exact formulas for the equality relations and the ladder.
//! * [`dykstra`]: Boyle-Dykstra cyclic projection over equalities, halfspaces
//!   and the box, with correction vectors, followed by a KKT-checked
//!   active-set polish.
//! * [`oracle`]: Wolfe's minimum-norm-point algorithm over the vertex hull,
//!   used as ground truth in tests.
//!
//! [`hierarchical`] runs the local-then-coupling Dykstra cycle for composed
//! systems.

pub mod closed_form;
pub mod dykstra;
pub mod hierarchical;
pub mod oracle;

pub use closed_form::{isotonic_non_increasing, project_box, project_closed_form, project_simplex};
pub use dykstra::{project_dykstra, DykstraConfig};
pub use hierarchical::project_hierarchical;
pub use oracle::project_oracle;

use crate::error::Result;
use crate::polytope::{build_polytope, Relation, RelationKind};
use crate::quote::dist;
use serde::{Deserialize, Serialize};

/// Inputs within this violation are returned unchanged with residual 0.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Residuals below this are reported as exactly zero in certificates.
pub const REPORT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub projected: Vec<f64>,
    /// `||input - projected||_2`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active_constraint: Option<String>,
}

impl ProjectionResult {
    pub fn identity(q: &[f64]) -> Self {
        Self {
            projected: q.to_vec(),
            residual: 0.0,
            iterations: 0,
            converged: true,
            active_constraint: None,
        }
    }

    pub(crate) fn from_points(q: &[f64], projected: Vec<f64>, iterations: usize, converged: bool) -> Self {
        let residual = dist(q, &projected);
        Self {
            projected,
            residual,
            iterations,
            converged,
            active_constraint: None,
        }
    }

    /// Residual with the reporting floor applied.
    pub fn reported_residual(&self) -> f64 {
        floor_residual(self.residual)
    }
}

pub fn floor_residual(r: f64) -> f64 {
    if r < REPORT_FLOOR {
        0.0
    } else {
        r
    }
}

/// Projection onto a relation's polytope by the cheapest exact route.
pub fn project_relation(relation: &Relation, q: &[f64], config: &DykstraConfig) -> Result<ProjectionResult> {
    match relation.kind() {
        RelationKind::Conjunction | RelationKind::Disjunction => project_dykstra(&build_polytope(relation), q, config),
        _ => project_closed_form(relation, q),
    }
}
