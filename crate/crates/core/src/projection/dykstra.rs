//! Boyle-Dykstra cyclic projection.
//!
//! Each set in the cycle keeps its own correction vector; without those the
//! iteration would only find *a* point of the intersection, not the nearest
//! one. After the cycle settles, an optional polish step solves the
//! equality-constrained projection on the constraints that carry a
//! correction and accepts it only if it satisfies the KKT conditions of the
//! full system.

use super::{ProjectionResult, IDENTITY_TOL};
use crate::error::{check_dim, CoherenceError, Result};
use crate::polytope::{LinearConstraint, PolytopeSpec};
use crate::quote::{dot, norm_sq};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DykstraConfig {
    /// Stop when every correction vector moved less than this (sup norm) over one cycle.
    pub tol: f64,
    /// Maximum number of full cycles.
    pub max_iter: usize,
    /// Run the KKT-checked active-set polish after the cycle.
    pub polish: bool,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            polish: true,
        }
    }
}

impl DykstraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(CoherenceError::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(CoherenceError::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// A closed convex set with an exact projection.
pub trait ConvexSet {
    fn project_into(&self, z: &[f64], out: &mut [f64]);
    fn id(&self) -> &str;
}

#[derive(Debug, Clone)]
pub struct Hyperplane {
    id: String,
    normal: Vec<f64>,
    offset: f64,
    norm_sq: f64,
}

impl Hyperplane {
    pub fn new(c: &LinearConstraint) -> Self {
        Self {
            id: c.id.clone(),
            normal: c.normal.clone(),
            offset: c.offset,
            norm_sq: norm_sq(&c.normal),
        }
    }
}

impl ConvexSet for Hyperplane {
    fn project_into(&self, z: &[f64], out: &mut [f64]) {
        let step = (dot(&self.normal, z) - self.offset) / self.norm_sq;
        for ((o, zi), ai) in out.iter_mut().zip(z).zip(&self.normal) {
            *o = zi - step * ai;
        }
    }

    fn id(&self) -> &str {
        &self.id
    }
}

#[derive(Debug, Clone)]
pub struct Halfspace {
    id: String,
    normal: Vec<f64>,
    offset: f64,
    norm_sq: f64,
}

impl Halfspace {
    pub fn new(c: &LinearConstraint) -> Self {
        Self {
            id: c.id.clone(),
            normal: c.normal.clone(),
            offset: c.offset,
            norm_sq: norm_sq(&c.normal),
        }
    }
}

impl ConvexSet for Halfspace {
    fn project_into(&self, z: &[f64], out: &mut [f64]) {
        let excess = dot(&self.normal, z) - self.offset;
        if excess <= 0.0 {
            out.copy_from_slice(z);
        } else {
            let step = excess / self.norm_sq;
            for ((o, zi), ai) in out.iter_mut().zip(z).zip(&self.normal) {
                *o = zi - step * ai;
            }
        }
    }

    fn id(&self) -> &str {
        &self.id
    }
}

#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub point: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final correction vector per set, in cycle order.
    pub corrections: Vec<Vec<f64>>,
}

impl CycleOutcome {
    pub fn correction_norms(&self) -> Vec<f64> {
        self.corrections.iter().map(|y| norm_sq(y).sqrt()).collect()
    }
}

/// Run the Dykstra cycle over `sets` starting from `start`.
pub fn dykstra_cycle(sets: &[&dyn ConvexSet], start: &[f64], tol: f64, max_iter: usize) -> CycleOutcome {
    let n = start.len();
    let mut x = start.to_vec();
    let mut corrections = vec![vec![0.0; n]; sets.len()];
    let mut z = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for (set, y) in sets.iter().zip(corrections.iter_mut()) {
            for i in 0..n {
                z[i] = x[i] + y[i];
            }
            set.project_into(&z, &mut next);
            for i in 0..n {
                let y_new = z[i] - next[i];
                max_change = max_change.max((y_new - y[i]).abs());
                y[i] = y_new;
            }
            std::mem::swap(&mut x, &mut next);
        }
        if max_change <= tol {
            converged = true;
            break;
        }
    }
    CycleOutcome {
        point: x,
        iterations,
        converged,
        corrections,
    }
}

/// Rows of `spec` in the order used by [`project_dykstra`]: equalities, then
/// halfspaces, then the box.
fn rows(spec: &PolytopeSpec) -> (Vec<LinearConstraint>, usize) {
    let mut all = spec.equalities().to_vec();
    let n_eq = all.len();
    all.extend(spec.halfspaces_with_box());
    (all, n_eq)
}

/// Projection onto `{r : A r = b}` for the selected rows, if it satisfies the
/// KKT conditions of the full system.
fn try_active_set(
    spec: &PolytopeSpec,
    all: &[LinearConstraint],
    n_eq: usize,
    active: &[usize],
    q: &[f64],
) -> Option<Vec<f64>> {
    let n = q.len();
    let r = active.len();
    if r == 0 {
        let z = q.to_vec();
        return (spec.max_violation(&z) <= 1e-12).then_some(z);
    }
    let a = DMatrix::from_fn(r, n, |i, j| all[active[i]].normal[j]);
    let b = DVector::from_fn(r, |i, _| all[active[i]].offset);
    let qv = DVector::from_column_slice(q);
    let gram = &a * a.transpose();
    let rhs = &a * &qv - &b;
    let mu = gram.svd(true, true).solve(&rhs, 1e-13).ok()?;
    let z = &qv - a.transpose() * &mu;
    let z: Vec<f64> = z.iter().copied().collect();
    for (k, &row) in active.iter().enumerate() {
        if row >= n_eq && mu[k] < -1e-11 {
            return None;
        }
        if all[row].slack_value(&z).abs() > 1e-11 {
            return None;
        }
    }
    (spec.max_violation(&z) <= 1e-11).then_some(z)
}

fn polish(spec: &PolytopeSpec, q: &[f64], outcome: &CycleOutcome) -> Option<Vec<f64>> {
    let (all, n_eq) = rows(spec);
    let norms = outcome.correction_norms();
    let scale = norms.iter().copied().fold(0.0, f64::max).max(1e-300);
    let by_multiplier: Vec<usize> = (0..all.len())
        .filter(|&i| i < n_eq || norms[i] > 1e-9 * scale)
        .collect();
    if let Some(z) = try_active_set(spec, &all, n_eq, &by_multiplier, q) {
        return Some(z);
    }
    polish_point(spec, q, &outcome.point)
}

/// Active-set polish chosen by tightness at an approximate projection `x`.
pub(crate) fn polish_point(spec: &PolytopeSpec, q: &[f64], x: &[f64]) -> Option<Vec<f64>> {
    let (all, n_eq) = rows(spec);
    [1e-9, 1e-7, 1e-5].iter().find_map(|&thr| {
        let active: Vec<usize> = (0..all.len())
            .filter(|&i| i < n_eq || all[i].slack_value(x) > -thr)
            .collect();
        try_active_set(spec, &all, n_eq, &active, q)
    })
}

/// Boyle-Dykstra projection onto the polytope described by `spec`.
///
/// Non-convergence is reported through `converged = false`, not as an error.
pub fn project_dykstra(spec: &PolytopeSpec, q: &[f64], config: &DykstraConfig) -> Result<ProjectionResult> {
    check_dim(spec.dim(), q.len())?;
    config.validate()?;
    if spec.max_violation(q) <= IDENTITY_TOL {
        return Ok(ProjectionResult::identity(q));
    }
    let (all, n_eq) = rows(spec);
    let hyperplanes: Vec<Hyperplane> = all[..n_eq].iter().map(Hyperplane::new).collect();
    let halfspaces: Vec<Halfspace> = all[n_eq..].iter().map(Halfspace::new).collect();
    let sets: Vec<&dyn ConvexSet> = hyperplanes
        .iter()
        .map(|h| h as &dyn ConvexSet)
        .chain(halfspaces.iter().map(|h| h as &dyn ConvexSet))
        .collect();
    let outcome = dykstra_cycle(&sets, q, config.tol, config.max_iter);
    let polished = if config.polish { polish(spec, q, &outcome) } else { None };
    let converged = outcome.converged || polished.is_some();
    let point = polished.unwrap_or_else(|| outcome.point.clone());
    let mut result = ProjectionResult::from_points(q, point, outcome.iterations, converged);
    result.active_constraint = outcome
        .correction_norms()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| sets[i].id().to_string());
    Ok(result)
}
