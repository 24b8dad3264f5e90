//! Local-then-coupling Dykstra cycle for composed systems.

use super::dykstra::{dykstra_cycle, polish_point, project_dykstra, ConvexSet, DykstraConfig};
use super::{ProjectionResult, IDENTITY_TOL};
use crate::composition::{CompositionSpec, LocalStructure};
use crate::error::{check_dim, CoherenceError, Result};
use crate::polytope::PolytopeSpec;

/// A component's local polytope, free (inside the box) on all other coordinates.
struct LiftedLocal<'a> {
    id: String,
    coords: Vec<usize>,
    structure: &'a LocalStructure,
    config: DykstraConfig,
}

impl ConvexSet for LiftedLocal<'_> {
    fn project_into(&self, z: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(z) {
            *o = v.clamp(0.0, 1.0);
        }
        let local: Vec<f64> = self.coords.iter().map(|&j| z[j]).collect();
        let projected = self
            .structure
            .project(&local, &self.config)
            .expect("dimensions fixed at construction")
            .projected;
        for (&j, v) in self.coords.iter().zip(projected) {
            out[j] = v;
        }
    }

    fn id(&self) -> &str {
        &self.id
    }
}

struct CouplingProjector {
    spec: PolytopeSpec,
    config: DykstraConfig,
}

impl ConvexSet for CouplingProjector {
    fn project_into(&self, z: &[f64], out: &mut [f64]) {
        let r = project_dykstra(&self.spec, z, &self.config).expect("dimensions fixed at construction");
        out.copy_from_slice(&r.projected);
    }

    fn id(&self) -> &str {
        "coupling"
    }
}

/// Projection onto the joint polytope by cycling over the lifted local
/// polytopes and the coupling set.
pub fn project_hierarchical(comp: &CompositionSpec, q: &[f64], config: &DykstraConfig) -> Result<ProjectionResult> {
    check_dim(comp.joint_dim(), q.len())?;
    config.validate()?;
    let joint = comp.joint_polytope()?;
    if joint.max_violation(q) <= IDENTITY_TOL {
        return Ok(ProjectionResult::identity(q));
    }
    let locals: Vec<LiftedLocal> = comp
        .components()
        .iter()
        .enumerate()
        .map(|(a, structure)| LiftedLocal {
            id: format!("local{a}"),
            coords: comp.ownership().coords_of(a),
            structure,
            config: *config,
        })
        .collect();
    let coupling = (!comp.coupling().is_empty())
        .then(|| -> Result<CouplingProjector> {
            Ok(CouplingProjector {
                spec: comp.coupling().polytope(comp.joint_dim())?,
                config: *config,
            })
        })
        .transpose()?;
    let mut sets: Vec<&dyn ConvexSet> = locals.iter().map(|l| l as &dyn ConvexSet).collect();
    if let Some(c) = &coupling {
        sets.push(c);
    }
    let outcome = dykstra_cycle(&sets, q, config.tol, config.max_iter);
    let polished = if config.polish {
        polish_point(&joint, q, &outcome.point)
    } else {
        None
    };
    let converged = outcome.converged || polished.is_some();
    let point = polished.unwrap_or(outcome.point.clone());
    if !converged && joint.max_violation(&point) > 1e-6 {
        return Err(CoherenceError::InfeasibleJoint);
    }
    let mut result = ProjectionResult::from_points(q, point, outcome.iterations, converged);
    result.active_constraint = joint.violated(q, 0.0).into_iter().next();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::{CouplingConstraint, CouplingKind, CouplingSet, OwnershipMap};
    use crate::polytope::Relation;
    use crate::projection::project_closed_form;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trivial_coupling_leaves_coherent_quote() {
        let comp = CompositionSpec::new(
            vec![
                LocalStructure::Clique(Relation::negation()),
                LocalStructure::Free { dim: 1 },
            ],
            OwnershipMap::from_owners(vec![0, 0, 1], 2).unwrap(),
            CouplingSet::default(),
        )
        .unwrap();
        let r = project_hierarchical(&comp, &[0.3, 0.7, 0.9], &DykstraConfig::default()).unwrap();
        assert_eq!(r.projected, vec![0.3, 0.7, 0.9]);
    }

    #[test]
    fn singletons_with_partition_match_simplex() {
        let comp = CompositionSpec::new(
            vec![LocalStructure::Free { dim: 1 }; 4],
            OwnershipMap::from_owners(vec![0, 1, 2, 3], 4).unwrap(),
            CouplingSet::new(vec![CouplingConstraint::new(
                "p",
                CouplingKind::Partition,
                vec![0, 1, 2, 3],
            )]),
        )
        .unwrap();
        let q = [0.39, 0.73, 0.67, 0.71];
        let h = project_hierarchical(&comp, &q, &DykstraConfig::default()).unwrap();
        let c = project_closed_form(&Relation::partition(4).unwrap(), &q).unwrap();
        for (a, b) in h.projected.iter().zip(&c.projected) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn split_negation() {
        let comp = CompositionSpec::routed_clique(&Relation::negation(), &[0, 1]).unwrap();
        let r = project_hierarchical(&comp, &[0.84, 0.89], &DykstraConfig::default()).unwrap();
        assert_abs_diff_eq!(r.projected[0], 0.475, epsilon = 1e-12);
        assert_abs_diff_eq!(r.projected[1], 0.525, epsilon = 1e-12);
    }
}
