use super::{ProjectionResult, IDENTITY_TOL};
use crate::error::{check_dim, CoherenceError, Result};
use crate::polytope::{build_polytope, Relation, RelationKind};

/// Euclidean projection onto `{x >= 0, sum x = 1}` by the sorted-threshold rule.
pub fn project_simplex(q: &[f64]) -> Vec<f64> {
    let mut sorted = q.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (1.0 - cumsum) / (j as f64 + 1.0);
        if u + candidate > 0.0 {
            theta = candidate;
        }
    }
    q.iter().map(|&v| (v + theta).max(0.0)).collect()
}

/// Least-squares fit of a non-increasing sequence (pool adjacent violators).
pub fn isotonic_non_increasing(q: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(q.len());
    for &v in q {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (s1, n1) = blocks[blocks.len() - 2];
            let (s2, n2) = blocks[blocks.len() - 1];
            if s2 / n2 as f64 > s1 / n1 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s1 + s2, n1 + n2);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(q.len());
    for (s, n) in blocks {
        out.extend(std::iter::repeat_n(s / n as f64, n));
    }
    out
}

pub fn project_box(q: &[f64]) -> Vec<f64> {
    q.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Closed-form L2 projection onto the coherent polytope of `relation`.
///
/// Available for negation, partition, ladder and paraphrase.
pub fn project_closed_form(relation: &Relation, q: &[f64]) -> Result<ProjectionResult> {
    check_dim(relation.arity(), q.len())?;
    if matches!(relation.kind(), RelationKind::Conjunction | RelationKind::Disjunction) {
        return Err(CoherenceError::NoClosedForm(relation.kind().tag()));
    }
    if build_polytope(relation).max_violation(q) <= IDENTITY_TOL {
        return Ok(ProjectionResult::identity(q));
    }
    let projected = match relation.kind() {
        RelationKind::Negation => {
            let t = (0.5 * (1.0 + q[0] - q[1])).clamp(0.0, 1.0);
            vec![t, 1.0 - t]
        }
        RelationKind::Partition => project_simplex(q),
        RelationKind::Ladder => project_box(&isotonic_non_increasing(q)),
        RelationKind::Paraphrase => {
            let mean = (q.iter().sum::<f64>() / q.len() as f64).clamp(0.0, 1.0);
            vec![mean; q.len()]
        }
        RelationKind::Conjunction | RelationKind::Disjunction => unreachable!("rejected above"),
    };
    let mut result = ProjectionResult::from_points(q, projected, 0, true);
    if result.residual > 0.0 {
        let violated = build_polytope(relation).violated(q, 0.0);
        result.active_constraint = violated
            .iter()
            .find(|id| !id.starts_with("box:"))
            .or(violated.first())
            .cloned();
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn negation_midpoint() {
        let r = project_closed_form(&Relation::negation(), &[0.6, 0.6]).unwrap();
        assert_abs_diff_eq!(r.projected[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.projected[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.residual, 0.02f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn negation_worst_case_row() {
        let r = project_closed_form(&Relation::negation(), &[0.84, 0.89]).unwrap();
        assert_abs_diff_eq!(r.projected[0], 0.475, epsilon = 1e-12);
        assert_abs_diff_eq!(r.projected[1], 0.525, epsilon = 1e-12);
        // 0.73 / sqrt(2)
        assert_abs_diff_eq!(r.residual, 0.5162, epsilon = 1e-4);
        assert!((r.residual - 0.517).abs() <= 0.002);
        assert_eq!(r.active_constraint.as_deref(), Some("neg:r1+r2=1"));
    }

    #[test]
    fn partition_assembled_mass() {
        let q = [0.39, 0.73, 0.67, 0.71];
        let r = project_closed_form(&Relation::partition(4).unwrap(), &q).unwrap();
        let expected = [0.015, 0.355, 0.295, 0.335];
        for (a, b) in r.projected.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r.residual, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn simplex_with_clipping() {
        let x = project_simplex(&[0.9, 0.8, 0.0, 0.0]);
        assert_abs_diff_eq!(x[0], 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 0.45, epsilon = 1e-15);
        assert_eq!(&x[2..], &[0.0, 0.0]);
        let ties = project_simplex(&[0.5, 0.5, 0.5]);
        for v in ties {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn pava_pools_violators() {
        assert_eq!(isotonic_non_increasing(&[0.2, 0.6]), vec![0.4, 0.4]);
        assert_eq!(isotonic_non_increasing(&[0.9, 0.5, 0.1]), vec![0.9, 0.5, 0.1]);
        let x = isotonic_non_increasing(&[0.1, 0.3, 0.2, 0.8]);
        for v in x {
            assert_abs_diff_eq!(v, 0.35, epsilon = 1e-15);
        }
    }

    #[test]
    fn member_is_fixed_point() {
        let r = project_closed_form(&Relation::negation(), &[0.3, 0.7]).unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.projected, vec![0.3, 0.7]);
        assert!(r.active_constraint.is_none());
    }

    #[test]
    fn no_closed_form_for_frechet() {
        assert!(matches!(
            project_closed_form(&Relation::conjunction(), &[0.5, 0.5, 0.5]),
            Err(CoherenceError::NoClosedForm("and"))
        ));
    }
}
