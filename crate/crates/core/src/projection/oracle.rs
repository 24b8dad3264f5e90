//! Exact projection onto the convex hull of a finite vertex set.
//!
//! Wolfe's minimum-norm-point algorithm on the translated points `v - q`:
//! an active-set method over convex-combination weights. It shares no code
//! with the constraint-based routes and is used as their ground truth.

use super::ProjectionResult;
use crate::error::{check_dim, CoherenceError, Result};
use crate::polytope::VertexSet;
use crate::quote::dot;
use nalgebra::{DMatrix, DVector};

pub const MAX_ORACLE_VERTICES: usize = 4096;

const Z1: f64 = 1e-14;
const Z2: f64 = 1e-12;

/// Minimum-norm point of `conv(points)`; returns the point and its weights.
fn min_norm_point(points: &[Vec<f64>]) -> (Vec<f64>, Vec<(usize, f64)>, usize) {
    let dim = points[0].len();
    let norms: Vec<f64> = points.iter().map(|p| dot(p, p)).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max).max(1e-300);
    let start = norms
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut support: Vec<(usize, f64)> = vec![(start, 1.0)];
    let mut x = points[start].clone();
    let mut iterations = 0;

    let combine = |support: &[(usize, f64)]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, w) in support {
            for (o, p) in out.iter_mut().zip(&points[i]) {
                *o += w * p;
            }
        }
        out
    };

    loop {
        iterations += 1;
        if iterations > 50 * (points.len() + dim + 10) {
            break;
        }
        let xx = dot(&x, &x);
        let (j, xp) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dot(&x, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if xx - xp <= Z1 * max_norm || support.iter().any(|&(i, _)| i == j) {
            break;
        }
        support.push((j, 0.0));

        loop {
            let Some(alpha) = affine_minimizer(points, &support) else {
                // affinely dependent corral; drop the newcomer and stop
                support.pop();
                return (x, support, iterations);
            };
            if alpha.iter().all(|&a| a > Z2) {
                for (s, a) in support.iter_mut().zip(&alpha) {
                    s.1 = *a;
                }
                x = combine(&support);
                break;
            }
            let mut theta = 1.0f64;
            for (s, &a) in support.iter().zip(&alpha) {
                if a <= Z2 {
                    let denom = s.1 - a;
                    if denom > 0.0 {
                        theta = theta.min(s.1 / denom);
                    }
                }
            }
            for (s, &a) in support.iter_mut().zip(&alpha) {
                s.1 = theta * a + (1.0 - theta) * s.1;
            }
            support.retain(|s| s.1 > Z2);
            let total: f64 = support.iter().map(|s| s.1).sum();
            for s in support.iter_mut() {
                s.1 /= total;
            }
            x = combine(&support);
        }
    }
    (x, support, iterations)
}

/// Weights of the min-norm point of the affine hull of the support.
fn affine_minimizer(points: &[Vec<f64>], support: &[(usize, f64)]) -> Option<Vec<f64>> {
    let s = support.len();
    let mut kkt = DMatrix::<f64>::zeros(s + 1, s + 1);
    for a in 0..s {
        for b in 0..s {
            kkt[(a, b)] = dot(&points[support[a].0], &points[support[b].0]);
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let alpha: Vec<f64> = sol.iter().take(s).copied().collect();
    if alpha.iter().any(|a| !a.is_finite()) {
        return None;
    }
    Some(alpha)
}

/// Exact L2 projection of `q` onto `conv(vertices)`.
pub fn project_oracle(vertices: &VertexSet, q: &[f64]) -> Result<ProjectionResult> {
    check_dim(vertices.dim, q.len())?;
    if vertices.len() > MAX_ORACLE_VERTICES {
        return Err(CoherenceError::TooManyVertices {
            count: vertices.len(),
            limit: MAX_ORACLE_VERTICES,
        });
    }
    if vertices.is_empty() {
        return Err(CoherenceError::InvalidArgument("empty vertex set".into()));
    }
    let shifted: Vec<Vec<f64>> = vertices
        .vertices
        .iter()
        .map(|v| v.iter().zip(q).map(|(a, b)| a - b).collect())
        .collect();
    let (x, _weights, iterations) = min_norm_point(&shifted);
    let projected: Vec<f64> = x.iter().zip(q).map(|(a, b)| a + b).collect();
    Ok(ProjectionResult::from_points(q, projected, iterations, true))
}

/// Convex weights expressing `q` as a mixture of `vertices`, for a point in
/// the hull. Only vertices with positive weight are returned.
pub fn hull_weights(vertices: &VertexSet, q: &[f64]) -> Result<Vec<(Vec<f64>, f64)>> {
    check_dim(vertices.dim, q.len())?;
    if vertices.is_empty() || vertices.len() > MAX_ORACLE_VERTICES {
        return Err(CoherenceError::TooManyVertices {
            count: vertices.len(),
            limit: MAX_ORACLE_VERTICES,
        });
    }
    let shifted: Vec<Vec<f64>> = vertices
        .vertices
        .iter()
        .map(|v| v.iter().zip(q).map(|(a, b)| a - b).collect())
        .collect();
    let (x, weights, _) = min_norm_point(&shifted);
    let gap = dot(&x, &x).sqrt();
    if gap > 1e-9 {
        return Err(CoherenceError::ReferenceNotCoherent { violation: gap });
    }
    Ok(weights
        .into_iter()
        .map(|(i, w)| (vertices.vertices[i].clone(), w))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{enumerate_vertices, Relation};
    use approx::assert_abs_diff_eq;

    #[test]
    fn negation_hull() {
        let v = enumerate_vertices(&Relation::negation()).unwrap();
        let r = project_oracle(&v, &[0.6, 0.6]).unwrap();
        assert_abs_diff_eq!(r.projected[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.projected[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn conjunction_hull_rejects_incoherent_outcome() {
        let v = enumerate_vertices(&Relation::conjunction()).unwrap();
        let r = project_oracle(&v, &[1.0, 1.0, 0.0]).unwrap();
        assert!(r.residual > 0.1);
    }

    #[test]
    fn interior_point_has_zero_residual() {
        let v = enumerate_vertices(&Relation::partition(4).unwrap()).unwrap();
        let r = project_oracle(&v, &[0.25, 0.25, 0.25, 0.25]).unwrap();
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn weights_reconstruct_point() {
        let v = enumerate_vertices(&Relation::conjunction()).unwrap();
        let q = [0.6, 0.5, 0.3];
        let w = hull_weights(&v, &q).unwrap();
        assert_abs_diff_eq!(w.iter().map(|(_, w)| w).sum::<f64>(), 1.0, epsilon = 1e-12);
        for j in 0..3 {
            let x: f64 = w.iter().map(|(v, w)| v[j] * w).sum();
            assert_abs_diff_eq!(x, q[j], epsilon = 1e-10);
        }
        assert!(hull_weights(&v, &[1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn too_many_vertices() {
        let v = VertexSet {
            dim: 1,
            vertices: vec![vec![0.0]; MAX_ORACLE_VERTICES + 1],
        };
        assert!(matches!(
            project_oracle(&v, &[0.5]),
            Err(CoherenceError::TooManyVertices { .. })
        ));
    }
}
