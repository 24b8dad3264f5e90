use crate::error::{check_dim, Result};
use crate::polytope::{Relation, RelationKind};
use crate::projection::project_simplex;
use serde::{Deserialize, Serialize};

/// Guaranteed loss available to a counterparty trading unit stakes against `q`.
///
/// Equality relations measure the gap in their sum constraint; inequality
/// relations add up the one-sided Fréchet or chain violations.
pub fn exposure(relation: &Relation, q: &[f64]) -> Result<f64> {
    check_dim(relation.arity(), q.len())?;
    let pos = |v: f64| v.max(0.0);
    Ok(match relation.kind() {
        RelationKind::Negation | RelationKind::Partition => (q.iter().sum::<f64>() - 1.0).abs(),
        RelationKind::Conjunction => pos(q[2] - q[0].min(q[1])) + pos(pos(q[0] + q[1] - 1.0) - q[2]),
        RelationKind::Disjunction => pos(q[0].max(q[1]) - q[2]) + pos(q[2] - (q[0] + q[1]).min(1.0)),
        RelationKind::Ladder => q.windows(2).map(|w| pos(w[1] - w[0])).sum(),
        RelationKind::Paraphrase => {
            let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = q.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationKind {
    Proportional,
    TruncatedKelly,
    MaxEntropy,
}

impl std::str::FromStr for AllocationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "proportional" => Ok(Self::Proportional),
            "truncated-kelly" | "kelly" => Ok(Self::TruncatedKelly),
            "max-entropy" | "maxent" => Ok(Self::MaxEntropy),
            other => Err(format!("unknown allocation rule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationRule {
    pub kind: AllocationKind,
    /// Weight floor applied before taking the log of a winning weight.
    pub floor: f64,
    /// Per-coordinate cap for truncated Kelly; excess mass is spread evenly
    /// over the coordinates below the cap.
    pub cap: f64,
}

impl AllocationRule {
    pub fn new(kind: AllocationKind) -> Self {
        Self {
            kind,
            floor: 1e-6,
            cap: 0.99,
        }
    }
}

impl Default for AllocationRule {
    fn default() -> Self {
        Self::new(AllocationKind::Proportional)
    }
}

/// Bet weights for a quote: nonnegative and summing to one.
///
/// Proportional passes the quote through; the other two rules first project
/// it onto the probability simplex.
pub fn allocate(rule: &AllocationRule, q: &[f64]) -> Vec<f64> {
    let m = q.len();
    let uniform = || vec![1.0 / m as f64; m];
    match rule.kind {
        AllocationKind::Proportional => {
            let pos: Vec<f64> = q.iter().map(|v| v.max(0.0)).collect();
            let total: f64 = pos.iter().sum();
            if total > 0.0 {
                pos.into_iter().map(|v| v / total).collect()
            } else {
                uniform()
            }
        }
        AllocationKind::MaxEntropy => project_simplex(q),
        AllocationKind::TruncatedKelly => {
            let cap = rule.cap.max(1.0 / m as f64);
            let mut w = project_simplex(q);
            // clip at the cap and hand the excess to uncapped coordinates
            // evenly, repeating until nothing exceeds it; the sum stays 1
            loop {
                let excess: f64 = w.iter().map(|v| (v - cap).max(0.0)).sum();
                if excess <= 1e-15 {
                    break;
                }
                let open = w.iter().filter(|&&v| v < cap).count();
                for v in w.iter_mut() {
                    *v = if *v >= cap { cap } else { *v + excess / open as f64 };
                }
            }
            w
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exposure_examples() {
        let p4 = Relation::partition(4).unwrap();
        assert_abs_diff_eq!(exposure(&p4, &[0.39, 0.73, 0.67, 0.71]).unwrap(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            exposure(&Relation::negation(), &[0.84, 0.89]).unwrap(),
            0.73,
            epsilon = 1e-12
        );
        assert_eq!(exposure(&Relation::conjunction(), &[0.5, 0.5, 0.25]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            exposure(&Relation::disjunction(), &[0.02, 0.03, 0.92]).unwrap(),
            0.87,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            exposure(&Relation::ladder(3).unwrap(), &[0.2, 0.5, 0.6]).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        assert!(exposure(&p4, &[0.5]).is_err());
    }

    #[test]
    fn proportional_allocation() {
        let w = allocate(&AllocationRule::default(), &[0.39, 0.73, 0.67, 0.71]);
        for (a, b) in w.iter().zip([0.156, 0.292, 0.268, 0.284]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let r = [0.015, 0.355, 0.295, 0.335];
        for (a, b) in allocate(&AllocationRule::default(), &r).iter().zip(r) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_eq!(allocate(&AllocationRule::default(), &[0.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn coherentising_rules() {
        let q = [0.39, 0.73, 0.67, 0.71];
        let me = allocate(&AllocationRule::new(AllocationKind::MaxEntropy), &q);
        for (a, b) in me.iter().zip([0.015, 0.355, 0.295, 0.335]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let k = allocate(&AllocationRule::new(AllocationKind::TruncatedKelly), &[1.4, 0.1]);
        assert_abs_diff_eq!(k[0], 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(k[1], 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
