//! Cliques and their coherent polytopes.
//!
//! Every supported relation has two descriptions that must agree: an explicit
//! constraint system ([`PolytopeSpec`], equalities plus halfspaces inside the
//! unit box) and the set of coherent 0/1 outcomes ([`VertexSet`]) whose
//! convex hull is the same polytope.

use crate::error::{check_dim, CoherenceError, Result};
use crate::quote::dot;
use serde::{Deserialize, Serialize};

/// Default absolute per-constraint membership tolerance.
pub const DEFAULT_MEMBER_TOL: f64 = 1e-8;

/// Largest arity for which outcome enumeration is allowed.
pub const MAX_ENUM_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    #[serde(rename = "neg")]
    Negation,
    #[serde(rename = "and")]
    Conjunction,
    #[serde(rename = "or")]
    Disjunction,
    #[serde(rename = "partition")]
    Partition,
    #[serde(rename = "ladder")]
    Ladder,
    #[serde(rename = "paraphrase")]
    Paraphrase,
}

impl RelationKind {
    pub const ALL: [RelationKind; 6] = [
        RelationKind::Negation,
        RelationKind::Conjunction,
        RelationKind::Disjunction,
        RelationKind::Partition,
        RelationKind::Ladder,
        RelationKind::Paraphrase,
    ];

    /// Short tag used in the JSONL formats.
    pub fn tag(self) -> &'static str {
        match self {
            RelationKind::Negation => "neg",
            RelationKind::Conjunction => "and",
            RelationKind::Disjunction => "or",
            RelationKind::Partition => "partition",
            RelationKind::Ladder => "ladder",
            RelationKind::Paraphrase => "paraphrase",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Arity fixed by the relation, if any.
    pub fn fixed_arity(self) -> Option<usize> {
        match self {
            RelationKind::Negation => Some(2),
            RelationKind::Conjunction | RelationKind::Disjunction => Some(3),
            _ => None,
        }
    }

    /// Whether the coherent set is cut out by equalities only (plus the box).
    pub fn is_equality(self) -> bool {
        matches!(
            self,
            RelationKind::Negation | RelationKind::Partition | RelationKind::Paraphrase
        )
    }
}

impl std::fmt::Display for RelationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// A logical relation over `arity` Bernoulli questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RelationRepr", into = "RelationRepr")]
pub struct Relation {
    kind: RelationKind,
    arity: usize,
}

#[derive(Serialize, Deserialize)]
struct RelationRepr {
    kind: RelationKind,
    m: usize,
}

impl TryFrom<RelationRepr> for Relation {
    type Error = CoherenceError;

    fn try_from(r: RelationRepr) -> Result<Self> {
        Relation::new(r.kind, r.m)
    }
}

impl From<Relation> for RelationRepr {
    fn from(r: Relation) -> Self {
        RelationRepr {
            kind: r.kind,
            m: r.arity,
        }
    }
}

impl Relation {
    pub fn new(kind: RelationKind, arity: usize) -> Result<Self> {
        let ok = match kind.fixed_arity() {
            Some(fixed) => arity == fixed,
            None => arity >= 2,
        };
        if !ok {
            return Err(CoherenceError::UnsupportedArity {
                kind: kind.tag(),
                arity,
            });
        }
        Ok(Self { kind, arity })
    }

    pub fn negation() -> Self {
        Self {
            kind: RelationKind::Negation,
            arity: 2,
        }
    }

    pub fn conjunction() -> Self {
        Self {
            kind: RelationKind::Conjunction,
            arity: 3,
        }
    }

    pub fn disjunction() -> Self {
        Self {
            kind: RelationKind::Disjunction,
            arity: 3,
        }
    }

    pub fn partition(m: usize) -> Result<Self> {
        Self::new(RelationKind::Partition, m)
    }

    pub fn ladder(m: usize) -> Result<Self> {
        Self::new(RelationKind::Ladder, m)
    }

    pub fn paraphrase(m: usize) -> Result<Self> {
        Self::new(RelationKind::Paraphrase, m)
    }

    pub fn kind(&self) -> RelationKind {
        self.kind
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Whether a 0/1 outcome vector is consistent with the relation.
    pub fn admits(&self, outcome: &[u8]) -> bool {
        if outcome.len() != self.arity {
            return false;
        }
        match self.kind {
            RelationKind::Negation => outcome[0] + outcome[1] == 1,
            RelationKind::Conjunction => outcome[2] == (outcome[0] & outcome[1]),
            RelationKind::Disjunction => outcome[2] == (outcome[0] | outcome[1]),
            RelationKind::Partition => outcome.iter().map(|&y| y as usize).sum::<usize>() == 1,
            RelationKind::Ladder => outcome.windows(2).all(|w| w[1] <= w[0]),
            RelationKind::Paraphrase => outcome.iter().all(|&y| y == outcome[0]),
        }
    }
}

/// A clique of questions linked by one relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clique {
    pub id: String,
    pub relation: Relation,
    pub questions: Vec<String>,
    pub labels: Option<Vec<u8>>,
}

impl Clique {
    pub fn new(
        id: impl Into<String>,
        relation: Relation,
        questions: Vec<String>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        check_dim(relation.arity(), questions.len())?;
        if let Some(labels) = &labels {
            check_dim(relation.arity(), labels.len())?;
            if labels.iter().any(|&y| y > 1) {
                return Err(CoherenceError::InvalidArgument("labels must be 0 or 1".into()));
            }
        }
        Ok(Self {
            id: id.into(),
            relation,
            questions,
            labels,
        })
    }

    /// Clique with placeholder question texts.
    pub fn anonymous(id: impl Into<String>, relation: Relation) -> Self {
        let questions = (1..=relation.arity()).map(|i| format!("Q{i}")).collect();
        Self {
            id: id.into(),
            relation,
            questions,
            labels: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.relation.arity()
    }
}

/// A single linear constraint `normal · r (= | <=) offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub id: String,
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl LinearConstraint {
    pub fn new(id: impl Into<String>, normal: Vec<f64>, offset: f64) -> Self {
        Self {
            id: id.into(),
            normal,
            offset,
        }
    }

    /// `normal · x - offset`.
    pub fn slack_value(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }
}

/// Coherent set as box + equalities + halfspaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSpec {
    dim: usize,
    equalities: Vec<LinearConstraint>,
    halfspaces: Vec<LinearConstraint>,
}

impl PolytopeSpec {
    pub fn new(dim: usize, equalities: Vec<LinearConstraint>, halfspaces: Vec<LinearConstraint>) -> Result<Self> {
        for c in equalities.iter().chain(&halfspaces) {
            check_dim(dim, c.normal.len())?;
            if c.normal.iter().all(|&v| v == 0.0) {
                return Err(CoherenceError::InvalidArgument(format!(
                    "constraint `{}` has a zero normal",
                    c.id
                )));
            }
        }
        Ok(Self {
            dim,
            equalities,
            halfspaces,
        })
    }

    /// The unit box `[0,1]^dim` with no further constraints.
    pub fn unit_box(dim: usize) -> Self {
        Self {
            dim,
            equalities: Vec::new(),
            halfspaces: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn equalities(&self) -> &[LinearConstraint] {
        &self.equalities
    }

    pub fn halfspaces(&self) -> &[LinearConstraint] {
        &self.halfspaces
    }

    /// The box as `2 * dim` explicit halfspaces (`-r_i <= 0`, `r_i <= 1`).
    pub fn box_halfspaces(&self) -> Vec<LinearConstraint> {
        let mut out = Vec::with_capacity(2 * self.dim);
        for i in 0..self.dim {
            let mut lo = vec![0.0; self.dim];
            lo[i] = -1.0;
            out.push(LinearConstraint::new(format!("box:r{}>=0", i + 1), lo, 0.0));
            let mut hi = vec![0.0; self.dim];
            hi[i] = 1.0;
            out.push(LinearConstraint::new(format!("box:r{}<=1", i + 1), hi, 1.0));
        }
        out
    }

    /// Halfspaces including the materialized box.
    pub fn halfspaces_with_box(&self) -> Vec<LinearConstraint> {
        let mut out = self.halfspaces.clone();
        out.extend(self.box_halfspaces());
        out
    }

    /// Largest absolute violation over box, equalities and halfspaces.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let box_v = x.iter().map(|&v| (-v).max(v - 1.0).max(0.0)).fold(0.0, f64::max);
        let eq_v = self
            .equalities
            .iter()
            .map(|c| c.slack_value(x).abs())
            .fold(0.0, f64::max);
        let hs_v = self
            .halfspaces
            .iter()
            .map(|c| c.slack_value(x).max(0.0))
            .fold(0.0, f64::max);
        box_v.max(eq_v).max(hs_v)
    }

    /// Ids of constraints (box included) violated by more than `tol`.
    pub fn violated(&self, x: &[f64], tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.equalities {
            if c.slack_value(x).abs() > tol {
                out.push(c.id.clone());
            }
        }
        for c in &self.halfspaces {
            if c.slack_value(x) > tol {
                out.push(c.id.clone());
            }
        }
        for c in self.box_halfspaces() {
            if c.slack_value(x) > tol {
                out.push(c.id);
            }
        }
        out
    }

    /// Embed this spec into a larger coordinate system via `coords`.
    pub fn lift(&self, joint_dim: usize, coords: &[usize], prefix: &str) -> Result<PolytopeSpec> {
        check_dim(self.dim, coords.len())?;
        let lift_one = |c: &LinearConstraint| {
            let mut normal = vec![0.0; joint_dim];
            for (local, &j) in coords.iter().enumerate() {
                normal[j] += c.normal[local];
            }
            LinearConstraint::new(format!("{prefix}{}", c.id), normal, c.offset)
        };
        PolytopeSpec::new(
            joint_dim,
            self.equalities.iter().map(lift_one).collect(),
            self.halfspaces.iter().map(lift_one).collect(),
        )
    }

    /// Intersection of two specs of the same dimension.
    pub fn intersect(&self, other: &PolytopeSpec) -> Result<PolytopeSpec> {
        check_dim(self.dim, other.dim)?;
        let mut eqs = self.equalities.clone();
        eqs.extend(other.equalities.iter().cloned());
        let mut hs = self.halfspaces.clone();
        hs.extend(other.halfspaces.iter().cloned());
        Ok(PolytopeSpec {
            dim: self.dim,
            equalities: eqs,
            halfspaces: hs,
        })
    }
}

/// Coherent outcome indicators of a relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSet {
    pub dim: usize,
    pub vertices: Vec<Vec<f64>>,
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Arithmetic mean of the vertices (a point of the hull).
    pub fn centroid(&self) -> Vec<f64> {
        let n = self.vertices.len() as f64;
        let mut c = vec![0.0; self.dim];
        for v in &self.vertices {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi / n;
            }
        }
        c
    }

    /// All of `{0,1}^dim`.
    pub fn cube(dim: usize) -> Result<Self> {
        if dim > MAX_ENUM_DIM {
            return Err(CoherenceError::EnumerationBound {
                dim,
                limit: MAX_ENUM_DIM,
            });
        }
        let vertices = (0..1usize << dim)
            .map(|bits| (0..dim).map(|i| ((bits >> i) & 1) as f64).collect())
            .collect();
        Ok(Self { dim, vertices })
    }
}

fn unit(dim: usize, entries: &[(usize, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(i, x) in entries {
        v[i] = x;
    }
    v
}

/// Constraint system of the coherent polytope of `relation`.
pub fn build_polytope(relation: &Relation) -> PolytopeSpec {
    let m = relation.arity();
    let tag = relation.kind().tag();
    let (eqs, hs) = match relation.kind() {
        RelationKind::Negation => (vec![LinearConstraint::new("neg:r1+r2=1", vec![1.0, 1.0], 1.0)], vec![]),
        RelationKind::Conjunction => (
            vec![],
            vec![
                LinearConstraint::new("and:r3<=r1", unit(3, &[(0, -1.0), (2, 1.0)]), 0.0),
                LinearConstraint::new("and:r3<=r2", unit(3, &[(1, -1.0), (2, 1.0)]), 0.0),
                LinearConstraint::new("and:r1+r2-r3<=1", vec![1.0, 1.0, -1.0], 1.0),
                LinearConstraint::new("and:r3>=0", unit(3, &[(2, -1.0)]), 0.0),
            ],
        ),
        RelationKind::Disjunction => (
            vec![],
            vec![
                LinearConstraint::new("or:r1<=r3", unit(3, &[(0, 1.0), (2, -1.0)]), 0.0),
                LinearConstraint::new("or:r2<=r3", unit(3, &[(1, 1.0), (2, -1.0)]), 0.0),
                LinearConstraint::new("or:r3<=r1+r2", vec![-1.0, -1.0, 1.0], 0.0),
            ],
        ),
        RelationKind::Partition => (
            vec![LinearConstraint::new("partition:sum=1", vec![1.0; m], 1.0)],
            vec![],
        ),
        RelationKind::Ladder => (
            vec![],
            (0..m - 1)
                .map(|i| {
                    LinearConstraint::new(
                        format!("{tag}:r{}<=r{}", i + 2, i + 1),
                        unit(m, &[(i, -1.0), (i + 1, 1.0)]),
                        0.0,
                    )
                })
                .collect(),
        ),
        RelationKind::Paraphrase => (
            (0..m - 1)
                .map(|i| {
                    LinearConstraint::new(
                        format!("{tag}:r{}=r{}", i + 1, i + 2),
                        unit(m, &[(i, 1.0), (i + 1, -1.0)]),
                        0.0,
                    )
                })
                .collect(),
            vec![],
        ),
    };
    PolytopeSpec {
        dim: m,
        equalities: eqs,
        halfspaces: hs,
    }
}

/// Membership within an absolute per-constraint tolerance.
pub fn is_member(spec: &PolytopeSpec, q: &[f64], tol: f64) -> Result<bool> {
    check_dim(spec.dim(), q.len())?;
    Ok(spec.max_violation(q) <= tol)
}

/// All coherent outcome vectors of `relation`.
pub fn enumerate_vertices(relation: &Relation) -> Result<VertexSet> {
    let m = relation.arity();
    if m > MAX_ENUM_DIM {
        return Err(CoherenceError::EnumerationBound {
            dim: m,
            limit: MAX_ENUM_DIM,
        });
    }
    let mut vertices = Vec::new();
    let mut outcome = vec![0u8; m];
    for bits in 0..1usize << m {
        for (i, y) in outcome.iter_mut().enumerate() {
            *y = ((bits >> (m - 1 - i)) & 1) as u8;
        }
        if relation.admits(&outcome) {
            vertices.push(outcome.iter().map(|&y| y as f64).collect());
        }
    }
    Ok(VertexSet { dim: m, vertices })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Vec<Relation> {
        let mut out = vec![Relation::negation(), Relation::conjunction(), Relation::disjunction()];
        for m in 2..=6 {
            out.push(Relation::partition(m).unwrap());
            out.push(Relation::ladder(m).unwrap());
            out.push(Relation::paraphrase(m).unwrap());
        }
        out
    }

    #[test]
    fn fixed_arity_is_enforced() {
        assert!(Relation::new(RelationKind::Negation, 3).is_err());
        assert!(Relation::new(RelationKind::Conjunction, 2).is_err());
        assert!(Relation::new(RelationKind::Partition, 1).is_err());
        assert!(Relation::new(RelationKind::Ladder, 2).is_ok());
    }

    #[test]
    fn negation_spec() {
        let spec = build_polytope(&Relation::negation());
        assert_eq!(spec.equalities().len(), 1);
        assert_eq!(spec.equalities()[0].normal, vec![1.0, 1.0]);
        assert_eq!(spec.equalities()[0].offset, 1.0);
        assert!(spec.halfspaces().is_empty());
    }

    #[test]
    fn partition_spec() {
        let spec = build_polytope(&Relation::partition(4).unwrap());
        assert_eq!(spec.equalities().len(), 1);
        assert_eq!(spec.equalities()[0].normal, vec![1.0; 4]);
        assert_eq!(spec.equalities()[0].offset, 1.0);
    }

    #[test]
    fn conjunction_spec_matches_enumerated_outcomes() {
        let rel = Relation::conjunction();
        let spec = build_polytope(&rel);
        assert_eq!(spec.halfspaces().len(), 4);
        assert!(spec.equalities().is_empty());
        // brute force over the cube: integer members are exactly the coherent outcomes
        let verts = enumerate_vertices(&rel).unwrap();
        for v in VertexSet::cube(3).unwrap().vertices {
            let member = is_member(&spec, &v, 0.0).unwrap();
            assert_eq!(member, verts.vertices.contains(&v), "{v:?}");
        }
    }

    #[test]
    fn membership_examples() {
        let neg = build_polytope(&Relation::negation());
        assert!(is_member(&neg, &[0.5, 0.5], 1e-9).unwrap());
        assert!(!is_member(&neg, &[0.84, 0.89], 1e-9).unwrap());
        let and = build_polytope(&Relation::conjunction());
        assert!(is_member(&and, &[0.5, 0.5, 0.25], 1e-9).unwrap());
        assert!(is_member(&neg, &[0.5], 1e-9).is_err());
    }

    #[test]
    fn vertex_examples() {
        let neg = enumerate_vertices(&Relation::negation()).unwrap();
        assert_eq!(neg.vertices, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let part = enumerate_vertices(&Relation::partition(3).unwrap()).unwrap();
        assert_eq!(part.len(), 3);
        for v in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            assert!(part.vertices.contains(&v.to_vec()));
        }
        let and = enumerate_vertices(&Relation::conjunction()).unwrap();
        let expected = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        assert_eq!(and.len(), 4);
        for v in expected {
            assert!(and.vertices.contains(&v.to_vec()));
        }
        assert!(matches!(
            enumerate_vertices(&Relation::partition(13).unwrap()),
            Err(CoherenceError::EnumerationBound { .. })
        ));
    }

    #[test]
    fn vertices_are_members_and_centroid_is_feasible() {
        for rel in catalog() {
            let spec = build_polytope(&rel);
            let verts = enumerate_vertices(&rel).unwrap();
            assert!(!verts.is_empty());
            for v in &verts.vertices {
                assert!(is_member(&spec, v, 0.0).unwrap(), "{rel:?} {v:?}");
            }
            assert!(is_member(&spec, &verts.centroid(), 1e-12).unwrap(), "{rel:?}");
        }
    }

    #[test]
    fn ladder_is_non_increasing() {
        let spec = build_polytope(&Relation::ladder(3).unwrap());
        assert!(is_member(&spec, &[0.9, 0.5, 0.1], 0.0).unwrap());
        assert!(!is_member(&spec, &[0.1, 0.5, 0.9], 1e-9).unwrap());
    }

    #[test]
    fn lift_places_normals_on_joint_coordinates() {
        let spec = build_polytope(&Relation::negation());
        let lifted = spec.lift(4, &[3, 1], "c0/").unwrap();
        assert_eq!(lifted.equalities()[0].normal, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(lifted.equalities()[0].id, "c0/neg:r1+r2=1");
    }

    #[test]
    fn relation_serde_uses_tags() {
        let r: Relation = serde_json::from_str(r#"{"kind":"and","m":3}"#).unwrap();
        assert_eq!(r, Relation::conjunction());
        assert!(serde_json::from_str::<Relation>(r#"{"kind":"neg","m":3}"#).is_err());
    }
}
