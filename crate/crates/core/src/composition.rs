//! Owner-selected composition of component quotes and the compositional
//! residual certificate.
//!
//! A [`CompositionSpec`] fixes `k` components (each with its own local
//! coherent polytope), an [`OwnershipMap`] that says which component fills
//! each joint coordinate, and a [`CouplingSet`] of cross-component
//! constraints. The joint coherent polytope is the intersection of the
//! lifted local polytopes with the coupling set; its distance from the
//! composed, locally repaired quote is the residual carried by a
//! [`Certificate`].

use crate::error::{check_dim, CoherenceError, Result};
use crate::polytope::{
    build_polytope, enumerate_vertices, LinearConstraint, PolytopeSpec, Relation, RelationKind, VertexSet,
    DEFAULT_MEMBER_TOL, MAX_ENUM_DIM,
};
use crate::projection::dykstra::project_dykstra;
use crate::projection::oracle::{project_oracle, MAX_ORACLE_VERTICES};
use crate::projection::{
    floor_residual, project_box, project_hierarchical, project_relation, DykstraConfig, ProjectionResult, REPORT_FLOOR,
};
use crate::quote::{dist, dot};
use serde::{Deserialize, Serialize};

/// Local structure of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalStructure {
    /// No local relation; the local polytope is the unit box.
    Free { dim: usize },
    /// The component answers a whole clique.
    Clique(Relation),
}

impl LocalStructure {
    pub fn dim(&self) -> usize {
        match self {
            LocalStructure::Free { dim } => *dim,
            LocalStructure::Clique(r) => r.arity(),
        }
    }

    pub fn polytope(&self) -> PolytopeSpec {
        match self {
            LocalStructure::Free { dim } => PolytopeSpec::unit_box(*dim),
            LocalStructure::Clique(r) => build_polytope(r),
        }
    }

    pub fn vertices(&self) -> Result<VertexSet> {
        match self {
            LocalStructure::Free { dim } => VertexSet::cube(*dim),
            LocalStructure::Clique(r) => enumerate_vertices(r),
        }
    }

    /// Local L2 repair.
    pub fn project(&self, q: &[f64], config: &DykstraConfig) -> Result<ProjectionResult> {
        check_dim(self.dim(), q.len())?;
        match self {
            LocalStructure::Free { .. } => {
                let p = project_box(q);
                let mut r = ProjectionResult::identity(q);
                r.residual = dist(q, &p);
                r.projected = p;
                Ok(r)
            }
            LocalStructure::Clique(rel) => project_relation(rel, q, config),
        }
    }
}

/// Which component fills each joint coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnershipMap {
    owner: Vec<usize>,
    local_index: Vec<usize>,
    k: usize,
}

impl OwnershipMap {
    /// Local indices follow the order in which a component's coordinates appear.
    pub fn from_owners(owner: Vec<usize>, k: usize) -> Result<Self> {
        let mut counts = vec![0usize; k];
        let mut local_index = Vec::with_capacity(owner.len());
        for (j, &a) in owner.iter().enumerate() {
            if a >= k {
                return Err(CoherenceError::InvalidOwnership(format!(
                    "coordinate {j} owned by component {a}, but only {k} components exist"
                )));
            }
            local_index.push(counts[a]);
            counts[a] += 1;
        }
        Ok(Self { owner, local_index, k })
    }

    pub fn joint_dim(&self) -> usize {
        self.owner.len()
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn owner(&self, j: usize) -> usize {
        self.owner[j]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    pub fn local_index(&self, j: usize) -> usize {
        self.local_index[j]
    }

    /// Joint coordinates of component `a`, in local order.
    pub fn coords_of(&self, a: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&j| self.owner[j] == a).collect()
    }
}

/// Kinds of cross-component coupling.
///
/// `Equal` is equality of coordinates, `Negation`/`Partition` are sum
/// constraints, `Conjunction`/`Disjunction`/`Halfspace` are Fréchet-type
/// halfspaces and `Ladder` is a monotone chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingKind {
    #[serde(rename = "equal")]
    Equal,
    #[serde(rename = "neg")]
    Negation,
    #[serde(rename = "partition")]
    Partition,
    #[serde(rename = "and")]
    Conjunction,
    #[serde(rename = "or")]
    Disjunction,
    #[serde(rename = "ladder")]
    Ladder,
    #[serde(rename = "halfspace")]
    Halfspace,
}

impl CouplingKind {
    pub fn for_relation(kind: RelationKind) -> Self {
        match kind {
            RelationKind::Negation => CouplingKind::Negation,
            RelationKind::Conjunction => CouplingKind::Conjunction,
            RelationKind::Disjunction => CouplingKind::Disjunction,
            RelationKind::Partition => CouplingKind::Partition,
            RelationKind::Ladder => CouplingKind::Ladder,
            RelationKind::Paraphrase => CouplingKind::Equal,
        }
    }
}

/// One coupling constraint over joint coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConstraint {
    pub id: String,
    pub kind: CouplingKind,
    pub coords: Vec<usize>,
    /// Right-hand side for sum and halfspace kinds.
    #[serde(default)]
    pub b: Option<f64>,
    /// Normal over `coords`, only for `Halfspace`.
    #[serde(default)]
    pub a: Option<Vec<f64>>,
}

impl CouplingConstraint {
    pub fn new(id: impl Into<String>, kind: CouplingKind, coords: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            kind,
            coords,
            b: None,
            a: None,
        }
    }

    pub fn halfspace(id: impl Into<String>, coords: Vec<usize>, a: Vec<f64>, b: f64) -> Self {
        Self {
            id: id.into(),
            kind: CouplingKind::Halfspace,
            coords,
            b: Some(b),
            a: Some(a),
        }
    }

    pub fn with_offset(mut self, b: f64) -> Self {
        self.b = Some(b);
        self
    }

    fn validate(&self, joint_dim: usize) -> Result<()> {
        let bad = |msg: String| Err(CoherenceError::InvalidCoupling(format!("`{}`: {msg}", self.id)));
        if self.coords.len() < 2 {
            return bad("needs at least two coordinates".into());
        }
        if let Some(&j) = self.coords.iter().find(|&&j| j >= joint_dim) {
            return bad(format!("coordinate {j} out of range for joint dimension {joint_dim}"));
        }
        let mut seen = self.coords.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.coords.len() {
            return bad("repeated coordinate".into());
        }
        let arity_ok = match self.kind {
            CouplingKind::Negation => self.coords.len() == 2,
            CouplingKind::Conjunction | CouplingKind::Disjunction => self.coords.len() == 3,
            _ => true,
        };
        if !arity_ok {
            return bad(format!("wrong number of coordinates for {:?}", self.kind));
        }
        if self.kind == CouplingKind::Halfspace {
            match &self.a {
                Some(a) if a.len() == self.coords.len() && a.iter().any(|&v| v != 0.0) => {}
                _ => return bad("halfspace needs a nonzero normal `a` matching `coords`".into()),
            }
            if self.b.is_none() {
                return bad("halfspace needs an offset `b`".into());
            }
        }
        Ok(())
    }

    /// Linear rows in joint coordinates: `(constraint, is_equality)`.
    pub fn rows(&self, joint_dim: usize) -> Vec<(LinearConstraint, bool)> {
        let lift = |local: &LinearConstraint| {
            let mut normal = vec![0.0; joint_dim];
            for (i, &j) in self.coords.iter().enumerate() {
                normal[j] += local.normal[i];
            }
            LinearConstraint::new(format!("{}:{}", self.id, local.id), normal, local.offset)
        };
        let m = self.coords.len();
        match self.kind {
            CouplingKind::Equal => (1..m)
                .map(|i| {
                    let mut normal = vec![0.0; joint_dim];
                    normal[self.coords[0]] += 1.0;
                    normal[self.coords[i]] -= 1.0;
                    let id = format!("{}:x{}=x{}", self.id, self.coords[0], self.coords[i]);
                    (LinearConstraint::new(id, normal, 0.0), true)
                })
                .collect(),
            CouplingKind::Negation | CouplingKind::Partition => {
                let mut normal = vec![0.0; joint_dim];
                for &j in &self.coords {
                    normal[j] += 1.0;
                }
                let b = self.b.unwrap_or(1.0);
                vec![(LinearConstraint::new(format!("{}:sum={b}", self.id), normal, b), true)]
            }
            CouplingKind::Conjunction | CouplingKind::Disjunction | CouplingKind::Ladder => {
                let rel = match self.kind {
                    CouplingKind::Conjunction => Relation::conjunction(),
                    CouplingKind::Disjunction => Relation::disjunction(),
                    _ => Relation::ladder(m).expect("validated arity"),
                };
                build_polytope(&rel)
                    .halfspaces()
                    .iter()
                    .map(|c| (lift(c), false))
                    .collect()
            }
            CouplingKind::Halfspace => {
                let a = self.a.clone().unwrap_or_default();
                let local = LinearConstraint::new("halfspace", a, self.b.unwrap_or(0.0));
                vec![(lift(&local), false)]
            }
        }
    }

    /// True when the constraint references at least two owners.
    pub fn is_cross_component(&self, ownership: &OwnershipMap) -> bool {
        let first = ownership.owner(self.coords[0]);
        self.coords.iter().any(|&j| ownership.owner(j) != first)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingSet {
    pub constraints: Vec<CouplingConstraint>,
}

impl CouplingSet {
    pub fn new(constraints: Vec<CouplingConstraint>) -> Self {
        Self { constraints }
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn rows(&self, joint_dim: usize) -> Vec<(LinearConstraint, bool)> {
        self.constraints.iter().flat_map(|c| c.rows(joint_dim)).collect()
    }

    /// Constraints that span two or more owners.
    pub fn cross_component<'a>(&'a self, ownership: &'a OwnershipMap) -> impl Iterator<Item = &'a CouplingConstraint> {
        self.constraints.iter().filter(move |c| c.is_cross_component(ownership))
    }

    /// Coupling rows alone, as a polytope inside the unit box.
    pub fn polytope(&self, joint_dim: usize) -> Result<PolytopeSpec> {
        let (eqs, hs): (Vec<_>, Vec<_>) = self.rows(joint_dim).into_iter().partition(|(_, eq)| *eq);
        PolytopeSpec::new(
            joint_dim,
            eqs.into_iter().map(|(c, _)| c).collect(),
            hs.into_iter().map(|(c, _)| c).collect(),
        )
    }
}

/// Components, ownership and coupling of a composed system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSpec {
    components: Vec<LocalStructure>,
    ownership: OwnershipMap,
    coupling: CouplingSet,
}

impl CompositionSpec {
    /// Validates shapes and checks that the joint polytope is nonempty.
    pub fn new(components: Vec<LocalStructure>, ownership: OwnershipMap, coupling: CouplingSet) -> Result<Self> {
        if ownership.components() != components.len() {
            return Err(CoherenceError::InvalidOwnership(format!(
                "ownership refers to {} components, {} given",
                ownership.components(),
                components.len()
            )));
        }
        for (a, comp) in components.iter().enumerate() {
            let owned = ownership.coords_of(a).len();
            if owned != comp.dim() {
                return Err(CoherenceError::InvalidOwnership(format!(
                    "component {a} has dimension {} but owns {owned} coordinates",
                    comp.dim()
                )));
            }
        }
        for c in &coupling.constraints {
            c.validate(ownership.joint_dim())?;
        }
        let spec = Self {
            components,
            ownership,
            coupling,
        };
        if let Some(gap) = spec.feasibility_gap() {
            if gap > 1e-7 {
                return Err(CoherenceError::InfeasibleJoint);
            }
        }
        Ok(spec)
    }

    /// One free component per distinct owner, coupled by `relation` over all
    /// joint coordinates. This is the routed-clique setting where each
    /// specialist quotes only the coordinates it was assigned.
    pub fn routed_clique(relation: &Relation, owners: &[usize]) -> Result<Self> {
        check_dim(relation.arity(), owners.len())?;
        let mut distinct: Vec<usize> = owners.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let remapped: Vec<usize> = owners
            .iter()
            .map(|o| distinct.binary_search(o).expect("present"))
            .collect();
        let ownership = OwnershipMap::from_owners(remapped, distinct.len())?;
        let components = (0..distinct.len())
            .map(|a| LocalStructure::Free {
                dim: ownership.coords_of(a).len(),
            })
            .collect();
        let coupling = CouplingSet::new(vec![CouplingConstraint::new(
            relation.kind().tag(),
            CouplingKind::for_relation(relation.kind()),
            (0..relation.arity()).collect(),
        )]);
        Self::new(components, ownership, coupling)
    }

    /// The catalog relation when the joint polytope is exactly one relation
    /// over all coordinates and every component is free.
    pub fn as_single_relation(&self) -> Option<Relation> {
        if !self.components.iter().all(|c| matches!(c, LocalStructure::Free { .. })) {
            return None;
        }
        let [c] = self.coupling.constraints.as_slice() else {
            return None;
        };
        let m = self.joint_dim();
        if c.coords != (0..m).collect::<Vec<_>>() || c.b.is_some_and(|b| b != 1.0) {
            return None;
        }
        match c.kind {
            CouplingKind::Negation => Some(Relation::negation()),
            CouplingKind::Conjunction => Some(Relation::conjunction()),
            CouplingKind::Disjunction => Some(Relation::disjunction()),
            CouplingKind::Partition => Relation::partition(m).ok(),
            CouplingKind::Ladder => Relation::ladder(m).ok(),
            CouplingKind::Equal => Relation::paraphrase(m).ok(),
            CouplingKind::Halfspace => None,
        }
    }

    pub fn components(&self) -> &[LocalStructure] {
        &self.components
    }

    pub fn ownership(&self) -> &OwnershipMap {
        &self.ownership
    }

    pub fn coupling(&self) -> &CouplingSet {
        &self.coupling
    }

    pub fn joint_dim(&self) -> usize {
        self.ownership.joint_dim()
    }

    /// Component `a`'s local polytope lifted into joint coordinates.
    pub fn lifted_local(&self, a: usize) -> Result<PolytopeSpec> {
        self.components[a]
            .polytope()
            .lift(self.joint_dim(), &self.ownership.coords_of(a), &format!("c{a}/"))
    }

    /// Intersection of the lifted local polytopes (no coupling).
    pub fn product_polytope(&self) -> Result<PolytopeSpec> {
        let mut acc = PolytopeSpec::unit_box(self.joint_dim());
        for a in 0..self.components.len() {
            acc = acc.intersect(&self.lifted_local(a)?)?;
        }
        Ok(acc)
    }

    /// The joint coherent polytope: lifted locals intersected with the coupling.
    pub fn joint_polytope(&self) -> Result<PolytopeSpec> {
        self.product_polytope()?
            .intersect(&self.coupling.polytope(self.joint_dim())?)
    }

    /// Vertices of the product polytope, if small enough to enumerate.
    pub fn product_vertices(&self) -> Result<VertexSet> {
        let n = self.joint_dim();
        if n > MAX_ENUM_DIM {
            return Err(CoherenceError::EnumerationBound {
                dim: n,
                limit: MAX_ENUM_DIM,
            });
        }
        let mut acc: Vec<Vec<f64>> = vec![vec![0.0; n]];
        for (a, comp) in self.components.iter().enumerate() {
            let coords = self.ownership.coords_of(a);
            let local = comp.vertices()?;
            let mut next = Vec::with_capacity(acc.len() * local.len());
            for base in &acc {
                for v in &local.vertices {
                    let mut r = base.clone();
                    for (i, &j) in coords.iter().enumerate() {
                        r[j] = v[i];
                    }
                    next.push(r);
                }
            }
            acc = next;
        }
        Ok(VertexSet { dim: n, vertices: acc })
    }

    /// Distance between the product hull and the coupling set, found by
    /// alternating between the vertex oracle and the coupling projection.
    /// `None` when the product hull is too large to enumerate.
    pub fn feasibility_gap(&self) -> Option<f64> {
        if self.coupling.is_empty() {
            return Some(0.0);
        }
        let verts = self.product_vertices().ok()?;
        if verts.len() > MAX_ORACLE_VERTICES {
            return None;
        }
        let coupling = self.coupling.polytope(self.joint_dim()).ok()?;
        if verts.vertices.iter().any(|v| coupling.max_violation(v) <= 1e-12) {
            return Some(0.0);
        }
        let config = DykstraConfig::default();
        let mut y = verts.centroid();
        let mut gap = f64::INFINITY;
        for _ in 0..2000 {
            let step = project_dykstra(&coupling, &y, &config).ok()?;
            let violation = coupling.max_violation(&step.projected);
            if !step.converged && violation > 1e-7 {
                // the coupling rows cannot be met inside the box at all
                return Some(violation);
            }
            let x = step.projected;
            let next = project_oracle(&verts, &x).ok()?.projected;
            let new_gap = dist(&x, &next);
            let moved = dist(&y, &next);
            y = next;
            gap = new_gap;
            if gap <= 1e-9 || moved <= 1e-13 {
                break;
            }
        }
        Some(gap)
    }
}

/// Runtime certificate of compositional (in)coherence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(rename = "eps_star")]
    pub epsilon_star: f64,
    /// `sqrt(m*) * eps_star`.
    pub exposure_bound: f64,
    pub repaired: Vec<f64>,
    pub binding: Vec<String>,
    pub inputs_locally_coherent: bool,
    /// The composed quote that was certified.
    pub composed: Vec<f64>,
}

/// Owner-selected aggregation of component quotes.
pub fn aggregate(comp: &CompositionSpec, locals: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_dim(comp.components.len(), locals.len())?;
    for (local, structure) in locals.iter().zip(&comp.components) {
        check_dim(structure.dim(), local.len())?;
    }
    let own = &comp.ownership;
    Ok((0..comp.joint_dim())
        .map(|j| locals[own.owner(j)][own.local_index(j)])
        .collect())
}

/// Selects coordinate `j` of full-length panel quote `owners[j]`.
pub fn select_from_panel(panel: &[Vec<f64>], owners: &[usize]) -> Result<Vec<f64>> {
    owners
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let quote = panel.get(a).ok_or_else(|| {
                CoherenceError::InvalidOwnership(format!("owner {a} not in panel of {}", panel.len()))
            })?;
            quote.get(j).copied().ok_or(CoherenceError::DimensionMismatch {
                expected: owners.len(),
                got: quote.len(),
            })
        })
        .collect()
}

fn locally_coherent(comp: &CompositionSpec, locals: &[Vec<f64>]) -> bool {
    locals
        .iter()
        .zip(&comp.components)
        .all(|(q, s)| s.polytope().max_violation(q) <= DEFAULT_MEMBER_TOL)
}

fn repair_locals(comp: &CompositionSpec, locals: &[Vec<f64>], config: &DykstraConfig) -> Result<Vec<Vec<f64>>> {
    locals
        .iter()
        .zip(&comp.components)
        .map(|(q, s)| Ok(s.project(q, config)?.projected))
        .collect()
}

/// L2 projection onto the joint polytope, using the relation's own route
/// when the composition is a single routed clique.
pub fn project_joint(comp: &CompositionSpec, x: &[f64], config: &DykstraConfig) -> Result<ProjectionResult> {
    match comp.as_single_relation() {
        Some(rel) => project_relation(&rel, x, config),
        None => project_hierarchical(comp, x, config),
    }
}

/// Certificate for an already composed joint quote (no local repair).
pub fn certify_composed(
    comp: &CompositionSpec,
    composed: &[f64],
    inputs_locally_coherent: bool,
    config: &DykstraConfig,
) -> Result<Certificate> {
    check_dim(comp.joint_dim(), composed.len())?;
    let proj = project_joint(comp, composed, config)?;
    let eps = floor_residual(proj.residual);
    let binding = if eps > 0.0 {
        comp.joint_polytope()?.violated(composed, REPORT_FLOOR)
    } else {
        Vec::new()
    };
    Ok(Certificate {
        epsilon_star: eps,
        exposure_bound: (comp.joint_dim() as f64).sqrt() * eps,
        repaired: proj.projected,
        binding,
        inputs_locally_coherent,
        composed: composed.to_vec(),
    })
}

/// Composes raw component quotes without local repair and certifies the result.
pub fn certify_raw(comp: &CompositionSpec, locals: &[Vec<f64>], config: &DykstraConfig) -> Result<Certificate> {
    let composed = aggregate(comp, locals)?;
    certify_composed(comp, &composed, locally_coherent(comp, locals), config)
}

/// The compositional residual: repair locally, compose, project jointly.
pub fn residual(comp: &CompositionSpec, locals: &[Vec<f64>], config: &DykstraConfig) -> Result<Certificate> {
    check_dim(comp.components.len(), locals.len())?;
    let coherent =
        locals.iter().zip(&comp.components).all(|(q, s)| q.len() == s.dim()) && locally_coherent(comp, locals);
    let repaired = repair_locals(comp, locals, config)?;
    let composed = aggregate(comp, &repaired)?;
    certify_composed(comp, &composed, coherent, config)
}

/// Largest violation of one coupling row over the product polytope, with a
/// maximizing vertex. Equality rows are checked in both directions.
fn max_row_violation(comp: &CompositionSpec, row: &LinearConstraint, equality: bool) -> Result<(f64, Vec<f64>)> {
    let n = comp.joint_dim();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let signs: &[f64] = if equality { &[1.0, -1.0] } else { &[1.0] };
    for &sign in signs {
        let mut r = vec![0.0; n];
        let mut value = -sign * row.offset;
        for (a, structure) in comp.components.iter().enumerate() {
            let coords = comp.ownership.coords_of(a);
            let local = structure.vertices()?;
            let score = |v: &[f64]| -> f64 {
                coords
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| sign * row.normal[j] * v[i])
                    .sum()
            };
            let (_, v) = local
                .vertices
                .iter()
                .map(|v| (score(v), v))
                .fold(
                    (f64::NEG_INFINITY, None),
                    |acc, (s, v)| if s > acc.0 { (s, Some(v)) } else { acc },
                );
            let v = v.ok_or_else(|| CoherenceError::Internal(format!("component {a} has no vertices")))?;
            value += score(v);
            for (i, &j) in coords.iter().enumerate() {
                r[j] = v[i];
            }
        }
        if value > best.0 {
            best = (value, r);
        }
    }
    Ok(best)
}

/// Whether local coherence alone implies joint coherence, i.e. every
/// coupling row is redundant over the product polytope.
pub fn is_product_structured(comp: &CompositionSpec) -> Result<bool> {
    if comp.coupling.is_empty() {
        return Ok(true);
    }
    for (row, eq) in comp.coupling.rows(comp.joint_dim()) {
        let (violation, _) = max_row_violation(comp, &row, eq)?;
        if violation > DEFAULT_MEMBER_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Locally coherent component quotes whose composition has positive residual.
pub fn construct_witness(comp: &CompositionSpec, config: &DykstraConfig) -> Result<(Vec<Vec<f64>>, Certificate)> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (row, eq) in comp.coupling.rows(comp.joint_dim()) {
        let (violation, r) = max_row_violation(comp, &row, eq)?;
        if best.as_ref().is_none_or(|b| violation > b.0) {
            best = Some((violation, r));
        }
    }
    let (violation, r) = match best {
        Some(b) if b.0 > DEFAULT_MEMBER_TOL => b,
        _ => return Err(CoherenceError::ProductStructured),
    };
    let locals: Vec<Vec<f64>> = (0..comp.components.len())
        .map(|a| comp.ownership.coords_of(a).iter().map(|&j| r[j]).collect())
        .collect();
    let cert = residual(comp, &locals, config)?;
    if cert.epsilon_star <= 0.0 {
        return Err(CoherenceError::Internal(format!(
            "witness violates a coupling row by {violation:.3e} but has zero residual"
        )));
    }
    Ok((locals, cert))
}

/// Distance from the composed, locally repaired quote to a jointly coherent
/// reference. Always at least the residual.
pub fn disagreement_bound(
    comp: &CompositionSpec,
    locals: &[Vec<f64>],
    reference: &[f64],
    config: &DykstraConfig,
) -> Result<f64> {
    check_dim(comp.joint_dim(), reference.len())?;
    let violation = comp.joint_polytope()?.max_violation(reference);
    if violation > DEFAULT_MEMBER_TOL {
        return Err(CoherenceError::ReferenceNotCoherent { violation });
    }
    let repaired = repair_locals(comp, locals, config)?;
    let composed = aggregate(comp, &repaired)?;
    Ok(dist(&composed, reference))
}

/// `|a . delta| / ||a||`: the part of a disagreement along a constraint normal.
pub fn normal_disagreement(normal: &[f64], delta: &[f64]) -> f64 {
    dot(normal, delta).abs() / dot(normal, normal).sqrt()
}

/// Index of the first candidate joint quote that already lies in the joint
/// polytope, e.g. a component that answered the whole clique.
pub fn pick_reference(comp: &CompositionSpec, candidates: &[Vec<f64>]) -> Result<Option<usize>> {
    let joint = comp.joint_polytope()?;
    Ok(candidates
        .iter()
        .position(|c| c.len() == comp.joint_dim() && joint.max_violation(c) <= DEFAULT_MEMBER_TOL))
}

/// Per-component share of the residual: L2 norm of the repair restricted to
/// the coordinates each component owns.
pub fn attribute(comp: &CompositionSpec, cert: &Certificate) -> Vec<f64> {
    let mut sq = vec![0.0; comp.components.len()];
    if cert.epsilon_star > 0.0 {
        for j in 0..comp.joint_dim() {
            let d = cert.composed[j] - cert.repaired[j];
            sq[comp.ownership.owner(j)] += d * d;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}
