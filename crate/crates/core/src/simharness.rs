//! Synthetic specialist panels and routed ensembles.
//!
//! A [`PanelModel`] turns a coherent truth `p*` into `k` specialist quotes:
//! each specialist's population quote is `clip(p* + bias + noise)`, which is
//! then estimated from `K` Bernoulli samples per question and repaired
//! locally. [`run_ensemble`] routes every coordinate of a clique to one
//! specialist, composes, certifies and repairs, reporting all four ablation
//! operators per `(clique, seed)` cell.

use crate::composition::{certify_composed, CompositionSpec};
use crate::decision::{brier, exposure, BetRecord};
use crate::error::{CoherenceError, Result};
use crate::polytope::{build_polytope, enumerate_vertices, Clique, Relation, RelationKind};
use crate::projection::{project_relation, DykstraConfig, REPORT_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the truth `p*` is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TruthModel {
    /// Dirichlet weights over the polytope's vertices, so `p*` is coherent.
    Coherent { concentration: f64 },
    /// Uniform in the unit box, redrawn until it violates the relation by at
    /// least `margin`; labels are then drawn independently per coordinate.
    Adversarial { margin: f64 },
    /// A fixed quote used for every clique of matching size.
    Fixed { quote: Vec<f64> },
}

impl Default for TruthModel {
    fn default() -> Self {
        TruthModel::Coherent { concentration: 1.0 }
    }
}

/// Specialist biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bias {
    /// One constant offset per specialist.
    Constant(Vec<f64>),
    /// One offset per specialist and coordinate.
    PerCoordinate(Vec<Vec<f64>>),
}

impl Bias {
    fn offset(&self, specialist: usize, coord: usize) -> f64 {
        match self {
            Bias::Constant(b) => b.get(specialist).copied().unwrap_or(0.0),
            Bias::PerCoordinate(b) => b.get(specialist).and_then(|r| r.get(coord)).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelModel {
    /// Panel size.
    pub k: usize,
    /// Standard deviation of per-coordinate Gaussian noise.
    pub sigma: f64,
    /// Samples per question; `None` uses the population quote directly.
    pub k_samples: Option<u64>,
    pub bias: Bias,
    pub truth: TruthModel,
}

impl Default for PanelModel {
    fn default() -> Self {
        Self {
            k: 4,
            sigma: 0.05,
            k_samples: Some(16),
            bias: Bias::Constant(vec![0.0; 4]),
            truth: TruthModel::default(),
        }
    }
}

impl PanelModel {
    /// All problems with the model, for a given set of cliques.
    pub fn problems(&self, relations: &[Relation]) -> Vec<String> {
        let mut out = Vec::new();
        if self.k == 0 {
            out.push("panel size k must be at least 1".into());
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            out.push(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.k_samples == Some(0) {
            out.push("k_samples must be positive".into());
        }
        match &self.bias {
            Bias::Constant(b) if b.len() != self.k => {
                out.push(format!("bias has {} entries for a panel of {}", b.len(), self.k))
            }
            Bias::PerCoordinate(rows) => {
                if rows.len() != self.k {
                    out.push(format!("bias has {} rows for a panel of {}", rows.len(), self.k));
                }
                for r in relations {
                    if rows.iter().any(|row| row.len() != r.arity()) {
                        out.push(format!(
                            "per-coordinate bias rows do not match a clique of size {}",
                            r.arity()
                        ));
                        break;
                    }
                }
            }
            _ => {}
        }
        match &self.truth {
            TruthModel::Coherent { concentration } if !(*concentration > 0.0) => {
                out.push(format!("Dirichlet concentration must be positive, got {concentration}"))
            }
            TruthModel::Adversarial { margin } if !(*margin > 0.0 && *margin < 0.5) => {
                out.push(format!("adversarial margin must be in (0, 0.5), got {margin}"))
            }
            TruthModel::Fixed { quote } => {
                for r in relations {
                    if quote.len() != r.arity() {
                        out.push(format!(
                            "fixed truth has length {} but a clique has size {}",
                            quote.len(),
                            r.arity()
                        ));
                        break;
                    }
                }
            }
            _ => {}
        }
        out
    }

    pub fn validate(&self, relations: &[Relation]) -> Result<()> {
        let problems = self.problems(relations);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CoherenceError::InvalidArgument(problems.join("; ")))
        }
    }
}

/// A sampled truth with the label distribution that goes with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub quote: Vec<f64>,
    /// Vertex weights when the truth is a mixture of outcomes.
    pub vertex_weights: Option<Vec<(Vec<f64>, f64)>>,
}

impl Truth {
    /// One resolved outcome: a vertex for coherent truths, independent
    /// Bernoulli draws otherwise.
    pub fn sample_labels(&self, rng: &mut impl Rng) -> Vec<u8> {
        match &self.vertex_weights {
            Some(vw) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, w) in vw {
                    acc += w;
                    if u < acc {
                        return v.iter().map(|&x| x as u8).collect();
                    }
                }
                vw.last()
                    .map(|(v, _)| v.iter().map(|&x| x as u8).collect())
                    .unwrap_or_default()
            }
            None => self.quote.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect(),
        }
    }
}

pub fn sample_truth(model: &TruthModel, relation: &Relation, rng: &mut impl Rng) -> Result<Truth> {
    match model {
        TruthModel::Coherent { concentration } => {
            let verts = enumerate_vertices(relation)?;
            let gamma = Gamma::new(*concentration, 1.0)
                .map_err(|e| CoherenceError::InvalidArgument(format!("concentration: {e}")))?;
            let raw: Vec<f64> = verts.vertices.iter().map(|_| gamma.sample(rng)).collect();
            let total: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let mut quote = vec![0.0; relation.arity()];
            for (v, w) in verts.vertices.iter().zip(&weights) {
                for (q, x) in quote.iter_mut().zip(v) {
                    *q += w * x;
                }
            }
            Ok(Truth {
                quote,
                vertex_weights: Some(verts.vertices.into_iter().zip(weights).collect()),
            })
        }
        TruthModel::Adversarial { margin } => {
            let spec = build_polytope(relation);
            for _ in 0..10_000 {
                let q: Vec<f64> = (0..relation.arity()).map(|_| rng.random()).collect();
                if spec.max_violation(&q) >= *margin {
                    return Ok(Truth {
                        quote: q,
                        vertex_weights: None,
                    });
                }
            }
            Err(CoherenceError::InvalidArgument(format!(
                "could not draw an incoherent truth with margin {margin} for {}",
                relation.kind()
            )))
        }
        TruthModel::Fixed { quote } => {
            crate::error::check_dim(relation.arity(), quote.len())?;
            let coherent = build_polytope(relation).max_violation(quote) <= 1e-12;
            if coherent {
                // any vertex decomposition gives labels with the right marginals
                let verts = enumerate_vertices(relation)?;
                let weights = crate::projection::oracle::hull_weights(&verts, quote)?;
                Ok(Truth {
                    quote: quote.clone(),
                    vertex_weights: Some(weights),
                })
            } else {
                Ok(Truth {
                    quote: quote.clone(),
                    vertex_weights: None,
                })
            }
        }
    }
}

/// One panel: population quotes, their `K`-sample estimates and the
/// locally repaired estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub population: Vec<Vec<f64>>,
    pub raw: Vec<Vec<f64>>,
    pub repaired: Vec<Vec<f64>>,
}

/// Population quotes for a panel around `truth`.
pub fn population_quotes(model: &PanelModel, truth: &[f64], rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let noise = Normal::new(0.0, model.sigma).map_err(|e| CoherenceError::InvalidArgument(format!("sigma: {e}")))?;
    Ok((0..model.k)
        .map(|a| {
            truth
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let eps = if model.sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                    (p + model.bias.offset(a, j) + eps).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect())
}

/// `K`-sample empirical marginals of population quotes.
pub fn sample_marginals(population: &[Vec<f64>], k_samples: Option<u64>, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let Some(k) = k_samples else {
        return Ok(population.to_vec());
    };
    population
        .iter()
        .map(|q| {
            q.iter()
                .map(|&p| {
                    let b =
                        Binomial::new(k, p).map_err(|e| CoherenceError::InvalidArgument(format!("binomial: {e}")))?;
                    Ok(b.sample(rng) as f64 / k as f64)
                })
                .collect()
        })
        .collect()
}

/// Population quotes, `K`-sample estimates and local repairs for one clique.
pub fn generate_panel(model: &PanelModel, relation: &Relation, truth: &[f64], seed: u64) -> Result<Panel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_panel_with(model, relation, truth, &mut rng)
}

pub fn generate_panel_with(
    model: &PanelModel,
    relation: &Relation,
    truth: &[f64],
    rng: &mut impl Rng,
) -> Result<Panel> {
    crate::error::check_dim(relation.arity(), truth.len())?;
    let population = population_quotes(model, truth, rng)?;
    let raw = sample_marginals(&population, model.k_samples, rng)?;
    let config = DykstraConfig::default();
    let repaired = raw
        .iter()
        .map(|q| Ok(project_relation(relation, q, &config)?.projected))
        .collect::<Result<_>>()?;
    Ok(Panel {
        population,
        raw,
        repaired,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingKind {
    /// Owners drawn i.i.d. uniformly per coordinate.
    RandomUniform,
    /// Owners follow the relation's structure (operands vs. result).
    StructuredByRelation,
    /// One specialist owns every coordinate.
    SingleOwner,
}

impl std::str::FromStr for RoutingKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random-uniform" | "random" => Ok(Self::RandomUniform),
            "structured-by-relation" | "structured" => Ok(Self::StructuredByRelation),
            "single-owner" | "single" => Ok(Self::SingleOwner),
            other => Err(format!("unknown routing policy `{other}`")),
        }
    }
}

/// Owner for each coordinate of a clique.
pub fn route(kind: RoutingKind, relation: &Relation, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let m = relation.arity();
    match kind {
        RoutingKind::RandomUniform => (0..m).map(|_| rng.random_range(0..k)).collect(),
        RoutingKind::SingleOwner => vec![rng.random_range(0..k); m],
        RoutingKind::StructuredByRelation => {
            let s = rng.random_range(0..k);
            let next = (s + 1) % k;
            match relation.kind() {
                RelationKind::Negation => vec![s, next],
                RelationKind::Conjunction | RelationKind::Disjunction => vec![s, s, next],
                RelationKind::Partition | RelationKind::Ladder | RelationKind::Paraphrase => vec![s; m],
            }
        }
    }
}

/// The four ablation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    /// Raw composed: no local or joint repair.
    A,
    /// Locally repaired, then composed.
    B,
    /// Raw composed, then jointly projected.
    C,
    /// Locally repaired, composed, then jointly projected.
    D,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::A, Operator::B, Operator::C, Operator::D];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorResult {
    pub operator: Operator,
    pub quote: Vec<f64>,
    pub eps_star: f64,
    pub exposure: f64,
    pub brier: f64,
}

/// Everything recorded for one `(clique, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub clique_id: String,
    pub seed: u64,
    pub relation: Relation,
    pub owners: Vec<usize>,
    pub truth: Vec<f64>,
    pub labels: Vec<u8>,
    pub operators: Vec<OperatorResult>,
    /// Binding constraints of the operator-B certificate.
    pub binding: Vec<String>,
}

impl EnsembleRecord {
    pub fn operator(&self, op: Operator) -> &OperatorResult {
        self.operators
            .iter()
            .find(|r| r.operator == op)
            .expect("all operators recorded")
    }

    /// The bet comparing the locally repaired composition with its joint repair.
    pub fn bet(&self) -> BetRecord {
        let b = self.operator(Operator::B);
        BetRecord {
            clique_id: self.clique_id.clone(),
            seed: self.seed,
            naive: b.quote.clone(),
            repaired: self.operator(Operator::D).quote.clone(),
            labels: self.labels.clone(),
            eps_star: b.eps_star,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub routing: RoutingKind,
    pub n_seeds: u64,
    pub master_seed: u64,
    pub projection: DykstraConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            routing: RoutingKind::RandomUniform,
            n_seeds: 4,
            master_seed: 0,
            projection: DykstraConfig::default(),
        }
    }
}

fn cell_rng(master_seed: u64, cell: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(cell);
    rng
}

fn operator_result(
    op: Operator,
    comp: &CompositionSpec,
    relation: &Relation,
    quote: Vec<f64>,
    labels: &[u8],
    config: &DykstraConfig,
) -> Result<(OperatorResult, Vec<f64>, Vec<String>)> {
    let cert = certify_composed(comp, &quote, true, config)?;
    let result = OperatorResult {
        operator: op,
        exposure: exposure(relation, &quote)?,
        brier: brier(&quote, labels),
        eps_star: cert.epsilon_star,
        quote,
    };
    Ok((result, cert.repaired, cert.binding))
}

/// Runs one cell with its own RNG stream.
pub fn run_cell(
    clique: &Clique,
    model: &PanelModel,
    config: &EnsembleConfig,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<EnsembleRecord> {
    let relation = &clique.relation;
    let truth = sample_truth(&model.truth, relation, rng)?;
    let panel = generate_panel_with(model, relation, &truth.quote, rng)?;
    let owners = route(config.routing, relation, model.k, rng);
    let labels = match &clique.labels {
        Some(l) => l.clone(),
        None => truth.sample_labels(rng),
    };
    let comp = CompositionSpec::routed_clique(relation, &owners)?;
    let select = |quotes: &[Vec<f64>]| -> Vec<f64> { owners.iter().enumerate().map(|(j, &a)| quotes[a][j]).collect() };
    let cfg = &config.projection;
    let (a, a_proj, _) = operator_result(Operator::A, &comp, relation, select(&panel.raw), &labels, cfg)?;
    let (b, b_proj, binding) = operator_result(Operator::B, &comp, relation, select(&panel.repaired), &labels, cfg)?;
    let (c, _, _) = operator_result(Operator::C, &comp, relation, a_proj, &labels, cfg)?;
    let (d, _, _) = operator_result(Operator::D, &comp, relation, b_proj, &labels, cfg)?;
    Ok(EnsembleRecord {
        clique_id: clique.id.clone(),
        seed,
        relation: *relation,
        owners,
        truth: truth.quote,
        labels,
        operators: vec![a, b, c, d],
        binding,
    })
}

/// Every `(clique, seed)` cell, in clique-major order.
pub fn run_ensemble(cliques: &[Clique], model: &PanelModel, config: &EnsembleConfig) -> Result<Vec<EnsembleRecord>> {
    let relations: Vec<Relation> = cliques.iter().map(|c| c.relation).collect();
    model.validate(&relations)?;
    config.projection.validate()?;
    let n_seeds = config.n_seeds;
    (0..cliques.len() as u64 * n_seeds)
        .into_par_iter()
        .map(|cell| {
            let clique = &cliques[(cell / n_seeds) as usize];
            let seed = cell % n_seeds;
            run_cell(clique, model, config, seed, &mut cell_rng(config.master_seed, cell))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessRow {
    pub relation: Relation,
    /// Fraction of cells with a reportable residual.
    pub prevalence: f64,
    pub mean_eps_star: f64,
    pub n: usize,
}

/// Residual prevalence and size per relation under one panel model and
/// random-uniform routing (operator B).
pub fn hardness_experiment(
    model: &PanelModel,
    relations: &[Relation],
    n: u64,
    master_seed: u64,
) -> Result<Vec<HardnessRow>> {
    relations
        .iter()
        .enumerate()
        .map(|(i, rel)| {
            let cliques = vec![Clique::anonymous(format!("{}-{i}", rel.kind()), *rel)];
            let config = EnsembleConfig {
                routing: RoutingKind::RandomUniform,
                n_seeds: n,
                master_seed: master_seed.wrapping_add(i as u64),
                ..Default::default()
            };
            let records = run_ensemble(&cliques, model, &config)?;
            let eps: Vec<f64> = records.iter().map(|r| r.operator(Operator::B).eps_star).collect();
            let count = eps.len().max(1) as f64;
            Ok(HardnessRow {
                relation: *rel,
                prevalence: eps.iter().filter(|&&e| e >= REPORT_FLOOR).count() as f64 / count,
                mean_eps_star: eps.iter().sum::<f64>() / count,
                n: eps.len(),
            })
        })
        .collect()
}

/// Scenario file for `simulate`.
///
/// ```toml
/// seed = 0
/// n_seeds = 4
/// routing = "random-uniform"
///
/// [panel]
/// k = 4
/// sigma = 0.05
/// k_samples = 16
/// bias = [0.05, -0.05, 0.02, -0.02]
/// truth = { mode = "coherent", concentration = 1.0 }
///
/// [[cliques]]
/// kind = "partition"
/// m = 4
/// count = 10
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: u64,
    #[serde(default = "default_routing")]
    pub routing: String,
    pub panel: PanelConfig,
    pub cliques: Vec<CliqueGroup>,
}

fn default_n_seeds() -> u64 {
    4
}

fn default_routing() -> String {
    "random-uniform".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub k: usize,
    #[serde(default)]
    pub sigma: f64,
    /// Omit for the population (infinite-sample) limit.
    #[serde(default)]
    pub k_samples: Option<u64>,
    #[serde(default)]
    pub bias: Option<Bias>,
    #[serde(default)]
    pub truth: Option<TruthModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliqueGroup {
    pub kind: String,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub id_prefix: Option<String>,
}

fn default_count() -> usize {
    1
}

/// A scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cliques: Vec<Clique>,
    pub model: PanelModel,
    pub config: EnsembleConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoherenceError::InvalidArgument(format!("scenario: {e}")))
    }

    /// Builds the scenario, listing every problem found rather than the first.
    pub fn build(&self) -> std::result::Result<Scenario, Vec<String>> {
        let mut problems = Vec::new();
        let routing = self.routing.parse::<RoutingKind>().map_err(|e| problems.push(e)).ok();
        if self.n_seeds == 0 {
            problems.push("n_seeds must be positive".into());
        }
        if self.cliques.is_empty() {
            problems.push("at least one [[cliques]] group is required".into());
        }
        let mut cliques = Vec::new();
        for (g, group) in self.cliques.iter().enumerate() {
            let Some(kind) = RelationKind::from_tag(&group.kind) else {
                problems.push(format!("cliques[{g}]: unknown relation kind `{}`", group.kind));
                continue;
            };
            let m = group.m.or(kind.fixed_arity()).unwrap_or(0);
            let relation = match Relation::new(kind, m) {
                Ok(r) => r,
                Err(e) => {
                    problems.push(format!("cliques[{g}]: {e}"));
                    continue;
                }
            };
            if group.count == 0 {
                problems.push(format!("cliques[{g}]: count must be positive"));
            }
            let prefix = group
                .id_prefix
                .clone()
                .unwrap_or_else(|| format!("{}{m}-g{g}", kind.tag()));
            for i in 0..group.count {
                cliques.push(Clique::anonymous(format!("{prefix}-{i}"), relation));
            }
        }
        let model = PanelModel {
            k: self.panel.k,
            sigma: self.panel.sigma,
            k_samples: self.panel.k_samples,
            bias: self
                .panel
                .bias
                .clone()
                .unwrap_or_else(|| Bias::Constant(vec![0.0; self.panel.k])),
            truth: self.panel.truth.clone().unwrap_or_default(),
        };
        let mut relations: Vec<Relation> = cliques.iter().map(|c| c.relation).collect();
        relations.dedup();
        problems.extend(model.problems(&relations));
        if !problems.is_empty() {
            return Err(problems);
        }
        Ok(Scenario {
            cliques,
            model,
            config: EnsembleConfig {
                routing: routing.expect("checked"),
                n_seeds: self.n_seeds,
                master_seed: self.seed,
                projection: DykstraConfig::default(),
            },
        })
    }
}
