//! Magnitude prediction for the compositional residual.
//!
//! When each coordinate's owner is drawn independently and uniformly from a
//! panel of `k` specialists, the composed quote has mean equal to the panel
//! mean and diagonal covariance `D`. Its expected squared distance to a
//! single binding constraint is the Rayleigh quotient `κ · aᵀDa / ‖a‖²`,
//! where `κ` depends on whether the constraint is an equality (always
//! violated on one side or the other) or an inequality (violated only on
//! one side).

use crate::composition::{project_joint, select_from_panel, CompositionSpec};
use crate::error::{check_dim, CoherenceError, Result};
use crate::polytope::{build_polytope, LinearConstraint, Relation};
use crate::projection::DykstraConfig;
use crate::quote::{dot, Quote};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Owner assignments are enumerated exhaustively up to this many.
pub const EXHAUSTIVE_LIMIT: u64 = 65_536;

/// Slack at the panel mean below which an inequality counts as tight.
const TIGHT_TOL: f64 = 1e-9;

/// Monte Carlo draws are split into this many independently seeded chunks.
const MC_CHUNKS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelStats {
    pub panel_mean: Quote,
    /// Per-coordinate population variance across the panel.
    pub diag_cov: Vec<f64>,
    pub k: usize,
}

impl PanelStats {
    pub fn trace(&self) -> f64 {
        self.diag_cov.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Equality,
    BoundaryInequality,
    InteriorInequality,
    Generic,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::Equality => "equality",
            Regime::BoundaryInequality => "boundary-inequality",
            Regime::InteriorInequality => "interior-inequality",
            Regime::Generic => "generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudePrediction {
    pub predicted_sq_residual: f64,
    pub kappa: f64,
    pub normal: Vec<f64>,
    pub regime: Regime,
}

/// How `κ` is chosen for inequality relations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMode {
    /// The boundary-symmetric value ½.
    #[default]
    Half,
    /// `E[X₊²] / E[X²]` with `X = a·(Π_a − Π̄)` over the panel.
    Empirical,
}

/// Panel mean and diagonal covariance (1/k normalization).
pub fn panel_stats(panel: &[Vec<f64>]) -> Result<PanelStats> {
    let k = panel.len();
    if k < 2 {
        return Err(CoherenceError::InsufficientData { needed: 2, have: k });
    }
    let m = panel[0].len();
    for q in panel {
        check_dim(m, q.len())?;
    }
    let kf = k as f64;
    // offset from the first member so identical panels give exactly zero spread
    let mean: Vec<f64> = (0..m)
        .map(|j| panel[0][j] + panel.iter().map(|q| q[j] - panel[0][j]).sum::<f64>() / kf)
        .collect();
    let diag_cov = (0..m)
        .map(|j| panel.iter().map(|q| (q[j] - mean[j]).powi(2)).sum::<f64>() / kf)
        .collect();
    Ok(PanelStats {
        panel_mean: Quote::raw(mean),
        diag_cov,
        k,
    })
}

fn rayleigh(normal: &[f64], d: &[f64]) -> f64 {
    let num: f64 = normal.iter().zip(d).map(|(a, v)| a * a * v).sum();
    num / dot(normal, normal)
}

/// The halfspace with the smallest slack at `x`; ties go to the lowest id.
fn binding_halfspace<'a>(rows: &'a [LinearConstraint], x: &[f64]) -> Option<(&'a LinearConstraint, f64)> {
    rows.iter()
        .map(|c| (c, -c.slack_value(x)))
        // slack = b - a.x, nonnegative inside
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)))
}

/// Predicted mean squared residual with `κ = ½` for inequality relations.
pub fn predict_magnitude(stats: &PanelStats, relation: &Relation) -> Result<MagnitudePrediction> {
    predict_with(stats, relation, KappaMode::Half, None)
}

/// Like [`predict_magnitude`] but with `κ` estimated from the panel.
pub fn predict_magnitude_empirical(
    stats: &PanelStats,
    relation: &Relation,
    panel: &[Vec<f64>],
) -> Result<MagnitudePrediction> {
    predict_with(stats, relation, KappaMode::Empirical, Some(panel))
}

pub fn predict_with(
    stats: &PanelStats,
    relation: &Relation,
    mode: KappaMode,
    panel: Option<&[Vec<f64>]>,
) -> Result<MagnitudePrediction> {
    let m = relation.arity();
    check_dim(m, stats.diag_cov.len())?;
    let d = &stats.diag_cov;
    if relation.kind().is_equality() {
        let spec = build_polytope(relation);
        if spec.equalities().len() == 1 {
            let normal = spec.equalities()[0].normal.clone();
            return Ok(MagnitudePrediction {
                predicted_sq_residual: rayleigh(&normal, d),
                kappa: 1.0,
                normal,
                regime: Regime::Equality,
            });
        }
        // several equalities: squared distance to the equal-coordinate line
        return Ok(MagnitudePrediction {
            predicted_sq_residual: stats.trace() * (1.0 - 1.0 / m as f64),
            kappa: 1.0,
            normal: vec![1.0; m],
            regime: Regime::Equality,
        });
    }
    let spec = build_polytope(relation);
    let (row, slack) = binding_halfspace(spec.halfspaces(), &stats.panel_mean)
        .ok_or_else(|| CoherenceError::Internal(format!("{relation:?} has no halfspaces")))?;
    let regime = if slack <= TIGHT_TOL {
        Regime::BoundaryInequality
    } else {
        Regime::InteriorInequality
    };
    let kappa = match (mode, panel) {
        (KappaMode::Empirical, Some(panel)) => empirical_kappa(&row.normal, &stats.panel_mean, panel)?,
        (KappaMode::Empirical, None) => {
            return Err(CoherenceError::InvalidArgument(
                "empirical kappa needs the panel".into(),
            ))
        }
        (KappaMode::Half, _) => 0.5,
    };
    Ok(MagnitudePrediction {
        predicted_sq_residual: kappa * rayleigh(&row.normal, d),
        kappa,
        normal: row.normal.clone(),
        regime,
    })
}

/// `E[X₊²] / E[X²]` for `X_a = a·(Π_a − Π̄)`; ½ when the panel has no spread.
pub fn empirical_kappa(normal: &[f64], mean: &[f64], panel: &[Vec<f64>]) -> Result<f64> {
    let mut pos = 0.0;
    let mut all = 0.0;
    for q in panel {
        check_dim(normal.len(), q.len())?;
        let x: f64 = normal
            .iter()
            .zip(q.iter().zip(mean))
            .map(|(a, (v, mu))| a * (v - mu))
            .sum();
        all += x * x;
        if x > 0.0 {
            pos += x * x;
        }
    }
    Ok(if all > 0.0 { (pos / all).clamp(0.0, 1.0) } else { 0.5 })
}

/// The generic `tr(D)` bound, valid for any relation.
pub fn generic_bound(stats: &PanelStats) -> MagnitudePrediction {
    MagnitudePrediction {
        predicted_sq_residual: stats.trace(),
        kappa: 1.0,
        normal: Vec::new(),
        regime: Regime::Generic,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedMagnitude {
    /// Mean of `ε*²` over owner assignments.
    pub mean: f64,
    /// Monte Carlo standard error; zero when enumerated exhaustively.
    pub std_error: f64,
    pub n: u64,
    pub exhaustive: bool,
}

/// Mean `ε*²` under uniform i.i.d. owner selection from `panel`.
///
/// Enumerates all `k^{m*}` assignments when there are at most
/// [`EXHAUSTIVE_LIMIT`]; otherwise draws `n_draws` seeded samples.
pub fn observe_magnitude(
    comp: &CompositionSpec,
    panel: &[Vec<f64>],
    n_draws: u64,
    seed: u64,
    config: &DykstraConfig,
) -> Result<ObservedMagnitude> {
    let k = panel.len();
    if k == 0 {
        return Err(CoherenceError::InsufficientData { needed: 1, have: 0 });
    }
    let m = comp.joint_dim();
    for q in panel {
        check_dim(m, q.len())?;
    }
    let eps_sq = |owners: &[usize]| -> Result<f64> {
        let x = select_from_panel(panel, owners)?;
        Ok(project_joint(comp, &x, config)?.residual.powi(2))
    };
    let total = (k as u64).checked_pow(m as u32).filter(|&t| t <= EXHAUSTIVE_LIMIT);
    if let Some(total) = total {
        let chunk = 1024u64;
        let sums: Vec<f64> = (0..total.div_ceil(chunk))
            .into_par_iter()
            .map(|c| -> Result<f64> {
                let mut owners = vec![0usize; m];
                let mut s = 0.0;
                for idx in c * chunk..((c + 1) * chunk).min(total) {
                    let mut rest = idx;
                    for o in owners.iter_mut() {
                        *o = (rest % k as u64) as usize;
                        rest /= k as u64;
                    }
                    s += eps_sq(&owners)?;
                }
                Ok(s)
            })
            .collect::<Result<_>>()?;
        return Ok(ObservedMagnitude {
            mean: sums.iter().sum::<f64>() / total as f64,
            std_error: 0.0,
            n: total,
            exhaustive: true,
        });
    }
    if n_draws < 2 {
        return Err(CoherenceError::InsufficientData {
            needed: 2,
            have: n_draws as usize,
        });
    }
    let per_chunk = n_draws.div_ceil(MC_CHUNKS);
    let parts: Vec<(f64, f64, u64)> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| -> Result<(f64, f64, u64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let n = per_chunk.min(n_draws.saturating_sub(c * per_chunk));
            let mut owners = vec![0usize; m];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                for o in owners.iter_mut() {
                    *o = rng.random_range(0..k);
                }
                let e = eps_sq(&owners)?;
                s += e;
                s2 += e * e;
            }
            Ok((s, s2, n))
        })
        .collect::<Result<_>>()?;
    let (s, s2, n) = parts
        .iter()
        .fold((0.0, 0.0, 0u64), |acc, p| (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2));
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(ObservedMagnitude {
        mean,
        std_error: (var / nf).sqrt(),
        n,
        exhaustive: false,
    })
}
