use super::regret::BetOutcome;
use super::{AllocationRule, BetRecord};
use crate::error::{CoherenceError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

/// Smallest bet set accepted by [`gate_sweep`].
pub const MIN_GATE_BETS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub rule: AllocationRule,
    /// Harm-capture fractions at which to report operating points.
    pub capture_targets: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            rule: AllocationRule::default(),
            capture_targets: vec![0.9, 0.75, 0.5],
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub target: f64,
    /// Alert when `eps_star >= tau`.
    pub tau: f64,
    pub alert_rate: f64,
    pub capture: f64,
    /// False alerts over non-harmful bets.
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub auc_mean: f64,
    pub auc_sd: f64,
    /// Held-out performance of thresholds chosen on the other folds, averaged.
    pub operating_points: Vec<OperatingPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub n: usize,
    pub n_harm: usize,
    /// Upper-quartile log regret; harmful bets sit at or above it.
    pub harm_threshold: f64,
    pub auc: f64,
    pub table: Vec<OperatingPoint>,
    pub cv: CvReport,
}

/// Mann–Whitney AUC of `scores` against binary `labels` (ties count ½).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoherenceError::Degenerate(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Largest `tau` such that alerting on `score >= tau` captures at least
/// `target` of the positives.
fn threshold_for(scores: &[f64], labels: &[bool], target: f64) -> f64 {
    let mut pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    if pos.is_empty() {
        return f64::INFINITY;
    }
    let need = ((target * pos.len() as f64).ceil() as usize).clamp(1, pos.len());
    pos[need - 1]
}

fn evaluate(scores: &[f64], labels: &[bool], target: f64, tau: f64) -> OperatingPoint {
    let n_pos = labels.iter().filter(|&&l| l).count().max(1) as f64;
    let n_neg = labels.iter().filter(|&&l| !l).count().max(1) as f64;
    let (mut alerts, mut tp, mut fp) = (0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= tau {
            alerts += 1.0;
            if l {
                tp += 1.0
            } else {
                fp += 1.0
            }
        }
    }
    OperatingPoint {
        target,
        tau,
        alert_rate: alerts / scores.len() as f64,
        capture: tp / n_pos,
        fpr: fp / n_neg,
    }
}

/// How well `eps_star` flags bets whose log-payoff regret is in the top
/// quartile (and positive).
pub fn gate_sweep(bets: &[BetRecord], config: &GateConfig) -> Result<GateReport> {
    if bets.len() < MIN_GATE_BETS {
        return Err(CoherenceError::InsufficientData {
            needed: MIN_GATE_BETS,
            have: bets.len(),
        });
    }
    if config.folds < 2 {
        return Err(CoherenceError::InvalidArgument("need at least 2 folds".into()));
    }
    let outcomes: Vec<BetOutcome> = bets
        .iter()
        .map(|b| BetOutcome::score(b, &config.rule))
        .collect::<Result<_>>()?;
    let regret: Vec<f64> = outcomes.iter().map(BetOutcome::log_regret).collect();
    let harm_threshold = Data::new(regret.clone()).upper_quartile();
    let labels: Vec<bool> = regret.iter().map(|&r| r >= harm_threshold && r > 0.0).collect();
    let scores: Vec<f64> = bets.iter().map(|b| b.eps_star).collect();
    let n_harm = labels.iter().filter(|&&l| l).count();
    let overall_auc = auc(&scores, &labels)?;
    let table = config
        .capture_targets
        .iter()
        .map(|&t| evaluate(&scores, &labels, t, threshold_for(&scores, &labels, t)))
        .collect();

    // stratified fold assignment
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fold = vec![0usize; bets.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..bets.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % config.folds;
        }
    }
    let mut aucs = Vec::new();
    let mut points = vec![(0.0, 0.0, 0.0, 0.0, 0usize); config.capture_targets.len()];
    for f in 0..config.folds {
        let split = |test: bool| -> (Vec<f64>, Vec<bool>) {
            (0..bets.len())
                .filter(|&i| (fold[i] == f) == test)
                .map(|i| (scores[i], labels[i]))
                .unzip()
        };
        let (test_s, test_l) = split(true);
        let (train_s, train_l) = split(false);
        if let Ok(a) = auc(&test_s, &test_l) {
            aucs.push(a);
        }
        if !test_l.iter().any(|&l| l) || !train_l.iter().any(|&l| l) {
            continue;
        }
        for (acc, &t) in points.iter_mut().zip(&config.capture_targets) {
            let op = evaluate(&test_s, &test_l, t, threshold_for(&train_s, &train_l, t));
            *acc = (
                acc.0 + op.tau,
                acc.1 + op.alert_rate,
                acc.2 + op.capture,
                acc.3 + op.fpr,
                acc.4 + 1,
            );
        }
    }
    let k = aucs.len().max(1) as f64;
    let auc_mean = aucs.iter().sum::<f64>() / k;
    let auc_sd = if aucs.len() > 1 {
        (aucs.iter().map(|a| (a - auc_mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let operating_points = points
        .iter()
        .zip(&config.capture_targets)
        .map(|(p, &target)| {
            let c = p.4.max(1) as f64;
            OperatingPoint {
                target,
                tau: p.0 / c,
                alert_rate: p.1 / c,
                capture: p.2 / c,
                fpr: p.3 / c,
            }
        })
        .collect();
    Ok(GateReport {
        n: bets.len(),
        n_harm,
        harm_threshold,
        auc: overall_auc,
        table,
        cv: CvReport {
            folds: config.folds,
            auc_mean,
            auc_sd,
            operating_points,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileRow {
    pub quartile: usize,
    pub eps_lo: f64,
    pub eps_hi: f64,
    /// Mean `brier_naive - brier_repaired`.
    pub mean_brier_regret: f64,
    /// Mean log-payoff regret (zero for bets without a unique winner).
    pub mean_log_regret: f64,
    pub n: usize,
}

/// Regret by `eps_star` quartile, splitting bets by rank into four groups.
pub fn quartile_table(bets: &[BetRecord], rule: &AllocationRule) -> Result<Vec<QuartileRow>> {
    if bets.len() < 4 {
        return Err(CoherenceError::InsufficientData {
            needed: 4,
            have: bets.len(),
        });
    }
    let outcomes: Vec<BetOutcome> = bets.iter().map(|b| BetOutcome::score(b, rule)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..bets.len()).collect();
    order.sort_by(|&a, &b| bets[a].eps_star.total_cmp(&bets[b].eps_star));
    let n = bets.len();
    Ok((0..4)
        .map(|q| {
            let group = &order[q * n / 4..(q + 1) * n / 4];
            let c = group.len() as f64;
            QuartileRow {
                quartile: q + 1,
                eps_lo: bets[group[0]].eps_star,
                eps_hi: bets[group[group.len() - 1]].eps_star,
                mean_brier_regret: group.iter().map(|&i| outcomes[i].brier_regret()).sum::<f64>() / c,
                mean_log_regret: group.iter().map(|&i| outcomes[i].log_regret()).sum::<f64>() / c,
                n: group.len(),
            }
        })
        .collect())
}
