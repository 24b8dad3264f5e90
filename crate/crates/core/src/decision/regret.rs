use super::{allocate, brier, AllocationRule, BetRecord};
use crate::error::{CoherenceError, Result};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretConfig {
    pub rule: AllocationRule,
    /// Bootstrap replicates.
    pub bootstrap: usize,
    /// Two-sided interval level.
    pub level: f64,
    pub seed: u64,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self {
            rule: AllocationRule::default(),
            bootstrap: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Per-bet scores under one allocation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetOutcome {
    pub brier_naive: f64,
    pub brier_repaired: f64,
    /// `brier_repaired - brier_naive`; negative means the repair helped.
    pub delta_brier: f64,
    /// `log w_repaired - log w_naive` on the winning coordinate, if there is
    /// a unique winner.
    pub delta_log: Option<f64>,
    pub eps_star: f64,
}

impl BetOutcome {
    pub fn score(bet: &BetRecord, rule: &AllocationRule) -> Result<Self> {
        bet.validate()?;
        let brier_naive = brier(&bet.naive, &bet.labels);
        let brier_repaired = brier(&bet.repaired, &bet.labels);
        let delta_log = bet.unique_yes().map(|i| {
            let w_naive = allocate(rule, &bet.naive)[i].max(rule.floor);
            let w_repaired = allocate(rule, &bet.repaired)[i].max(rule.floor);
            w_repaired.ln() - w_naive.ln()
        });
        Ok(Self {
            brier_naive,
            brier_repaired,
            delta_brier: brier_repaired - brier_naive,
            delta_log,
            eps_star: bet.eps_star,
        })
    }

    /// Log-payoff regret of the naive quote; zero without a unique winner.
    pub fn log_regret(&self) -> f64 {
        self.delta_log.unwrap_or(0.0)
    }

    /// Brier regret of the naive quote: `-delta_brier`.
    pub fn brier_regret(&self) -> f64 {
        -self.delta_brier
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub rule: AllocationRule,
    pub brier_normalization: String,
    pub n_bets: usize,
    pub n_unique_yes: usize,
    pub mean_brier_naive: f64,
    pub mean_brier_repaired: f64,
    pub delta_brier: ConfidenceInterval,
    /// Over unique-YES bets only.
    pub delta_log: Option<ConfidenceInterval>,
    /// Over all bets, counting bets without a unique winner as zero.
    pub delta_log_all: ConfidenceInterval,
}

/// Naive-versus-repaired regret with paired-bootstrap intervals that
/// resample whole `(clique_id, seed)` groups.
pub fn regret(bets: &[BetRecord], config: &RegretConfig) -> Result<RegretSummary> {
    if bets.is_empty() {
        return Err(CoherenceError::InsufficientData { needed: 1, have: 0 });
    }
    if config.bootstrap == 0 || !(config.level > 0.0 && config.level < 1.0) {
        return Err(CoherenceError::InvalidArgument(
            "bootstrap must be positive and level in (0, 1)".into(),
        ));
    }
    let outcomes: Vec<BetOutcome> = bets
        .par_iter()
        .map(|b| BetOutcome::score(b, &config.rule))
        .collect::<Result<_>>()?;
    let mut groups: IndexMap<(&str, u64), Vec<usize>> = IndexMap::new();
    for (i, b) in bets.iter().enumerate() {
        groups.entry((b.clique_id.as_str(), b.seed)).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();

    let delta_brier: Vec<Option<f64>> = outcomes.iter().map(|o| Some(o.delta_brier)).collect();
    let delta_log: Vec<Option<f64>> = outcomes.iter().map(|o| o.delta_log).collect();
    let delta_log_all: Vec<Option<f64>> = outcomes.iter().map(|o| Some(o.log_regret())).collect();
    let n = outcomes.len() as f64;
    Ok(RegretSummary {
        rule: config.rule,
        brier_normalization: "per-coordinate mean".into(),
        n_bets: outcomes.len(),
        n_unique_yes: delta_log.iter().flatten().count(),
        mean_brier_naive: outcomes.iter().map(|o| o.brier_naive).sum::<f64>() / n,
        mean_brier_repaired: outcomes.iter().map(|o| o.brier_repaired).sum::<f64>() / n,
        delta_brier: paired_bootstrap(&delta_brier, &groups, config, 0).expect("every bet has a Brier delta"),
        delta_log: paired_bootstrap(&delta_log, &groups, config, 1),
        delta_log_all: paired_bootstrap(&delta_log_all, &groups, config, 2).expect("every bet has a log regret"),
    })
}

fn mean_of(values: &[Option<f64>], idx: impl Iterator<Item = usize>) -> Option<f64> {
    let (s, c) = idx
        .filter_map(|i| values[i])
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Percentile bootstrap over groups; `None` when no value is present.
fn paired_bootstrap(
    values: &[Option<f64>],
    groups: &[Vec<usize>],
    config: &RegretConfig,
    stream_offset: u64,
) -> Option<ConfidenceInterval> {
    let mean = mean_of(values, 0..values.len())?;
    let mut reps: Vec<f64> = (0..config.bootstrap as u64)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b * 3 + stream_offset);
            let picks = (0..groups.len()).flat_map(|_| groups[rng.random_range(0..groups.len())].iter().copied());
            mean_of(values, picks.collect::<Vec<_>>().into_iter())
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let tail = (1.0 - config.level) / 2.0;
    let pick = |p: f64| -> f64 {
        let pos = p * (reps.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        reps[lo] + (pos - lo as f64) * (reps[hi] - reps[lo])
    };
    let (lo, hi) = if reps.is_empty() {
        (mean, mean)
    } else {
        (pick(tail), pick(1.0 - tail))
    };
    Some(ConfidenceInterval {
        mean,
        lo,
        hi,
        n: values.iter().flatten().count(),
    })
}
