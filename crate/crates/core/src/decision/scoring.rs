use crate::error::{check_dim, CoherenceError, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Per-coordinate mean squared error against binary labels.
pub fn brier(q: &[f64], labels: &[u8]) -> f64 {
    let m = q.len() as f64;
    q.iter().zip(labels).map(|(p, &y)| (p - y as f64).powi(2)).sum::<f64>() / m
}

/// Murphy decomposition over equal-width bins.
///
/// `rel` is the generalized reliability, which folds the within-bin terms in
/// so that `rel - res + unc == brier` exactly; `rel_binned`,
/// `within_bin_variance` and `within_bin_covariance` are its parts
/// (`rel = rel_binned + within_bin_variance - 2 * within_bin_covariance`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MurphyDecomposition {
    pub rel: f64,
    pub res: f64,
    pub unc: f64,
    pub brier: f64,
    pub rel_binned: f64,
    pub within_bin_variance: f64,
    pub within_bin_covariance: f64,
}

pub fn murphy(forecasts: &[f64], labels: &[u8], n_bins: usize) -> Result<MurphyDecomposition> {
    if n_bins < 2 {
        return Err(CoherenceError::InvalidArgument(format!(
            "need at least 2 bins, got {n_bins}"
        )));
    }
    check_dim(forecasts.len(), labels.len())?;
    if forecasts.is_empty() {
        return Err(CoherenceError::InsufficientData { needed: 1, have: 0 });
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(CoherenceError::InvalidArgument("labels must be 0 or 1".into()));
    }
    let n = forecasts.len() as f64;
    let bin_of = |f: f64| ((f.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
    let mut count = vec![0.0; n_bins];
    let mut sum_f = vec![0.0; n_bins];
    let mut sum_o = vec![0.0; n_bins];
    for (&f, &y) in forecasts.iter().zip(labels) {
        let b = bin_of(f);
        count[b] += 1.0;
        sum_f[b] += f;
        sum_o[b] += y as f64;
    }
    let mean_f: Vec<f64> = (0..n_bins)
        .map(|b| if count[b] > 0.0 { sum_f[b] / count[b] } else { 0.0 })
        .collect();
    let mean_o: Vec<f64> = (0..n_bins)
        .map(|b| if count[b] > 0.0 { sum_o[b] / count[b] } else { 0.0 })
        .collect();
    let base = sum_o.iter().sum::<f64>() / n;
    let (mut wbv, mut wbc, mut brier) = (0.0, 0.0, 0.0);
    for (&f, &y) in forecasts.iter().zip(labels) {
        let b = bin_of(f);
        let o = y as f64;
        wbv += (f - mean_f[b]).powi(2);
        wbc += (f - mean_f[b]) * (o - mean_o[b]);
        brier += (f - o).powi(2);
    }
    let rel_binned: f64 = (0..n_bins)
        .map(|b| count[b] * (mean_f[b] - mean_o[b]).powi(2))
        .sum::<f64>()
        / n;
    let res: f64 = (0..n_bins).map(|b| count[b] * (mean_o[b] - base).powi(2)).sum::<f64>() / n;
    let (wbv, wbc) = (wbv / n, wbc / n);
    Ok(MurphyDecomposition {
        rel: rel_binned + wbv - 2.0 * wbc,
        res,
        unc: base * (1.0 - base),
        brier: brier / n,
        rel_binned,
        within_bin_variance: wbv,
        within_bin_covariance: wbc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DieboldMariano {
    pub stat: f64,
    pub p_value: f64,
    pub mean_differential: f64,
    pub n: usize,
}

/// Paired test of equal expected loss: mean of `loss_a - loss_b` over its
/// lag-0 standard error, with a two-sided normal p-value.
pub fn diebold_mariano(loss_a: &[f64], loss_b: &[f64]) -> Result<DieboldMariano> {
    check_dim(loss_a.len(), loss_b.len())?;
    let n = loss_a.len();
    if n < 30 {
        return Err(CoherenceError::InsufficientData { needed: 30, have: n });
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let gamma0 = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let scale = loss_a.iter().chain(loss_b).map(|v| v.abs()).sum::<f64>() / nf;
    if gamma0.sqrt() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        if mean.abs() <= 1e-12 * scale {
            return Ok(DieboldMariano {
                stat: 0.0,
                p_value: 1.0,
                mean_differential: 0.0,
                n,
            });
        }
        return Err(CoherenceError::Degenerate(format!(
            "loss differential is constant ({mean}); the statistic is undefined"
        )));
    }
    let stat = mean / (gamma0 / nf).sqrt();
    let normal = Normal::standard();
    let p_value = (2.0 * (1.0 - normal.cdf(stat.abs()))).clamp(0.0, 1.0);
    Ok(DieboldMariano {
        stat,
        p_value,
        mean_differential: mean,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brier_of_fig1_quotes() {
        let y = [0, 1, 0, 0];
        assert_abs_diff_eq!(brier(&[0.39, 0.73, 0.67, 0.71], &y), 0.2945, epsilon = 1e-12);
        assert_abs_diff_eq!(brier(&[0.015, 0.355, 0.295, 0.335], &y), 0.153875, epsilon = 1e-12);
    }

    #[test]
    fn murphy_edge_cases() {
        let y = [1, 0, 1, 0, 0, 1, 1, 0];
        let d = murphy(&[0.5; 8], &y, 10).unwrap();
        assert_abs_diff_eq!(d.rel, 0.0, epsilon = 1e-15);
        let perfect: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let d = murphy(&perfect, &y, 10).unwrap();
        assert_abs_diff_eq!(d.brier, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.res, d.unc, epsilon = 1e-15);
        assert!(murphy(&[0.5], &[1], 1).is_err());
    }

    #[test]
    fn murphy_identity_with_spread_bins() {
        let f = [0.05, 0.12, 0.33, 0.38, 0.61, 0.64, 0.9, 0.97, 0.2, 0.45];
        let y = [0, 1, 0, 1, 1, 0, 1, 1, 0, 0];
        let d = murphy(&f, &y, 3).unwrap();
        assert_abs_diff_eq!(d.rel - d.res + d.unc, d.brier, epsilon = 1e-12);
    }

    #[test]
    fn dm_edge_cases() {
        let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let r = diebold_mariano(&a, &a).unwrap();
        assert_eq!((r.stat, r.p_value), (0.0, 1.0));
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!(matches!(diebold_mariano(&b, &a), Err(CoherenceError::Degenerate(_))));
        assert!(matches!(
            diebold_mariano(&a[..10], &a[..10]),
            Err(CoherenceError::InsufficientData { .. })
        ));
    }
}
