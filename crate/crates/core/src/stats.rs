//! Goodness-of-fit tests used by the acceptance suite and the `gof` command.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub sample_sizes: Vec<usize>,
}

fn chi2_sf(stat: f64, df: usize) -> f64 {
    if !stat.is_finite() {
        return 0.0;
    }
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64)
        .map(|d| d.sf(stat))
        .unwrap_or(0.0)
        .clamp(0.0, 1.0)
}

/// Pearson chi-square of observed counts against exact cell probabilities.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<GofReport> {
    if counts.len() != probs.len() {
        return Err(Error::InvalidDistribution(
            "count/probability length mismatch".into(),
        ));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidDistribution("empty sample".into()));
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n as f64;
        if e > 0.0 {
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        } else if c > 0 {
            stat = f64::INFINITY;
        }
    }
    Ok(GofReport {
        test: "chi-square".into(),
        statistic: stat,
        p_value: chi2_sf(stat, cells.saturating_sub(1)),
        sample_sizes: vec![n as usize],
    })
}

/// Chi-square test of homogeneity across the rows of a contingency table.
/// With two rows this is the two-sample chi-square test.
pub fn contingency_chi_square(table: &[Vec<u64>]) -> Result<GofReport> {
    let rows = table.len();
    if rows < 2 {
        return Err(Error::InvalidDistribution(
            "need at least two samples".into(),
        ));
    }
    let cols = table[0].len();
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidDistribution("ragged table".into()));
    }
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    if row_tot.iter().any(|&t| t == 0.0) {
        return Err(Error::InvalidDistribution("empty sample".into()));
    }
    let total: f64 = row_tot.iter().sum();
    let mut stat = 0.0;
    let mut live_cols = 0usize;
    for j in 0..cols {
        let col: f64 = table.iter().map(|r| r[j] as f64).sum();
        if col == 0.0 {
            continue;
        }
        live_cols += 1;
        for (r, rt) in table.iter().zip(&row_tot) {
            let e = rt * col / total;
            stat += (r[j] as f64 - e).powi(2) / e;
        }
    }
    let df = (rows - 1) * live_cols.saturating_sub(1);
    Ok(GofReport {
        test: if rows == 2 {
            "two-sample chi-square".into()
        } else {
            format!("{rows}-sample chi-square")
        },
        statistic: stat,
        p_value: chi2_sf(stat, df),
        sample_sizes: row_tot.iter().map(|&t| t as usize).collect(),
    })
}

/// Kolmogorov limiting survival function `P(K > lambda)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<GofReport> {
    if sample.is_empty() {
        return Err(Error::InvalidDistribution("empty sample".into()));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(GofReport {
        test: "KS".into(),
        statistic: d,
        p_value: ks_p(d, n),
        sample_sizes: vec![xs.len()],
    })
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<GofReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidDistribution("empty sample".into()));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(GofReport {
        test: "two-sample KS".into(),
        statistic: d,
        p_value: ks_p(d, na * nb / (na + nb)),
        sample_sizes: vec![xa.len(), xb.len()],
    })
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// Counts of `values` falling on each of `labels` (exact equality).
pub fn tally(values: &[f64], labels: &[f64]) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; labels.len()];
    for v in values {
        match labels.iter().position(|l| l == v) {
            Some(i) => counts[i] += 1,
            None => {
                return Err(Error::InvalidState(format!(
                    "value {v} is not a state label"
                )))
            }
        }
    }
    Ok(counts)
}
