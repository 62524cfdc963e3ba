//! Comparison models: a normal SSD with noncentral-t confidence limits for
//! the quantile, and a Gaussian KDE with a rule-of-thumb bandwidth and
//! percentile bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::mean_sd;
use crate::error::{Error, Result};
use crate::risk_metrics::order_statistic;
use crate::special::{bisect_increasing, noncentral_t_quantile, normal_pdf, std_normal_cdf, std_normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub n: usize,
}

impl NormalFit {
    pub fn density(&self, x: f64) -> f64 {
        normal_pdf(x, self.mu_hat, self.sigma_hat)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mu_hat) / self.sigma_hat)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mu_hat + self.sigma_hat * std_normal_quantile(p)
    }
}

/// Quantile estimate with a two-sided interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HcEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

impl HcEstimate {
    pub fn map(&self, f: impl Fn(f64) -> f64) -> HcEstimate {
        HcEstimate {
            point: f(self.point),
            lower: f(self.lower),
            upper: f(self.upper),
        }
    }
}

fn check_sample(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.len() < 2 {
        return Err(Error::invalid("at least 2 observations are required"));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite observation"));
    }
    let (mean, sd) = mean_sd(sample);
    if !(sd > 0.0) {
        return Err(Error::invalid("zero variance sample"));
    }
    Ok((mean, sd))
}

pub fn fit_normal(sample: &[f64]) -> Result<NormalFit> {
    let (mu_hat, sigma_hat) = check_sample(sample)?;
    Ok(NormalFit {
        mu_hat,
        sigma_hat,
        n: sample.len(),
    })
}

fn check_probability(p: f64, name: &str) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
    }
    Ok(())
}

/// Extrapolation constant `k_q = t^{-1}_{n-1, -z_p sqrt(n)}(q) / sqrt(n)`.
pub fn extrapolation_constant(n: usize, p: f64, q: f64) -> f64 {
    let root_n = (n as f64).sqrt();
    let ncp = -std_normal_quantile(p) * root_n;
    noncentral_t_quantile(q, (n - 1) as f64, ncp) / root_n
}

/// Point estimate and confidence limits for the `p` quantile of a normal fit.
pub fn normal_hc_ci(fit: &NormalFit, p: f64, level: f64) -> Result<HcEstimate> {
    if fit.n < 2 {
        return Err(Error::invalid("at least 2 observations are required"));
    }
    check_probability(p, "p")?;
    if !(level > 0.5 && level < 1.0) {
        return Err(Error::invalid("level must lie in (0.5, 1)"));
    }
    let k = |q| extrapolation_constant(fit.n, p, q);
    Ok(HcEstimate {
        point: fit.mu_hat - k(0.5) * fit.sigma_hat,
        lower: fit.mu_hat - k(0.5 * (1.0 + level)) * fit.sigma_hat,
        upper: fit.mu_hat - k(0.5 * (1.0 - level)) * fit.sigma_hat,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDEFit {
    pub points: Vec<f64>,
    pub bandwidth: f64,
}

impl KDEFit {
    pub fn density(&self, x: f64) -> f64 {
        kde_density(self, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        kde_cdf(self, x)
    }
}

/// Gaussian KDE with bandwidth `1.06 sd n^{-1/5}`.
pub fn fit_kde(sample: &[f64]) -> Result<KDEFit> {
    let (_, sd) = check_sample(sample)?;
    Ok(KDEFit {
        points: sample.to_vec(),
        bandwidth: 1.06 * sd * (sample.len() as f64).powf(-0.2),
    })
}

pub fn kde_density(fit: &KDEFit, x: f64) -> f64 {
    let h = fit.bandwidth;
    fit.points.iter().map(|&xi| normal_pdf(x, xi, h)).sum::<f64>() / fit.points.len() as f64
}

pub fn kde_cdf(fit: &KDEFit, x: f64) -> f64 {
    let h = fit.bandwidth;
    fit.points
        .iter()
        .map(|&xi| std_normal_cdf((x - xi) / h))
        .sum::<f64>()
        / fit.points.len() as f64
}

pub fn kde_quantile(fit: &KDEFit, p: f64) -> Result<f64> {
    check_probability(p, "p")?;
    let (min, max) = fit
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let h = fit.bandwidth;
    Ok(bisect_increasing(
        |x| kde_cdf(fit, x),
        p,
        min - 10.0 * h,
        max + 10.0 * h,
        1e-10,
    ))
}

/// Percentile bootstrap interval for the KDE `p` quantile. Replicate `r` draws
/// its resample from stream `r` of a generator seeded with `seed`.
pub fn kde_bootstrap_ci(sample: &[f64], p: f64, level: f64, replicates: usize, seed: u64) -> Result<(f64, f64)> {
    check_sample(sample)?;
    check_probability(p, "p")?;
    check_probability(level, "level")?;
    if replicates < 100 {
        return Err(Error::invalid("at least 100 bootstrap replicates are required"));
    }
    let n = sample.len();
    let estimates: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let resample: Vec<f64> = (0..n).map(|_| sample[rng.random_range(0..n)]).collect();
            // A resample of one repeated value has no bandwidth.
            fit_kde(&resample).ok().map(|fit| kde_quantile(&fit, p).expect("p checked"))
        })
        .collect();
    let mut values: Vec<f64> = estimates.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(Error::numerical("every bootstrap resample was degenerate"));
    }
    values.sort_by(f64::total_cmp);
    Ok((
        order_statistic(&values, 0.5 * (1.0 - level)),
        order_statistic(&values, 0.5 * (1.0 + level)),
    ))
}
