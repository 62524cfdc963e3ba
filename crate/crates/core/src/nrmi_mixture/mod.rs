//! Normalized stable process location-scale mixture of normals.
//!
//! Posterior sampling uses the conditional latent-variable representation:
//! given the latent `u`, the unnormalized random measure is a set of fixed
//! jumps at the occupied atoms plus an exponentially tilted stable CRM whose
//! jumps are generated in decreasing order by the Ferguson-Klass method.

mod chain_io;
mod diagnostics;
pub mod jumps;
mod sampler;

pub use chain_io::{read_chain, write_chain, ChainMeta, CHAIN_SCHEMA};
pub use diagnostics::effective_sample_size;
pub use jumps::{jumps_from_arrivals, truncate_jumps, StableTail};
pub use sampler::{sample_posterior, sample_prior};

use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::data_model::Observation;
use crate::error::{Error, Result};
use crate::special::{normal_cdf, normal_pdf, std_normal_cdf, std_normal_sf};

/// Floor applied to kernel values before taking logs.
pub const KERNEL_FLOOR: f64 = 1e-300;

/// Normal-gamma hyperprior on the location base measure `N(phi1, 1/phi2)`:
/// `phi2 ~ Gamma(shape, rate)`, `phi1 | phi2 ~ N(mean, 1 / (precision_scale * phi2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGamma {
    pub mean: f64,
    pub precision_scale: f64,
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub gamma: f64,
    pub mu_hyper: NormalGamma,
    /// Support of the uniform prior on kernel standard deviations.
    pub sigma_bounds: (f64, f64),
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            gamma: 0.4,
            mu_hyper: NormalGamma {
                mean: 0.0,
                precision_scale: 0.01,
                shape: 1.0,
                rate: 1.0,
            },
            sigma_bounds: (0.1, 1.5),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma out of range"));
        }
        let (lo, hi) = self.sigma_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid("sigma bounds must satisfy 0 < low < high"));
        }
        let h = &self.mu_hyper;
        if !h.mean.is_finite() || !(h.precision_scale > 0.0 && h.shape > 0.0 && h.rate > 0.0) {
            return Err(Error::invalid("normal-gamma hyperparameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCMCConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub truncation_tol: f64,
    pub seed: u64,
}

impl Default for MCMCConfig {
    fn default() -> Self {
        MCMCConfig {
            iterations: 40_000,
            burn_in: 10_000,
            thin: 10,
            truncation_tol: 1e-4,
            seed: 0,
        }
    }
}

impl MCMCConfig {
    pub fn retained(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 {
            return Err(Error::invalid("iterations and thin must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::invalid("burn-in must be smaller than iterations"));
        }
        if self.retained() < 1 {
            return Err(Error::invalid("configuration retains no draws"));
        }
        if !(self.truncation_tol > 0.0 && self.truncation_tol < 1.0) {
            return Err(Error::invalid("truncation tolerance must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// One posterior realization of the (truncated) random mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDraw {
    pub atoms: Vec<Atom>,
    pub latent_u: f64,
    pub log_likelihood: f64,
}

impl MixtureDraw {
    pub fn single(mu: f64, sigma: f64) -> Self {
        MixtureDraw {
            atoms: vec![Atom {
                weight: 1.0,
                mu,
                sigma,
            }],
            latent_u: 1.0,
            log_likelihood: 0.0,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * normal_pdf(x, a.mu, a.sigma)).sum()
    }

    /// Mixture likelihood contribution of a possibly censored observation.
    pub fn contribution(&self, obs: &Observation) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * kernel_contribution(obs, a.mu, a.sigma))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        predictive_cdf(self, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub draws: Vec<MixtureDraw>,
    /// Per draw, the index into `draws[t].atoms` each observation is allocated to.
    pub allocations: Vec<Partition>,
    pub n_components_trace: Vec<usize>,
    pub prior: PriorConfig,
    pub mcmc: MCMCConfig,
}

impl PosteriorChain {
    /// A chain built from draws alone, e.g. fixtures or external samples.
    pub fn from_draws(draws: Vec<MixtureDraw>, allocations: Vec<Partition>) -> Self {
        let n_components_trace = allocations.iter().map(Partition::n_clusters).collect();
        PosteriorChain {
            draws,
            allocations,
            n_components_trace,
            prior: PriorConfig::default(),
            mcmc: MCMCConfig::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn latent_trace(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.latent_u).collect()
    }

    pub fn log_likelihood_trace(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.log_likelihood).collect()
    }
}

/// Kernel evaluation for an exact or censored standardized observation.
pub fn kernel_contribution(obs: &Observation, mu: f64, sigma: f64) -> f64 {
    match *obs {
        Observation::Exact { value } => normal_pdf(value, mu, sigma),
        Observation::Left { upper } => normal_cdf(upper, mu, sigma),
        Observation::Right { lower } => std_normal_sf((lower - mu) / sigma),
        Observation::Interval { lower, upper } => {
            (normal_cdf(upper, mu, sigma) - normal_cdf(lower, mu, sigma)).max(0.0)
        }
    }
}

/// Posterior mean density `(1/T) sum_t sum_k w_k N(x | mu_k, sigma_k^2)`.
pub fn predictive_density(chain: &PosteriorChain, grid: &[f64]) -> Vec<f64> {
    let t = chain.draws.len() as f64;
    grid.iter()
        .map(|&x| chain.draws.iter().map(|d| d.density(x)).sum::<f64>() / t)
        .collect()
}

/// `predictive_density` mapped to the concentration scale.
pub fn predictive_density_concentration(
    chain: &PosteriorChain,
    transform: &crate::data_model::Transform,
    concentrations: &[f64],
) -> Vec<f64> {
    let grid: Vec<f64> = concentrations.iter().map(|&c| transform.to_standard(c)).collect();
    predictive_density(chain, &grid)
        .into_iter()
        .zip(concentrations)
        .map(|(d, &c)| transform.density_to_concentration(c, d))
        .collect()
}

/// CDF of one mixture realization.
pub fn predictive_cdf(draw: &MixtureDraw, x: f64) -> f64 {
    draw.atoms
        .iter()
        .map(|a| a.weight * std_normal_cdf((x - a.mu) / a.sigma))
        .sum::<f64>()
        .min(1.0)
}

/// Pointwise credible band of the random CDF: for each grid point, the
/// `(1-level)/2` and `(1+level)/2` empirical quantiles of `F_t(x)` over draws,
/// together with the posterior mean CDF.
pub fn cdf_band(chain: &PosteriorChain, grid: &[f64], level: f64) -> Vec<(f64, f64, f64)> {
    grid.iter()
        .map(|&x| {
            let mut values: Vec<f64> = chain.draws.iter().map(|d| predictive_cdf(d, x)).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            values.sort_by(f64::total_cmp);
            let lo = crate::risk_metrics::order_statistic(&values, 0.5 * (1.0 - level));
            let hi = crate::risk_metrics::order_statistic(&values, 0.5 * (1.0 + level));
            (mean, lo, hi)
        })
        .collect()
}
