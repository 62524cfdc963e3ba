//! Metropolis-within-Gibbs sampler for the normalized stable mixture.
//!
//! One sweep, in order:
//! 1. random-walk Metropolis on `ln u` against `p(u | partition) ∝ u^{k gamma - 1} exp(-u^gamma)`;
//! 2. the unnormalized measure given `u`: a `Gamma(n_j - gamma, u)` jump at each
//!    occupied atom plus Ferguson-Klass jumps of the tilted CRM at fresh atoms
//!    drawn from the base measure (this is the recorded mixture draw);
//! 3. allocations from the multinomial over all atoms, weights `J_m k(x_i | theta_m)`;
//! 4. Metropolis updates of each occupied atom's `mu` and `sigma`;
//! 5. the conjugate normal-gamma update of the base-measure hyperparameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use super::{jumps::truncate_jumps, kernel_contribution, Atom, MCMCConfig, MixtureDraw, PosteriorChain, PriorConfig, KERNEL_FLOOR};
use crate::clustering::Partition;
use crate::data_model::{Observation, StandardizedSample};
use crate::error::{Error, Result};
use crate::special::normal_ln_pdf;

const LOG_U_STEP: f64 = 0.5;
const MU_STEP: f64 = 0.5;
const SIGMA_LOGIT_STEP: f64 = 0.3;

#[derive(Debug, Clone)]
struct Cluster {
    mu: f64,
    sigma: f64,
    members: Vec<usize>,
}

struct Sampler<'a> {
    obs: &'a [Observation],
    prior: PriorConfig,
    tol: f64,
    rng: ChaCha20Rng,
    /// `None` samples from the prior: the measure stays untilted.
    u: Option<f64>,
    clusters: Vec<Cluster>,
    phi_mean: f64,
    phi_precision: f64,
}

struct SweepOutput {
    draw: MixtureDraw,
    allocation: Partition,
    occupied: usize,
}

fn ln_kernel(obs: &Observation, mu: f64, sigma: f64) -> f64 {
    let ln_floor = KERNEL_FLOOR.ln();
    match *obs {
        Observation::Exact { value } => normal_ln_pdf(value, mu, sigma).max(ln_floor),
        _ => kernel_contribution(obs, mu, sigma).max(KERNEL_FLOOR).ln(),
    }
}

impl<'a> Sampler<'a> {
    fn new(obs: &'a [Observation], prior: PriorConfig, mcmc: &MCMCConfig, prior_only: bool) -> Self {
        let (lo, hi) = prior.sigma_bounds;
        let exact: Vec<f64> = obs.iter().filter_map(Observation::exact_value).collect();
        let centre = if exact.is_empty() {
            0.0
        } else {
            exact.iter().sum::<f64>() / exact.len() as f64
        };
        let sigma = if (lo..=hi).contains(&1.0) { 1.0 } else { 0.5 * (lo + hi) };
        let clusters = if obs.is_empty() {
            Vec::new()
        } else {
            vec![Cluster {
                mu: centre,
                sigma,
                members: (0..obs.len()).collect(),
            }]
        };
        Sampler {
            obs,
            prior,
            tol: mcmc.truncation_tol,
            rng: ChaCha20Rng::seed_from_u64(mcmc.seed),
            u: if prior_only { None } else { Some(1.0) },
            clusters,
            phi_mean: prior.mu_hyper.mean,
            phi_precision: prior.mu_hyper.shape / prior.mu_hyper.rate,
        }
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn update_latent(&mut self) {
        let Some(u) = self.u else { return };
        let kg = self.clusters.len() as f64 * self.prior.gamma;
        let g = self.prior.gamma;
        let log_target = |v: f64| kg * v - (g * v).exp();
        let v = u.ln();
        let proposal = v + LOG_U_STEP * self.normal();
        let log_ratio = log_target(proposal) - log_target(v);
        if log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio {
            self.u = Some(proposal.exp());
        }
    }

    /// Unnormalized measure: `(jump, mu, sigma)` for the occupied atoms first,
    /// then the fresh Ferguson-Klass atoms.
    fn regenerate_measure(&mut self) -> Result<Vec<(f64, f64, f64)>> {
        let g = self.prior.gamma;
        let tilt = self.u.unwrap_or(0.0);
        let mut atoms = Vec::with_capacity(self.clusters.len() + 64);
        for c in &self.clusters {
            let shape = c.members.len() as f64 - g;
            let jump = Gamma::new(shape, 1.0 / tilt)
                .map_err(|e| Error::numerical(format!("fixed jump distribution: {e}")))?
                .sample(&mut self.rng);
            atoms.push((jump, c.mu, c.sigma));
        }
        let fresh = truncate_jumps(g, tilt, self.tol, &mut self.rng)?;
        let (lo, hi) = self.prior.sigma_bounds;
        let base_sd = 1.0 / self.phi_precision.sqrt();
        for jump in fresh {
            let mu = self.phi_mean + base_sd * self.normal();
            let sigma = self.rng.random_range(lo..hi);
            atoms.push((jump, mu, sigma));
        }
        Ok(atoms)
    }

    fn allocate(&mut self, atoms: &[(f64, f64, f64)]) -> (Vec<usize>, f64) {
        let total: f64 = atoms.iter().map(|a| a.0).sum();
        let ln_total = total.ln();
        let ln_jumps: Vec<f64> = atoms.iter().map(|a| a.0.ln()).collect();
        let mut labels = Vec::with_capacity(self.obs.len());
        let mut log_lik = 0.0;
        let mut lw = vec![0.0; atoms.len()];
        for obs in self.obs {
            let mut max = f64::NEG_INFINITY;
            for (m, &(_, mu, sigma)) in atoms.iter().enumerate() {
                lw[m] = ln_jumps[m] + ln_kernel(obs, mu, sigma);
                max = max.max(lw[m]);
            }
            let mut sum = 0.0;
            for w in lw.iter_mut() {
                *w = (*w - max).exp();
                sum += *w;
            }
            log_lik += max + sum.ln() - ln_total;
            let mut target = self.rng.random::<f64>() * sum;
            let mut chosen = atoms.len() - 1;
            for (m, &w) in lw.iter().enumerate() {
                if target < w {
                    chosen = m;
                    break;
                }
                target -= w;
            }
            labels.push(chosen);
        }
        (labels, log_lik)
    }

    fn cluster_log_lik(&self, members: &[usize], mu: f64, sigma: f64) -> f64 {
        members.iter().map(|&i| ln_kernel(&self.obs[i], mu, sigma)).sum()
    }

    fn update_atoms(&mut self) {
        let (lo, hi) = self.prior.sigma_bounds;
        let width = hi - lo;
        let base_sd = 1.0 / self.phi_precision.sqrt();
        for idx in 0..self.clusters.len() {
            let Cluster { mu, sigma, .. } = self.clusters[idx];
            let members = std::mem::take(&mut self.clusters[idx].members);

            let current = self.cluster_log_lik(&members, mu, sigma) + normal_ln_pdf(mu, self.phi_mean, base_sd);
            let mu_prop = mu + MU_STEP * sigma * self.normal();
            let proposed = self.cluster_log_lik(&members, mu_prop, sigma) + normal_ln_pdf(mu_prop, self.phi_mean, base_sd);
            let mut mu_new = mu;
            if proposed - current >= 0.0 || self.rng.random::<f64>().ln() < proposed - current {
                mu_new = mu_prop;
            }

            // Random walk on eta = logit((sigma - lo) / width); the uniform prior
            // contributes the Jacobian s (1 - s).
            let s = ((sigma - lo) / width).clamp(1e-12, 1.0 - 1e-12);
            let eta = (s / (1.0 - s)).ln();
            let eta_prop = eta + SIGMA_LOGIT_STEP * self.normal();
            let s_prop = 1.0 / (1.0 + (-eta_prop).exp());
            let sigma_prop = (lo + width * s_prop).clamp(lo, hi);
            let current = self.cluster_log_lik(&members, mu_new, sigma) + s.ln() + (1.0 - s).ln();
            let proposed =
                self.cluster_log_lik(&members, mu_new, sigma_prop) + s_prop.ln() + (1.0 - s_prop).ln();
            let mut sigma_new = sigma;
            if proposed - current >= 0.0 || self.rng.random::<f64>().ln() < proposed - current {
                sigma_new = sigma_prop;
            }

            self.clusters[idx] = Cluster {
                mu: mu_new,
                sigma: sigma_new,
                members,
            };
        }
    }

    fn update_hyper(&mut self) -> Result<()> {
        let h = self.prior.mu_hyper;
        let k = self.clusters.len() as f64;
        let (kappa, mean, shape, rate) = if self.clusters.is_empty() {
            (h.precision_scale, h.mean, h.shape, h.rate)
        } else {
            let mu_bar = self.clusters.iter().map(|c| c.mu).sum::<f64>() / k;
            let ss: f64 = self.clusters.iter().map(|c| (c.mu - mu_bar).powi(2)).sum();
            let kappa = h.precision_scale + k;
            let mean = (h.precision_scale * h.mean + k * mu_bar) / kappa;
            let shape = h.shape + 0.5 * k;
            let rate = h.rate + 0.5 * ss + h.precision_scale * k * (mu_bar - h.mean).powi(2) / (2.0 * kappa);
            (kappa, mean, shape, rate)
        };
        let precision = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::numerical(format!("hyperprior precision: {e}")))?
            .sample(&mut self.rng);
        let mean = Normal::new(mean, 1.0 / (kappa * precision).sqrt())
            .map_err(|e| Error::numerical(format!("hyperprior mean: {e}")))?
            .sample(&mut self.rng);
        self.phi_precision = precision.max(1e-300);
        self.phi_mean = mean;
        Ok(())
    }

    fn sweep(&mut self) -> Result<SweepOutput> {
        self.update_latent();
        let atoms = self.regenerate_measure()?;
        let (labels, log_likelihood) = self.allocate(&atoms);

        let mut used: Vec<usize> = labels.clone();
        used.sort_unstable();
        used.dedup();
        let mut clusters: Vec<Cluster> = used
            .iter()
            .map(|&m| Cluster {
                mu: atoms[m].1,
                sigma: atoms[m].2,
                members: Vec::new(),
            })
            .collect();
        for (i, &m) in labels.iter().enumerate() {
            let c = used.binary_search(&m).expect("label is in used set");
            clusters[c].members.push(i);
        }
        self.clusters = clusters;

        let total: f64 = atoms.iter().map(|a| a.0).sum();
        let draw = MixtureDraw {
            atoms: atoms
                .iter()
                .map(|&(jump, mu, sigma)| Atom {
                    weight: jump / total,
                    mu,
                    sigma,
                })
                .collect(),
            latent_u: self.u.unwrap_or(0.0),
            log_likelihood,
        };

        self.update_atoms();
        self.update_hyper()?;

        Ok(SweepOutput {
            draw,
            allocation: Partition::new(labels),
            occupied: used.len(),
        })
    }
}

fn renormalize(draw: &mut MixtureDraw) {
    // Summing normalized weights can drift by a few ulps; fold the residual
    // into the largest atom.
    let total: f64 = draw.atoms.iter().map(|a| a.weight).sum();
    if let Some(big) = draw
        .atoms
        .iter_mut()
        .max_by(|a, b| a.weight.total_cmp(&b.weight))
    {
        big.weight += 1.0 - total;
    }
}

/// Runs the chain; retained draws are those at iterations
/// `burn_in + thin - 1, burn_in + 2 thin - 1, ...`.
pub fn sample_posterior(data: &StandardizedSample, prior: &PriorConfig, mcmc: &MCMCConfig) -> Result<PosteriorChain> {
    prior.validate()?;
    mcmc.validate()?;
    if data.n() < 2 {
        return Err(Error::invalid("at least 2 observations are required"));
    }
    let mut sampler = Sampler::new(&data.values, *prior, mcmc, false);
    let retained = mcmc.retained();
    let mut chain = PosteriorChain {
        draws: Vec::with_capacity(retained),
        allocations: Vec::with_capacity(retained),
        n_components_trace: Vec::with_capacity(retained),
        prior: *prior,
        mcmc: *mcmc,
    };
    for it in 0..mcmc.iterations {
        let out = sampler.sweep()?;
        if it >= mcmc.burn_in && (it - mcmc.burn_in + 1).is_multiple_of(mcmc.thin) && chain.draws.len() < retained {
            let mut draw = out.draw;
            renormalize(&mut draw);
            chain.draws.push(draw);
            chain.allocations.push(out.allocation);
            chain.n_components_trace.push(out.occupied);
        }
    }
    Ok(chain)
}

/// Draws from the prior random mixture (untilted measure, no data), using the
/// same thinning as [`sample_posterior`].
pub fn sample_prior(prior: &PriorConfig, mcmc: &MCMCConfig) -> Result<Vec<MixtureDraw>> {
    prior.validate()?;
    mcmc.validate()?;
    let mut sampler = Sampler::new(&[], *prior, mcmc, true);
    let mut draws = Vec::with_capacity(mcmc.retained());
    for it in 0..mcmc.iterations {
        let out = sampler.sweep()?;
        if it >= mcmc.burn_in && (it - mcmc.burn_in + 1).is_multiple_of(mcmc.thin) {
            let mut draw = out.draw;
            renormalize(&mut draw);
            draws.push(draw);
        }
    }
    Ok(draws)
}
