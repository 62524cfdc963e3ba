//! Quantile summaries, predictive model comparison and the simulation study.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_kde, fit_normal, kde_bootstrap_ci, kde_quantile, normal_hc_ci};
use crate::data_model::{Observation, StandardizedSample, Transform};
use crate::error::{Error, Result};
use crate::nrmi_mixture::{
    predictive_cdf, predictive_density, sample_posterior, MCMCConfig, MixtureDraw,
    PosteriorChain, PriorConfig, KERNEL_FLOOR,
};
use crate::special::{bisect_increasing, integrate, noncentral_t_cdf, noncentral_t_quantile, normal_pdf, std_normal_cdf, std_normal_quantile};

/// Type-1 empirical quantile of ascending `sorted`: element `ceil(qT)`.
pub fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let t = sorted.len();
    let idx = ((q * t as f64).ceil() as usize).clamp(1, t);
    sorted[idx - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePosterior {
    pub p: f64,
    pub samples: Vec<f64>,
    pub point: f64,
    pub credible: (f64, f64),
}

impl QuantilePosterior {
    fn from_samples(p: f64, samples: Vec<f64>) -> Self {
        let point = samples.iter().sum::<f64>() / samples.len() as f64;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let credible = (order_statistic(&sorted, 0.025), order_statistic(&sorted, 0.975));
        QuantilePosterior {
            p,
            samples,
            point,
            credible,
        }
    }

    /// Samples mapped through a monotone transform, summaries recomputed.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> QuantilePosterior {
        QuantilePosterior::from_samples(self.p, self.samples.iter().map(|&v| f(v)).collect())
    }

    pub fn to_concentration(&self, transform: &Transform) -> QuantilePosterior {
        self.map(|z| transform.to_concentration(z))
    }

    pub fn to_log(&self, transform: &Transform) -> QuantilePosterior {
        self.map(|z| transform.to_log(z))
    }
}

/// `p` quantile of one mixture realization.
pub fn draw_quantile(draw: &MixtureDraw, p: f64) -> f64 {
    let (lo, hi) = draw.atoms.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
        (lo.min(a.mu - 40.0 * a.sigma), hi.max(a.mu + 40.0 * a.sigma))
    });
    bisect_increasing(|x| predictive_cdf(draw, x), p, lo, hi, 1e-10)
}

pub fn hc_quantile_posterior(chain: &PosteriorChain, p: f64) -> Result<QuantilePosterior> {
    if chain.is_empty() {
        return Err(Error::invalid("empty chain"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p must lie in (0, 1)"));
    }
    let samples = chain.draws.par_iter().map(|d| draw_quantile(d, p)).collect();
    Ok(QuantilePosterior::from_samples(p, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpoResult {
    pub values: Vec<f64>,
    /// Observations for which some draw gave zero density.
    pub flagged: Vec<usize>,
}

impl CpoResult {
    /// Log pseudo-marginal likelihood.
    pub fn lpml(&self) -> f64 {
        self.values.iter().map(|v| v.ln()).sum()
    }
}

/// Harmonic-mean estimate of each observation's conditional predictive
/// ordinate.
pub fn cpo(chain: &PosteriorChain, data: &StandardizedSample) -> Result<CpoResult> {
    if chain.is_empty() {
        return Err(Error::invalid("empty chain"));
    }
    let t = chain.len() as f64;
    let mut values = Vec::with_capacity(data.n());
    let mut flagged = Vec::new();
    for (i, obs) in data.values.iter().enumerate() {
        let mut inverse_sum = 0.0;
        let mut floored = false;
        for draw in &chain.draws {
            let d = draw.contribution(obs);
            if !(d > KERNEL_FLOOR) {
                floored = true;
            }
            inverse_sum += 1.0 / d.max(KERNEL_FLOOR);
        }
        if floored {
            flagged.push(i);
        }
        values.push(t / inverse_sum);
    }
    Ok(CpoResult { values, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineModel {
    Normal,
    Kde,
}

/// Density at each `X_i` of the model refitted without it.
pub fn loo_refit(model: BaselineModel, data: &[f64]) -> Result<Vec<f64>> {
    if data.len() < 3 {
        return Err(Error::invalid("leave-one-out needs at least 3 observations"));
    }
    (0..data.len())
        .map(|i| {
            let rest: Vec<f64> = data
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .collect();
            match model {
                BaselineModel::Normal => Ok(fit_normal(&rest)?.density(data[i])),
                BaselineModel::Kde => Ok(fit_kde(&rest)?.density(data[i])),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    StandardNormal,
    NoncentralT,
    NormalMixture,
}

const T_DF: f64 = 3.0;
const T_NCP: f64 = -2.0;

impl Scenario {
    pub fn code(&self) -> &'static str {
        match self {
            Scenario::StandardNormal => "a",
            Scenario::NoncentralT => "b",
            Scenario::NormalMixture => "c",
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Scenario::StandardNormal => std_normal_cdf(x),
            Scenario::NoncentralT => noncentral_t_cdf(x, T_DF, T_NCP),
            Scenario::NormalMixture => std_normal_cdf(x + 2.0) / 3.0 + 2.0 * std_normal_cdf(x - 5.0) / 3.0,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            Scenario::StandardNormal => normal_pdf(x, 0.0, 1.0),
            Scenario::NoncentralT => noncentral_t_density(x, T_DF, T_NCP),
            Scenario::NormalMixture => normal_pdf(x, -2.0, 1.0) / 3.0 + 2.0 * normal_pdf(x, 5.0, 1.0) / 3.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Scenario::StandardNormal => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
            Scenario::NoncentralT => {
                let chi = ChiSquared::new(T_DF).expect("valid df");
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        let v: f64 = chi.sample(rng);
                        (z + T_NCP) / (v / T_DF).sqrt()
                    })
                    .collect()
            }
            Scenario::NormalMixture => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    if rng.random::<f64>() < 1.0 / 3.0 {
                        z - 2.0
                    } else {
                        z + 5.0
                    }
                })
                .collect(),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Scenario::StandardNormal),
            "b" => Ok(Scenario::NoncentralT),
            "c" => Ok(Scenario::NormalMixture),
            other => Err(Error::invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Noncentral t density, integrating `s phi(t s - ncp)` against the law of
/// `s = sqrt(V / df)`.
fn noncentral_t_density(t: f64, df: f64, ncp: f64) -> f64 {
    let sd = (0.5 / df).sqrt();
    let lo = (1.0 - 40.0 * sd).max(0.0);
    let hi = 1.0 + 40.0 * sd;
    let half = 0.5 * df;
    let ln_norm = half * 2f64.ln() + statrs::function::gamma::ln_gamma(half);
    integrate(
        |s| {
            if s <= 0.0 {
                return 0.0;
            }
            let v = df * s * s;
            let w = ((half - 1.0) * v.ln() - 0.5 * v - ln_norm).exp() * 2.0 * df * s;
            s * normal_pdf(t * s, ncp, 1.0) * w
        },
        lo,
        hi,
        96,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub true_hc5: f64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario) -> Self {
        let true_hc5 = match scenario {
            Scenario::StandardNormal => std_normal_quantile(0.05),
            Scenario::NoncentralT => noncentral_t_quantile(0.05, T_DF, T_NCP),
            Scenario::NormalMixture => bisect_increasing(|x| scenario.cdf(x), 0.05, -12.0, 12.0, 1e-13),
        };
        ScenarioSpec { scenario, true_hc5 }
    }
}

pub const MISE_LIMIT: f64 = 12.0;
pub const MISE_STEP: f64 = 0.01;

pub fn mise_grid() -> Vec<f64> {
    let steps = (2.0 * MISE_LIMIT / MISE_STEP).round() as usize;
    (0..=steps).map(|i| -MISE_LIMIT + i as f64 * MISE_STEP).collect()
}

/// Composite trapezoid on the uniform MISE grid.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    step * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

pub fn integrated_squared_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let sq: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).collect();
    trapezoid(&sq, MISE_STEP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModel {
    Bnp,
    Normal,
    Kde,
    Oracle,
}

impl SimModel {
    pub fn name(&self) -> &'static str {
        match self {
            SimModel::Bnp => "bnp",
            SimModel::Normal => "normal",
            SimModel::Kde => "kde",
            SimModel::Oracle => "oracle",
        }
    }

    fn index(&self) -> u64 {
        match self {
            SimModel::Bnp => 0,
            SimModel::Normal => 1,
            SimModel::Kde => 2,
            SimModel::Oracle => 3,
        }
    }
}

impl fmt::Display for SimModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bnp" => Ok(SimModel::Bnp),
            "normal" => Ok(SimModel::Normal),
            "kde" => Ok(SimModel::Kde),
            "oracle" => Ok(SimModel::Oracle),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub models: Vec<SimModel>,
    pub seed: u64,
    pub p: f64,
    pub level: f64,
    pub bootstrap: usize,
    pub prior: PriorConfig,
    pub mcmc: MCMCConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            sizes: vec![10, 20, 50, 100],
            replicates: 40,
            models: vec![SimModel::Bnp, SimModel::Normal, SimModel::Kde],
            seed: 1,
            p: 0.05,
            level: 0.95,
            bootstrap: 1000,
            prior: PriorConfig::default(),
            mcmc: MCMCConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub abs_error: f64,
    pub ise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub model: SimModel,
    pub n: usize,
    pub true_hc5: f64,
    pub mae: f64,
    pub mise: f64,
    pub mcil: f64,
    pub se_mae: f64,
    pub se_mise: f64,
    pub se_mcil: f64,
    pub replicates: Vec<ReplicateResult>,
}

/// Deterministic seed for a cell of the simulation grid.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Fitted {
    estimate: f64,
    lower: f64,
    upper: f64,
    density: Vec<f64>,
}

fn fit_replicate(
    spec: &ScenarioSpec,
    model: SimModel,
    sample: &[f64],
    grid: &[f64],
    truth: &[f64],
    config: &SimulationConfig,
    seed: u64,
) -> Result<Fitted> {
    if model == SimModel::Oracle {
        return Ok(Fitted {
            estimate: spec.true_hc5,
            lower: spec.true_hc5,
            upper: spec.true_hc5,
            density: truth.to_vec(),
        });
    }
    let obs: Vec<Observation> = sample.iter().map(|&v| Observation::exact(v)).collect();
    let std = StandardizedSample::from_log_values(&obs, 10.0)?;
    let tr = std.transform;
    let z_grid: Vec<f64> = grid.iter().map(|&x| (x - tr.mean) / tr.sd).collect();
    let values = std.exact_values();
    let (estimate, lower, upper, z_density) = match model {
        SimModel::Normal => {
            let fit = fit_normal(&values)?;
            let est = normal_hc_ci(&fit, config.p, config.level)?;
            (est.point, est.lower, est.upper, z_grid.iter().map(|&z| fit.density(z)).collect::<Vec<_>>())
        }
        SimModel::Kde => {
            let fit = fit_kde(&values)?;
            let point = kde_quantile(&fit, config.p)?;
            let (lo, hi) = kde_bootstrap_ci(&values, config.p, config.level, config.bootstrap, seed)?;
            (point, lo, hi, z_grid.iter().map(|&z| fit.density(z)).collect())
        }
        SimModel::Bnp => {
            let mcmc = MCMCConfig { seed, ..config.mcmc };
            let chain = sample_posterior(&std, &config.prior, &mcmc)?;
            let q = hc_quantile_posterior(&chain, config.p)?;
            (q.point, q.credible.0, q.credible.1, predictive_density(&chain, &z_grid))
        }
        SimModel::Oracle => unreachable!(),
    };
    Ok(Fitted {
        estimate: tr.to_log(estimate),
        lower: tr.to_log(lower),
        upper: tr.to_log(upper),
        density: z_density.into_iter().map(|d| d / tr.sd).collect(),
    })
}

/// Runs every (model, size, replicate) cell. Datasets depend only on
/// `(seed, size, replicate)`, so all models see the same data.
pub fn run_simulation(spec: &ScenarioSpec, config: &SimulationConfig) -> Result<Vec<MetricsReport>> {
    if config.replicates < 2 {
        return Err(Error::invalid("at least 2 replicates are required"));
    }
    if config.sizes.iter().any(|&n| n < 3) {
        return Err(Error::invalid("sample sizes must be at least 3"));
    }
    if config.models.is_empty() || config.sizes.is_empty() {
        return Err(Error::invalid("no models or sizes requested"));
    }
    let grid = mise_grid();
    let truth: Vec<f64> = grid.par_iter().map(|&x| spec.scenario.density(x)).collect();
    let cells: Vec<(SimModel, usize, usize)> = config
        .models
        .iter()
        .flat_map(|&m| config.sizes.iter().flat_map(move |&n| (0..config.replicates).map(move |r| (m, n, r))))
        .collect();
    let results: Vec<ReplicateResult> = cells
        .par_iter()
        .map(|&(model, n, r)| {
            let data_seed = derive_seed(config.seed, &[n as u64, r as u64]);
            let mut rng = ChaCha20Rng::seed_from_u64(data_seed);
            let sample = spec.scenario.sample(n, &mut rng);
            let fit_seed = derive_seed(data_seed, &[model.index()]);
            let fitted = fit_replicate(spec, model, &sample, &grid, &truth, config, fit_seed)?;
            Ok(ReplicateResult {
                replicate: r,
                estimate: fitted.estimate,
                lower: fitted.lower,
                upper: fitted.upper,
                abs_error: (fitted.estimate - spec.true_hc5).abs(),
                ise: integrated_squared_error(&fitted.density, &truth),
            })
        })
        .collect::<Result<_>>()?;
    let mut reports = Vec::new();
    for (chunk, &(model, n, _)) in results.chunks(config.replicates).zip(cells.iter().step_by(config.replicates)) {
        let abs: Vec<f64> = chunk.iter().map(|r| r.abs_error).collect();
        let ise: Vec<f64> = chunk.iter().map(|r| r.ise).collect();
        let len: Vec<f64> = chunk.iter().map(|r| r.upper - r.lower).collect();
        let (mae, se_mae) = mean_se(&abs);
        let (mise, se_mise) = mean_se(&ise);
        let (mcil, se_mcil) = mean_se(&len);
        reports.push(MetricsReport {
            scenario: spec.scenario,
            model,
            n,
            true_hc5: spec.true_hc5,
            mae,
            mise,
            mcil,
            se_mae,
            se_mise,
            se_mcil,
            replicates: chunk.to_vec(),
        });
    }
    Ok(reports)
}

/// Summary rows without the per-replicate traces.
pub fn reports_to_json(reports: &[MetricsReport]) -> serde_json::Value {
    serde_json::Value::Array(
        reports
            .iter()
            .map(|r| {
                serde_json::json!({
                    "scenario": r.scenario.code(),
                    "model": r.model.name(),
                    "n": r.n,
                    "true_hc5": r.true_hc5,
                    "mae": r.mae,
                    "mise": r.mise,
                    "mcil": r.mcil,
                    "se_mae": r.se_mae,
                    "se_mise": r.se_mise,
                    "se_mcil": r.se_mcil,
                })
            })
            .collect(),
    )
}

pub fn replicates_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("scenario,model,n,replicate,estimate,lower,upper,abs_error,ise\n");
    for r in reports {
        for rep in &r.replicates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scenario.code(),
                r.model.name(),
                r.n,
                rep.replicate,
                rep.estimate,
                rep.lower,
                rep.upper,
                rep.abs_error,
                rep.ise
            ));
        }
    }
    out
}
