//! `ssd`: command-line front end for Bayesian nonparametric SSD estimation.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bnp_ssd::baselines::{fit_kde, fit_normal, kde_bootstrap_ci, kde_quantile, normal_hc_ci, HcEstimate, KDEFit, NormalFit};
use bnp_ssd::clustering::{expected_loss_chain, greedy_point_estimate, partition_from_json, partition_to_json, psm, LossKind};
use bnp_ssd::data_model::{aggregate_species, contaminants, decensor, log_standardize, parse_csv, StandardizedSample};
use bnp_ssd::nrmi_mixture::{
    cdf_band, effective_sample_size, predictive_density, read_chain, sample_posterior, write_chain, ChainMeta,
    MCMCConfig, PosteriorChain, PriorConfig,
};
use bnp_ssd::risk_metrics::{
    cpo, hc_quantile_posterior, loo_refit, replicates_csv, reports_to_json, run_simulation, BaselineModel, Scenario,
    ScenarioSpec, SimModel, SimulationConfig,
};
use bnp_ssd::tensor_factorization::{
    build_tensor, cv_rank_select, filter_partitions, kmeans2_threshold, nncp_decompose, ContaminantPartition, CvConfig,
    NncpConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "ssd", version, about = "Bayesian nonparametric species sensitivity distributions")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an SSD model to one contaminant.
    Fit(FitArgs),
    /// Estimate a hazardous concentration from a chain or fit file.
    Hc(HcArgs),
    /// Point estimate of the species partition from a chain.
    Cluster(ClusterArgs),
    /// Run the simulation study.
    Simulate(SimulateArgs),
    /// Factorize the cross-contaminant association tensor.
    Tensor(TensorArgs),
    /// Collect JSON outputs into one document.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModelArg {
    Bnp,
    Normal,
    Kde,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Vi,
    Binder,
    ZeroOne,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Vi => LossKind::VI,
            LossArg::Binder => LossKind::Binder,
            LossArg::ZeroOne => LossKind::ZeroOne,
        }
    }
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Concentration CSV (contaminant,species,value,lower,upper,censor).
    csv: PathBuf,
    #[arg(long)]
    contaminant: String,
    #[arg(long, value_enum, default_value = "bnp")]
    model: ModelArg,
    /// Keep censored records as censored instead of decensoring them.
    #[arg(long)]
    censored: bool,
    #[arg(long, default_value_t = MCMCConfig::default().iterations)]
    iters: usize,
    #[arg(long, default_value_t = MCMCConfig::default().burn_in)]
    burn_in: usize,
    #[arg(long, default_value_t = MCMCConfig::default().thin)]
    thin: usize,
    #[arg(long, env = "SSD_SEED", default_value_t = 1)]
    seed: u64,
    /// Standardized density grid: lower end, upper end, number of points.
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    grid_min: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    grid_max: f64,
    #[arg(long, default_value_t = 401)]
    grid_points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct HcArgs {
    /// Chain file written by `fit --model bnp`, or a baseline `fit.json`.
    input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    p: f64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Bootstrap replicates for KDE intervals.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, env = "SSD_SEED", default_value_t = 1)]
    seed: u64,
    /// Output directory; the result is printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ClusterArgs {
    chain: PathBuf,
    #[arg(long, value_enum, default_value = "vi")]
    loss: LossArg,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, env = "SSD_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 50, 100])]
    sizes: Vec<usize>,
    /// Replicates per (model, size) cell.
    #[arg(long = "S", alias = "replicates", default_value_t = 40)]
    replicates: usize,
    #[arg(long, value_delimiter = ',', default_values_t = ["bnp".to_string(), "normal".to_string(), "kde".to_string()])]
    models: Vec<String>,
    #[arg(long, env = "SSD_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = MCMCConfig::default().iterations)]
    iters: usize,
    #[arg(long, default_value_t = MCMCConfig::default().burn_in)]
    burn_in: usize,
    #[arg(long, default_value_t = MCMCConfig::default().thin)]
    thin: usize,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TensorArgs {
    /// Directory of `{species: label}` partition files, one per contaminant.
    partitions: PathBuf,
    #[arg(long, default_value_t = 8)]
    min_species: usize,
    #[arg(long, default_value_t = 13)]
    min_contaminants: usize,
    /// Rank grid, as a list (`1,2,3`) or a range (`1-10`).
    #[arg(long, default_value = "1-10")]
    ranks: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = NncpConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = NncpConfig::default().tol)]
    tol: f64,
    #[arg(long, env = "SSD_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<bnp_ssd::Error> for CliError {
    fn from(e: bnp_ssd::Error) -> Self {
        match e {
            bnp_ssd::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    inputs: Vec<String>,
    config: Value,
    seed: Option<u64>,
    tool_version: String,
    outputs: Vec<String>,
    wall_time_s: f64,
}

/// Output directory bookkeeping: files written and the manifest at the end.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(self, command: &str, inputs: &[&Path], config: Value, seed: Option<u64>, start: Instant) -> CliResult<()> {
        let manifest = RunManifest {
            command: command.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.written,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(())
    }
}

fn grid(min: f64, max: f64, points: usize) -> CliResult<Vec<f64>> {
    if points < 2 || min.partial_cmp(&max) != Some(std::cmp::Ordering::Less) {
        return Err(usage("grid needs at least 2 points and grid-min < grid-max"));
    }
    let step = (max - min) / (points - 1) as f64;
    Ok((0..points).map(|i| min + i as f64 * step).collect())
}

fn load_contaminant(args: &FitArgs) -> CliResult<(Vec<String>, StandardizedSample)> {
    let records = parse_csv(&args.csv)?;
    if !contaminants(&records).contains(&args.contaminant) {
        return Err(usage(format!("unknown contaminant `{}`", args.contaminant)));
    }
    let selected: Vec<_> = records.into_iter().filter(|r| r.contaminant == args.contaminant).collect();
    let aggregated = aggregate_species(&selected)?;
    match (args.censored, args.model) {
        (true, ModelArg::Kde) => return Err(usage("KDE does not support censored data")),
        (true, ModelArg::Normal) => return Err(usage("the normal model does not support censored data")),
        _ => {}
    }
    let used = if args.censored { aggregated } else { decensor(&aggregated) };
    let species = used.iter().map(|r| r.species.clone()).collect();
    Ok((species, log_standardize(&used)?))
}

fn density_csv(sample: &StandardizedSample, z: &[f64], density: &[f64], cdf: &[(f64, f64, f64)]) -> String {
    let tr = sample.transform;
    let mut out = String::from("z,log10_concentration,concentration,density,concentration_density,cdf,cdf_lower,cdf_upper\n");
    for ((&z, &d), &(c, lo, hi)) in z.iter().zip(density).zip(cdf) {
        let conc = tr.to_concentration(z);
        out.push_str(&format!(
            "{z},{},{conc},{d},{},{c},{lo},{hi}\n",
            tr.to_log(z),
            tr.density_to_concentration(conc, d)
        ));
    }
    out
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn trace_ess(trace: &[f64]) -> Value {
    effective_sample_size(trace).map_or(Value::Null, finite_or_null)
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let (species, sample) = load_contaminant(args)?;
    let z = grid(args.grid_min, args.grid_max, args.grid_points)?;
    let mut out = Outputs::new(&args.out)?;
    let prior = PriorConfig::default();
    let mcmc = MCMCConfig {
        iterations: args.iters,
        burn_in: args.burn_in,
        thin: args.thin,
        seed: args.seed,
        ..MCMCConfig::default()
    };
    let mut config = json!({ "args": args });
    match args.model {
        ModelArg::Bnp => {
            let chain = sample_posterior(&sample, &prior, &mcmc)?;
            let meta = ChainMeta {
                contaminant: Some(args.contaminant.clone()),
                species: species.clone(),
                sample: Some(sample.clone()),
                manifest: Some(MANIFEST.to_string()),
                ..ChainMeta::for_chain(&chain)
            };
            let mut buf = Vec::new();
            write_chain(&mut buf, &chain, &meta)?;
            out.write("chain.tsv", &buf)?;
            let density = predictive_density(&chain, &z);
            let band = cdf_band(&chain, &z, 0.95);
            out.write("density.csv", density_csv(&sample, &z, &density, &band).as_bytes())?;
            let cp = cpo(&chain, &sample)?;
            for &i in &cp.flagged {
                eprintln!("warning: zero predictive density for species `{}`", species[i]);
            }
            let components: Vec<f64> = chain.n_components_trace.iter().map(|&k| k as f64).collect();
            out.write_json(
                "diagnostics.json",
                &json!({
                    "manifest": MANIFEST,
                    "draws": chain.len(),
                    "ess": {
                        "latent_u": trace_ess(&chain.latent_trace()),
                        "log_likelihood": trace_ess(&chain.log_likelihood_trace()),
                        "n_components": trace_ess(&components),
                    },
                    "cpo": species.iter().zip(&cp.values).map(|(s, v)| json!({"species": s, "cpo": v})).collect::<Vec<_>>(),
                    "cpo_flagged": cp.flagged,
                    "lpml": cp.lpml(),
                }),
            )?;
            config["prior"] = serde_json::to_value(prior)?;
            config["mcmc"] = serde_json::to_value(mcmc)?;
        }
        ModelArg::Normal | ModelArg::Kde => {
            let values = sample.exact_values();
            let loo = loo_refit(
                if args.model == ModelArg::Normal { BaselineModel::Normal } else { BaselineModel::Kde },
                &values,
            )
            .ok();
            let (fit_value, density, cdf): (Value, Vec<f64>, Vec<f64>) = if args.model == ModelArg::Normal {
                let fit = fit_normal(&values)?;
                (
                    json!({"model": "normal", "normal": fit}),
                    z.iter().map(|&x| fit.density(x)).collect(),
                    z.iter().map(|&x| fit.cdf(x)).collect(),
                )
            } else {
                let fit = fit_kde(&values)?;
                (
                    json!({"model": "kde", "kde": fit}),
                    z.iter().map(|&x| fit.density(x)).collect(),
                    z.iter().map(|&x| fit.cdf(x)).collect(),
                )
            };
            let mut doc = fit_value;
            doc["manifest"] = json!(MANIFEST);
            doc["contaminant"] = json!(args.contaminant);
            doc["species"] = json!(species);
            doc["sample"] = serde_json::to_value(&sample)?;
            doc["loo_density"] = loo.as_ref().map_or(Value::Null, |d| json!(d));
            doc["loo_log_score"] = loo.as_ref().map_or(Value::Null, |d| json!(d.iter().map(|v| v.ln()).sum::<f64>()));
            out.write_json("fit.json", &doc)?;
            let band: Vec<(f64, f64, f64)> = cdf.iter().map(|&c| (c, c, c)).collect();
            out.write("density.csv", density_csv(&sample, &z, &density, &band).as_bytes())?;
        }
    }
    out.finish("fit", &[&args.csv], config, Some(args.seed), start)
}

fn scales(est: &HcEstimate, sample: &StandardizedSample) -> Value {
    let tr = sample.transform;
    json!({
        "standardized": est,
        "log10": est.map(|z| tr.to_log(z)),
        "concentration": est.map(|z| tr.to_concentration(z)),
    })
}

fn is_chain_file(path: &Path) -> CliResult<bool> {
    let text = fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.starts_with(b"# ssd-chain"))
}

fn read_chain_file(path: &Path) -> CliResult<(PosteriorChain, ChainMeta)> {
    let file = fs::File::open(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(read_chain(BufReader::new(file))?)
}

fn cmd_hc(args: &HcArgs) -> CliResult<()> {
    let start = Instant::now();
    if !(args.p > 0.0 && args.p < 1.0) {
        return Err(usage("p must lie in (0, 1)"));
    }
    if !(args.level > 0.5 && args.level < 1.0) {
        return Err(usage("level must lie in (0.5, 1)"));
    }
    let doc = if is_chain_file(&args.input)? {
        let (chain, meta) = read_chain_file(&args.input)?;
        let sample = meta
            .sample
            .ok_or_else(|| usage("chain file carries no standardized sample"))?;
        // Credible bounds at the requested level, point at the posterior mean.
        let q = hc_quantile_posterior(&chain, args.p)?;
        let mut sorted = q.samples.clone();
        sorted.sort_by(f64::total_cmp);
        let est = HcEstimate {
            point: q.point,
            lower: bnp_ssd::risk_metrics::order_statistic(&sorted, 0.5 * (1.0 - args.level)),
            upper: bnp_ssd::risk_metrics::order_statistic(&sorted, 0.5 * (1.0 + args.level)),
        };
        let mut doc = scales(&est, &sample);
        doc["model"] = json!("bnp");
        doc
    } else {
        let text = fs::read_to_string(&args.input)?;
        let fit: Value = serde_json::from_str(&text)?;
        let sample: StandardizedSample = serde_json::from_value(fit["sample"].clone())?;
        let model = fit["model"].as_str().unwrap_or_default().to_string();
        let est = match model.as_str() {
            "normal" => {
                let nf: NormalFit = serde_json::from_value(fit["normal"].clone())?;
                normal_hc_ci(&nf, args.p, args.level)?
            }
            "kde" => {
                let kf: KDEFit = serde_json::from_value(fit["kde"].clone())?;
                let (lower, upper) = kde_bootstrap_ci(&kf.points, args.p, args.level, args.bootstrap, args.seed)?;
                HcEstimate {
                    point: kde_quantile(&kf, args.p)?,
                    lower,
                    upper,
                }
            }
            other => return Err(usage(format!("unknown fit model `{other}`"))),
        };
        let mut doc = scales(&est, &sample);
        doc["model"] = json!(model);
        doc
    };
    let mut doc = doc;
    doc["p"] = json!(args.p);
    doc["level"] = json!(args.level);
    match &args.out {
        Some(dir) => {
            doc["manifest"] = json!(MANIFEST);
            let mut out = Outputs::new(dir)?;
            out.write_json("hc.json", &doc)?;
            out.finish("hc", &[&args.input], json!({ "args": args }), Some(args.seed), start)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(())
        }
    }
}

fn cmd_cluster(args: &ClusterArgs) -> CliResult<()> {
    let start = Instant::now();
    if args.restarts == 0 {
        return Err(usage("restarts must be positive"));
    }
    let (chain, meta) = read_chain_file(&args.chain)?;
    if chain.is_empty() {
        return Err(usage("chain has no draws"));
    }
    let loss = LossKind::from(args.loss);
    let estimate = greedy_point_estimate(&chain, loss, args.restarts, args.seed)?;
    let value = expected_loss_chain(&estimate, &chain, loss)?;
    let n = estimate.len();
    let names: Vec<String> = if meta.species.len() == n {
        meta.species.clone()
    } else {
        (0..n).map(|i| format!("item{}", i + 1)).collect()
    };
    let mut out = Outputs::new(&args.out)?;
    let mut text = serde_json::to_string_pretty(&partition_to_json(&names, &estimate)?)?;
    text.push('\n');
    out.write("partition.json", text.as_bytes())?;
    out.write("psm.csv", psm(&chain)?.to_csv(Some(&names)).as_bytes())?;
    out.write_json(
        "cluster.json",
        &json!({
            "manifest": MANIFEST,
            "contaminant": meta.contaminant,
            "loss": args.loss,
            "expected_loss": value,
            "n_clusters": estimate.n_clusters(),
            "labels": estimate.labels(),
        }),
    )?;
    out.finish("cluster", &[&args.chain], json!({ "args": args }), Some(args.seed), start)
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let start = Instant::now();
    let scenario: Scenario = args.scenario.parse()?;
    if args.replicates < 2 {
        return Err(usage("at least 2 replicates are required"));
    }
    let models = args
        .models
        .iter()
        .map(|m| m.parse::<SimModel>())
        .collect::<bnp_ssd::Result<Vec<_>>>()?;
    let config = SimulationConfig {
        sizes: args.sizes.clone(),
        replicates: args.replicates,
        models,
        seed: args.seed,
        bootstrap: args.bootstrap,
        mcmc: MCMCConfig {
            iterations: args.iters,
            burn_in: args.burn_in,
            thin: args.thin,
            ..MCMCConfig::default()
        },
        ..SimulationConfig::default()
    };
    if config.models.contains(&SimModel::Bnp) {
        config.mcmc.validate()?;
    }
    let spec = ScenarioSpec::new(scenario);
    let reports = run_simulation(&spec, &config)?;
    let mut out = Outputs::new(&args.out)?;
    out.write_json(
        "metrics.json",
        &json!({
            "manifest": MANIFEST,
            "scenario": scenario.code(),
            "true_hc5": spec.true_hc5,
            "rows": reports_to_json(&reports),
        }),
    )?;
    out.write("replicates.csv", replicates_csv(&reports).as_bytes())?;
    let echo = json!({ "args": args, "simulation": config });
    out.finish("simulate", &[], echo, Some(args.seed), start)
}

fn parse_ranks(spec: &str) -> CliResult<Vec<usize>> {
    let bad = || usage(format!("invalid rank grid `{spec}`"));
    let ranks: Vec<usize> = if let Some((a, b)) = spec.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..=b).collect()
    } else {
        spec.split(',')
            .map(|r| r.trim().parse().map_err(|_| bad()))
            .collect::<CliResult<_>>()?
    };
    if ranks.is_empty() || ranks[0] == 0 || ranks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad());
    }
    Ok(ranks)
}

fn read_partitions(dir: &Path) -> CliResult<Vec<ContaminantPartition>> {
    let entries = fs::read_dir(dir).map_err(|e| usage(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("no partition files in {}", dir.display())));
    }
    files
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path)?;
            let (species, partition) =
                partition_from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let contaminant = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(ContaminantPartition {
                contaminant,
                species,
                partition,
            })
        })
        .collect()
}

fn cmd_tensor(args: &TensorArgs) -> CliResult<()> {
    let start = Instant::now();
    let ranks = parse_ranks(&args.ranks)?;
    let all = read_partitions(&args.partitions)?;
    let (kept, universe) = filter_partitions(&all, args.min_species, args.min_contaminants);
    if kept.is_empty() || universe.is_empty() {
        return Err(usage("no contaminants or species pass the filters"));
    }
    let tensor = build_tensor(&kept, &universe)?;
    let nncp = NncpConfig {
        max_iters: args.max_iters,
        tol: args.tol,
        ..NncpConfig::default()
    };
    let cv_config = CvConfig {
        folds: args.folds,
        holdout_fraction: None,
        nncp,
    };
    let cv = cv_rank_select(&tensor, &ranks, &cv_config, args.seed)?;
    let factors = nncp_decompose(&tensor, cv.chosen, args.seed, &nncp)?;
    let mut components = Vec::new();
    for r in 0..factors.rank {
        let a = kmeans2_threshold(&factors.a.column(r))?;
        let c = kmeans2_threshold(&factors.c.column(r))?;
        components.push(json!({
            "component": r + 1,
            "species": a.members.iter().map(|&i| &tensor.species[i]).collect::<Vec<_>>(),
            "contaminants": c.members.iter().map(|&k| &tensor.contaminants[k]).collect::<Vec<_>>(),
            "species_separated": a.separated,
            "contaminants_separated": c.separated,
            "kept": a.separated && c.separated,
        }));
    }
    let (s, _, c) = tensor.dims();
    let mut out = Outputs::new(&args.out)?;
    out.write("tensor.csv", tensor.to_triplet_csv().as_bytes())?;
    out.write_json("tensor_index.json", &tensor.index_json())?;
    let mut cv_doc = serde_json::to_value(&cv)?;
    cv_doc["manifest"] = json!(MANIFEST);
    out.write_json("cv.json", &cv_doc)?;
    out.write("factors_species.csv", factors.a.to_csv(&tensor.species).as_bytes())?;
    out.write("factors_contaminants.csv", factors.c.to_csv(&tensor.contaminants).as_bytes())?;
    out.write_json(
        "tensor.json",
        &json!({
            "manifest": MANIFEST,
            "dims": [s, s, c],
            "missing_fraction": tensor.missing_fraction(),
            "contaminants_read": all.len(),
            "rank": cv.chosen,
            "fit": factors.fit,
            "iterations": factors.objective_trace.len() - 1,
            "components": components,
        }),
    )?;
    out.finish("tensor", &[&args.partitions], json!({ "args": args }), Some(args.seed), start)
}

fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    if args.inputs.is_empty() {
        return Err(usage("no input documents"));
    }
    let mut docs = serde_json::Map::new();
    for path in &args.inputs {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        docs.insert(path.display().to_string(), value);
    }
    let mut text = serde_json::to_string_pretty(&json!({ "documents": docs }))?;
    text.push('\n');
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Hc(a) => cmd_hc(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Tensor(a) => cmd_tensor(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
