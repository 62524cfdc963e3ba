//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero when any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use bnp_ssd::clustering::{
    enumerate_partitions, expected_loss_chain, greedy_point_estimate, partition_to_json, psm, vi_loss, LossKind,
    Partition,
};
use bnp_ssd::data_model::{mean_sd, Observation, StandardizedSample};
use bnp_ssd::nrmi_mixture::{kernel_contribution, sample_posterior, Atom, MCMCConfig, MixtureDraw, PosteriorChain, PriorConfig};
use bnp_ssd::risk_metrics::{
    cpo, draw_quantile, hc_quantile_posterior, run_simulation, MetricsReport, Scenario, ScenarioSpec, SimModel,
    SimulationConfig,
};
use bnp_ssd::special::normal_pdf;
use bnp_ssd::tensor_factorization::{cv_rank_select, nncp_decompose, AssociationTensor, CvConfig, NncpConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reduced_mcmc() -> MCMCConfig {
    MCMCConfig {
        iterations: 6000,
        burn_in: 1000,
        thin: 5,
        ..MCMCConfig::default()
    }
}

/// A chain whose draws carry only the given allocations.
fn allocation_chain(allocations: Vec<Partition>) -> PosteriorChain {
    let draws = allocations
        .iter()
        .map(|p| MixtureDraw {
            atoms: (0..p.labels().iter().max().map_or(1, |m| m + 1))
                .map(|_| Atom {
                    weight: 1.0,
                    mu: 0.0,
                    sigma: 1.0,
                })
                .collect(),
            latent_u: 1.0,
            log_likelihood: 0.0,
        })
        .collect();
    PosteriorChain::from_draws(draws, allocations)
}

fn random_partition(n: usize, rng: &mut ChaCha20Rng) -> Partition {
    let k = rng.random_range(1..=n);
    Partition::new((0..n).map(|_| rng.random_range(0..k)).collect())
}

fn synthetic_chain(seed: u64) -> PosteriorChain {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=3);
    let reference: Vec<usize> = (0..6).map(|_| rng.random_range(0..k)).collect();
    let allocations = (0..200)
        .map(|_| {
            let noise = rng.random::<f64>() * 0.4;
            Partition::new(
                reference
                    .iter()
                    .map(|&l| if rng.random::<f64>() < noise { rng.random_range(0..k + 2) } else { l })
                    .collect(),
            )
        })
        .collect();
    allocation_chain(allocations)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let all = enumerate_partitions(6);
    let mut matched = 0;
    let mut cases = 0;
    for seed in 0..25 {
        let chain = synthetic_chain(seed);
        for loss in [LossKind::VI, LossKind::Binder] {
            let exhaustive = all
                .iter()
                .map(|c| expected_loss_chain(c, &chain, loss).unwrap())
                .fold(f64::INFINITY, f64::min);
            let estimate = greedy_point_estimate(&chain, loss, 16, seed).unwrap();
            let value = expected_loss_chain(&estimate, &chain, loss).unwrap();
            cases += 1;
            if (value - exhaustive).abs() <= 1e-9 {
                matched += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        matched == cases && all.len() == 203 && secs < 60.0,
        format!("{matched}/{cases} optimal over {} partitions in {secs:.2}s", all.len()),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut worst_symmetry = 0.0f64;
    let mut worst_triangle = f64::NEG_INFINITY;
    let mut identity = true;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=10);
        let (a, b, c) = (
            random_partition(n, &mut rng),
            random_partition(n, &mut rng),
            random_partition(n, &mut rng),
        );
        let ab = vi_loss(&a, &b).unwrap();
        let ba = vi_loss(&b, &a).unwrap();
        let bc = vi_loss(&b, &c).unwrap();
        let ac = vi_loss(&a, &c).unwrap();
        identity &= vi_loss(&a, &a).unwrap().abs() <= 1e-12;
        identity &= (ab.abs() <= 1e-12) == (a.canonical() == b.canonical());
        worst_symmetry = worst_symmetry.max((ab - ba).abs());
        worst_triangle = worst_triangle.max(ac - ab - bc);
    }
    check(
        identity && worst_symmetry <= 1e-12 && worst_triangle <= 1e-12,
        format!("identity {identity}, max asymmetry {worst_symmetry:.1e}, max triangle excess {worst_triangle:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let single = PosteriorChain::from_draws(vec![MixtureDraw::single(0.0, 1.0)], vec![Partition::new(vec![0])]);
    let hc = hc_quantile_posterior(&single, 0.05).unwrap().point;
    let c = Scenario::NormalMixture;
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if c.cdf(mid) < 0.05 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bisection = 0.5 * (lo + hi);
    let mixture = MixtureDraw {
        atoms: vec![
            Atom {
                weight: 1.0 / 3.0,
                mu: -2.0,
                sigma: 1.0,
            },
            Atom {
                weight: 2.0 / 3.0,
                mu: 5.0,
                sigma: 1.0,
            },
        ],
        latent_u: 1.0,
        log_likelihood: 0.0,
    };
    let from_draw = draw_quantile(&mixture, 0.05);
    let spec = ScenarioSpec::new(c).true_hc5;
    check(
        (hc + 1.64485).abs() <= 1e-5
            && (bisection + 3.0364).abs() <= 5e-4
            && (from_draw - bisection).abs() <= 5e-4
            && (spec - bisection).abs() <= 5e-4,
        format!("single atom {hc:.6}, mixture {from_draw:.6} (bisection {bisection:.6}, scenario {spec:.6})"),
    )
}

fn criterion_4() -> Outcome {
    let left = kernel_contribution(&Observation::left(0.0), 0.0, 1.0);
    let right = kernel_contribution(&Observation::right(0.0), 0.0, 1.0);
    let interval = kernel_contribution(&Observation::interval(-1.0, 1.0), 0.0, 1.0);
    // erf(1 / sqrt 2)
    let reference = 0.682_689_492_137_085_9;
    check(
        left == 0.5 && right == 0.5 && (interval - reference).abs() <= 1e-6,
        format!("left {left}, right {right}, interval {interval:.9}"),
    )
}

fn criterion_5() -> Outcome {
    let values = [-1.2, -0.4, 0.1, 0.9, 1.6];
    let obs: Vec<Observation> = values.iter().map(|&v| Observation::exact(v)).collect();
    let data = StandardizedSample::from_log_values(&obs, 10.0).unwrap();
    let z = data.exact_values();
    let draw = MixtureDraw::single(0.3, 0.8);
    let chain = PosteriorChain::from_draws(vec![draw; 50], vec![Partition::new(vec![0; z.len()]); 50]);
    let degenerate = cpo(&chain, &data).unwrap();
    let worst = degenerate
        .values
        .iter()
        .zip(&z)
        .map(|(c, &x)| (c - normal_pdf(x, 0.3, 0.8)).abs())
        .fold(0.0, f64::max);

    let single = StandardizedSample::from_log_values(&[Observation::exact(1.0), Observation::exact(3.0)], 10.0).unwrap();
    let x = single.exact_values()[0];
    let sigma_for = |d: f64| 1.0 / (d * (2.0 * std::f64::consts::PI).sqrt());
    let two = PosteriorChain::from_draws(
        vec![MixtureDraw::single(x, sigma_for(0.2)), MixtureDraw::single(x, sigma_for(0.4))],
        vec![Partition::new(vec![0, 0]); 2],
    );
    let fixture = cpo(&two, &single).unwrap().values[0];
    check(
        worst <= 1e-12 && (fixture - 0.26667).abs() <= 1e-5 && (fixture - 4.0 / 15.0).abs() <= 1e-10,
        format!("degenerate max error {worst:.1e}, two-draw CPO {fixture:.10}"),
    )
}

fn simulate(scenario: Scenario, sizes: Vec<usize>, replicates: usize, models: Vec<SimModel>, seed: u64) -> Vec<MetricsReport> {
    let config = SimulationConfig {
        sizes,
        replicates,
        models,
        seed,
        mcmc: reduced_mcmc(),
        ..SimulationConfig::default()
    };
    run_simulation(&ScenarioSpec::new(scenario), &config).unwrap()
}

fn report(reports: &[MetricsReport], model: SimModel, n: usize) -> &MetricsReport {
    reports.iter().find(|r| r.model == model && r.n == n).expect("cell present")
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let models = vec![SimModel::Bnp, SimModel::Normal];
    let c = simulate(Scenario::NormalMixture, vec![20, 50], 10, models.clone(), 1);
    let a = simulate(Scenario::StandardNormal, vec![20, 50], 10, models, 1);
    let mut ok = true;
    let mut detail = Vec::new();
    for n in [20, 50] {
        let (bnp, normal) = (report(&c, SimModel::Bnp, n), report(&c, SimModel::Normal, n));
        ok &= bnp.mae < normal.mae && bnp.mise < normal.mise;
        detail.push(format!(
            "c n={n} MAE {:.3}/{:.3} MISE {:.4}/{:.4}",
            bnp.mae, normal.mae, bnp.mise, normal.mise
        ));
        let (bnp, normal) = (report(&a, SimModel::Bnp, n), report(&a, SimModel::Normal, n));
        ok &= (bnp.mae - normal.mae).abs() <= 0.5 * normal.mae;
        detail.push(format!("a n={n} MAE {:.3}/{:.3}", bnp.mae, normal.mae));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 1800.0;
    check(ok, format!("{} (bnp/normal) in {secs:.0}s", detail.join("; ")))
}

fn criterion_7() -> Outcome {
    let reports = simulate(Scenario::StandardNormal, vec![50], 20, vec![SimModel::Bnp], 7);
    let truth = reports[0].true_hc5;
    let covered = reports[0]
        .replicates
        .iter()
        .filter(|r| r.lower <= truth && truth <= r.upper)
        .count();
    check(covered >= 15, format!("{covered}/20 intervals cover {truth:.5}"))
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn low_rank_tensor(rank: usize, s: usize, c: usize, seed: u64) -> AssociationTensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut factor = |len: usize| -> Vec<f64> { (0..len).map(|_| 0.2 + rng.random::<f64>()).collect() };
    let a: Vec<Vec<f64>> = (0..rank).map(|_| factor(s)).collect();
    let cc: Vec<Vec<f64>> = (0..rank).map(|_| factor(c)).collect();
    let mut values = vec![0.0; s * s * c];
    for k in 0..c {
        for i in 0..s {
            for j in 0..s {
                values[(k * s + i) * s + j] = (0..rank).map(|r| a[r][i] * a[r][j] * cc[r][k]).sum();
            }
        }
    }
    AssociationTensor::from_dense(names("s", s), names("c", c), values).unwrap()
}

fn criterion_8() -> Outcome {
    let config = NncpConfig {
        max_iters: 20_000,
        tol: 1e-15,
        starts: 4,
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for rank in [1, 2] {
        let full = low_rank_tensor(rank, 10, 8, 40 + rank as u64);
        let fit = nncp_decompose(&full, rank, 3, &config).unwrap();
        let err = relative_error(&fit, &full.triplets());
        ok &= err < 1e-6 && monotone(&fit.objective_trace);

        let mut masked = full.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(rank as u64);
        let mut held = Vec::new();
        for (i, j, k, y) in full.triplets() {
            if i < j && rng.random::<f64>() < 0.3 {
                masked.set(i, j, k, None);
                held.push((i, j, k, y));
            }
        }
        let fit_masked = nncp_decompose(&masked, rank, 3, &config).unwrap();
        let held_err = relative_error(&fit_masked, &held);
        ok &= held_err < 1e-4 && monotone(&fit_masked.objective_trace);
        detail.push(format!("rank {rank}: full {err:.1e}, held-out {held_err:.1e}"));
    }
    check(ok, format!("{}; objectives monotone", detail.join("; ")))
}

fn relative_error(fit: &bnp_ssd::tensor_factorization::FactorSet, entries: &[(usize, usize, usize, f64)]) -> f64 {
    let num: f64 = entries.iter().map(|&(i, j, k, y)| (fit.reconstruct(i, j, k) - y).powi(2)).sum();
    let den: f64 = entries.iter().map(|e| e.3 * e.3).sum();
    (num / den).sqrt()
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0])
}

fn criterion_9() -> Outcome {
    let tensor = low_rank_tensor(2, 10, 8, 13);
    let config = CvConfig {
        folds: 5,
        nncp: NncpConfig {
            max_iters: 3000,
            tol: 1e-15,
            starts: 4,
        },
        ..CvConfig::default()
    };
    let cv = cv_rank_select(&tensor, &[1, 2, 3, 4], &config, 7).unwrap();
    let means: Vec<String> = cv.mean.iter().map(|m| format!("{m:.1e}")).collect();
    check(cv.chosen == 2, format!("chosen rank {}, mean errors [{}]", cv.chosen, means.join(", ")))
}

fn ssd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ssd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = if dir.is_dir() {
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect()
    } else {
        vec![dir.to_path_buf()]
    };
    out.sort();
    out
}

/// File contents with the wall-clock field of a manifest removed.
fn comparable(path: &Path) -> Vec<u8> {
    let bytes = fs::read(path).unwrap();
    if path.file_name().is_some_and(|n| n == "manifest.json") {
        let mut value: Value = serde_json::from_slice(&bytes).unwrap();
        value.as_object_mut().unwrap().remove("wall_time_s");
        return serde_json::to_vec(&value).unwrap();
    }
    bytes
}

/// Runs a command twice into the same output path; returns a mismatch
/// description, if any.
fn run_twice(args: &[&str], out: &Path) -> Option<String> {
    let first = ssd(args);
    if !first.status.success() {
        return Some(format!("{args:?} failed: {}", String::from_utf8_lossy(&first.stderr)));
    }
    let saved = out.with_extension("first");
    fs::rename(out, &saved).unwrap();
    let second = ssd(args);
    if !second.status.success() {
        return Some(format!("{args:?} failed on rerun"));
    }
    let (a, b) = (files(&saved), files(out));
    if a.len() != b.len() {
        return Some(format!("{args:?} wrote different file sets"));
    }
    for (x, y) in a.iter().zip(&b) {
        let names_differ = out.is_dir() && x.file_name() != y.file_name();
        if names_differ || comparable(x) != comparable(y) {
            return Some(format!("{} differs", y.display()));
        }
    }
    None
}

fn write_fixture(dir: &Path) -> PathBuf {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let mut text = String::from("contaminant,species,value,lower,upper,censor\n");
    for i in 0..24 {
        let centre = if i % 3 == 0 { -1.0 } else { 1.5 };
        let v = 10f64.powf(centre + 0.3 * (rng.random::<f64>() - 0.5));
        text.push_str(&format!("Cd,sp{i},{v:.6},,,none\n"));
    }
    text.push_str("Cd,sp24,0.05,,,left\nCd,sp25,,10,40,interval\n");
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path
}

fn write_partitions(dir: &Path) -> PathBuf {
    let root = dir.join("partitions");
    fs::create_dir_all(&root).unwrap();
    let species = names("sp", 10);
    for c in 0..6 {
        let labels = (0..10).map(|i| usize::from(i >= 4 + c % 2)).collect();
        let json = partition_to_json(&species, &Partition::new(labels)).unwrap();
        fs::write(root.join(format!("c{c}.json")), serde_json::to_string_pretty(&json).unwrap()).unwrap();
    }
    root
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = write_fixture(dir);
    let parts = write_partitions(dir);
    let p = |name: &str| dir.join(name);
    let s = |path: &Path| path.display().to_string();
    let (data_s, parts_s) = (s(&data), s(&parts));
    let bnp = s(&p("bnp"));
    let chain = s(&p("bnp").join("chain.tsv"));
    let kde_fit = s(&p("kde").join("fit.json"));
    let runs: Vec<(Vec<String>, PathBuf, bool)> = vec![
        (
            vec!["fit", &data_s, "--contaminant", "Cd", "--censored", "--iters", "3000", "--burn-in", "500", "--thin", "5", "--out", &bnp]
                .into_iter()
                .map(String::from)
                .collect(),
            p("bnp"),
            false,
        ),
        (
            ["fit", &data_s, "--contaminant", "Cd", "--model", "normal", "--out", &s(&p("normal"))].map(String::from).to_vec(),
            p("normal"),
            false,
        ),
        (
            ["fit", &data_s, "--contaminant", "Cd", "--model", "kde", "--out", &s(&p("kde"))].map(String::from).to_vec(),
            p("kde"),
            false,
        ),
        (["hc", &chain, "--out", &s(&p("hc_bnp"))].map(String::from).to_vec(), p("hc_bnp"), false),
        (
            ["hc", &kde_fit, "--bootstrap", "200", "--out", &s(&p("hc_kde"))].map(String::from).to_vec(),
            p("hc_kde"),
            false,
        ),
        (["cluster", &chain, "--loss", "vi", "--out", &s(&p("vi"))].map(String::from).to_vec(), p("vi"), false),
        (
            ["cluster", &chain, "--loss", "binder", "--out", &s(&p("binder"))].map(String::from).to_vec(),
            p("binder"),
            false,
        ),
        (
            [
                "simulate", "--scenario", "c", "--sizes", "10", "--S", "2", "--iters", "1000", "--burn-in", "200", "--thin",
                "4", "--bootstrap", "100", "--out", &s(&p("sim")),
            ]
            .map(String::from)
            .to_vec(),
            p("sim"),
            false,
        ),
        (
            [
                "tensor", &parts_s, "--min-species", "2", "--min-contaminants", "1", "--ranks", "1-3", "--folds", "3",
                "--max-iters", "200", "--out", &s(&p("tensor")),
            ]
            .map(String::from)
            .to_vec(),
            p("tensor"),
            false,
        ),
        (
            [
                "report",
                &s(&p("hc_bnp").join("hc.json")),
                &s(&p("sim").join("metrics.json")),
                "--out",
                &s(&p("report.json")),
            ]
            .map(String::from)
            .to_vec(),
            p("report.json"),
            false,
        ),
        (["hc", &chain, "--p", "0.1"].map(String::from).to_vec(), p("hc_stdout_marker"), true),
    ];
    let mut checked = 0;
    for (args, out, stdout_only) in &runs {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let mismatch = if *stdout_only {
            let (a, b) = (ssd(&refs), ssd(&refs));
            (!a.status.success() || a.stdout != b.stdout).then(|| format!("{refs:?} stdout differs"))
        } else {
            run_twice(&refs, out)
        };
        if let Some(m) = mismatch {
            return Err(format!("after {checked} identical commands: {m}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} commands byte-identical across reruns"))
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let raw: Vec<Observation> = (0..40)
        .map(|i| Observation::exact(if i % 2 == 0 { -1.0 } else { 2.0 } + rng.random::<f64>()))
        .collect();
    let data = StandardizedSample::from_log_values(&raw, 10.0).unwrap();
    let (mean, sd) = mean_sd(&data.exact_values());
    let prior = PriorConfig::default();
    let mcmc = MCMCConfig {
        iterations: 3000,
        burn_in: 500,
        thin: 5,
        seed: 11,
        ..MCMCConfig::default()
    };
    let chain = sample_posterior(&data, &prior, &mcmc).unwrap();
    let (lo, hi) = prior.sigma_bounds;
    let weight_error = chain
        .draws
        .iter()
        .map(|d| (d.atoms.iter().map(|a| a.weight).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let sigma_ok = chain.draws.iter().all(|d| d.atoms.iter().all(|a| a.sigma >= lo && a.sigma <= hi));
    let m = psm(&chain).unwrap();
    let n = m.n();
    let psm_ok = (0..n).all(|i| m.get(i, i) == 1.0 && (0..n).all(|j| m.get(i, j) == m.get(j, i)));
    check(
        mean.abs() <= 1e-12 && (sd - 1.0).abs() <= 1e-12 && weight_error <= 1e-10 && sigma_ok && psm_ok,
        format!(
            "mean {mean:.1e}, sd-1 {:.1e}, max weight error {weight_error:.1e}, sigma in bounds {sigma_ok}, psm ok {psm_ok}",
            sd - 1.0
        ),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 11] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let message = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {message}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
