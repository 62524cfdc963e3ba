use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bnp_ssd::clustering::{partition_to_json, Partition};
use bnp_ssd::data_model::{Observation, StandardizedSample};
use bnp_ssd::nrmi_mixture::{write_chain, Atom, ChainMeta, MixtureDraw, PosteriorChain};
use serde_json::Value;
use tempfile::TempDir;

fn ssd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssd"))
        .args(args)
        .env_remove("SSD_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CSV: &str = "contaminant,species,value,lower,upper,censor
Cd,a,1.2,,,none
Cd,b,3.4,,,none
Cd,c,0.8,,,none
Cd,d,12.0,,,none
Cd,e,5.5,,,none
Cd,f,2.2,,,none
Cd,g,0.3,,,left
Cd,h,,20,60,interval
Zn,a,100,,,none
Zn,b,230,,,none
Zn,c,80,,,none
";

fn fixture() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    fs::write(&csv, CSV).unwrap();
    (dir, csv)
}

fn write_chain_file(dir: &Path, draws: Vec<MixtureDraw>, allocations: Vec<Partition>) -> PathBuf {
    let n = allocations[0].len();
    let chain = PosteriorChain::from_draws(draws, allocations);
    let values: Vec<Observation> = (0..n).map(|i| Observation::exact(i as f64)).collect();
    let meta = ChainMeta {
        sample: Some(StandardizedSample::from_log_values(&values, 10.0).unwrap()),
        ..ChainMeta::for_chain(&chain)
    };
    let path = dir.join("chain.tsv");
    let mut bytes = Vec::new();
    write_chain(&mut bytes, &chain, &meta).unwrap();
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn unknown_contaminant_is_a_usage_error() {
    let (dir, csv) = fixture();
    let out = ssd(&["fit", s(&csv), "--contaminant", "Pb", "--model", "normal", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Pb"));
}

#[test]
fn kde_refuses_censored_data() {
    let (dir, csv) = fixture();
    let out = ssd(&["fit", s(&csv), "--contaminant", "Cd", "--model", "kde", "--censored", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("KDE does not support censored data"));
}

#[test]
fn normal_fit_is_standardized() {
    let (dir, csv) = fixture();
    let o = dir.path().join("o");
    let out = ssd(&["fit", s(&csv), "--contaminant", "Cd", "--model", "normal", "--out", s(&o)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fit = read_json(o.join("fit.json"));
    assert!(fit["normal"]["mu_hat"].as_f64().unwrap().abs() < 1e-12);
    assert!((fit["normal"]["sigma_hat"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(o.join("density.csv").exists());
    let manifest = read_json(o.join("manifest.json"));
    assert_eq!(manifest["command"], "fit");
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|v| v == "fit.json"));
}

#[test]
fn median_of_normal_fit_is_the_log_mean() {
    let (dir, csv) = fixture();
    let o = dir.path().join("o");
    assert_eq!(code(&ssd(&["fit", s(&csv), "--contaminant", "Zn", "--model", "normal", "--out", s(&o)])), 0);
    let out = ssd(&["hc", s(&o.join("fit.json")), "--p", "0.5"]);
    assert_eq!(code(&out), 0);
    let hc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let mean = (100f64.log10() + 230f64.log10() + 80f64.log10()) / 3.0;
    assert!((hc["log10"]["point"].as_f64().unwrap() - mean).abs() < 1e-9);
    assert!(hc["standardized"]["point"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn hc_rejects_p_outside_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let chain = write_chain_file(dir.path(), vec![MixtureDraw::single(0.0, 1.0)], vec![Partition::new(vec![0, 0])]);
    for p in ["0", "1", "1.5", "-0.1"] {
        assert_eq!(code(&ssd(&["hc", s(&chain), "--p", p])), 2, "p = {p}");
    }
}

#[test]
fn single_atom_chain_hc5() {
    let dir = tempfile::tempdir().unwrap();
    let chain = write_chain_file(dir.path(), vec![MixtureDraw::single(0.0, 1.0)], vec![Partition::new(vec![0, 0])]);
    let out = ssd(&["hc", s(&chain), "--out", s(&dir.path().join("hc"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let hc = read_json(dir.path().join("hc").join("hc.json"));
    assert!((hc["standardized"]["point"].as_f64().unwrap() + 1.64485).abs() < 1e-5);
}

#[test]
fn degenerate_chain_clusters_to_its_partition() {
    let dir = tempfile::tempdir().unwrap();
    let labels = Partition::new(vec![0, 0, 1, 1, 1, 2]);
    let atom = Atom {
        weight: 1.0 / 3.0,
        mu: 0.0,
        sigma: 1.0,
    };
    let draw = MixtureDraw {
        atoms: vec![atom; 3],
        latent_u: 1.0,
        log_likelihood: 0.0,
    };
    let chain = write_chain_file(dir.path(), vec![draw; 5], vec![labels.clone(); 5]);
    for loss in ["vi", "binder", "zero-one"] {
        let o = dir.path().join(loss);
        let out = ssd(&["cluster", s(&chain), "--loss", loss, "--out", s(&o)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let doc = read_json(o.join("cluster.json"));
        let got: Vec<usize> = serde_json::from_value(doc["labels"].clone()).unwrap();
        assert_eq!(Partition::new(got).canonical(), labels.canonical(), "{loss}");
        assert_eq!(doc["expected_loss"].as_f64().unwrap(), 0.0);
        let psm = fs::read_to_string(o.join("psm.csv")).unwrap();
        assert_eq!(psm.lines().count(), 7);
    }
}

#[test]
fn missing_chain_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.tsv");
    assert_eq!(code(&ssd(&["cluster", s(&missing), "--out", s(&dir.path().join("o"))])), 2);
    assert_eq!(code(&ssd(&["hc", s(&missing)])), 2);
}

#[test]
fn simulate_needs_two_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssd(&["simulate", "--scenario", "a", "--S", "1", "--models", "normal", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn oracle_simulation_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("sim");
    let out = ssd(&["simulate", "--scenario", "c", "--sizes", "10,20", "--S", "3", "--models", "oracle", "--out", s(&o)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(o.join("metrics.json"));
    assert!((doc["true_hc5"].as_f64().unwrap() + 3.0364).abs() < 5e-4);
    for row in doc["rows"].as_array().unwrap() {
        assert_eq!(row["mae"].as_f64().unwrap(), 0.0);
        assert!(row["mise"].as_f64().unwrap() < 1e-20);
    }
    assert!(fs::read_to_string(o.join("replicates.csv")).unwrap().lines().count() == 7);
}

/// Ten species in two fixed groups, shared by every contaminant.
fn write_block_partitions(dir: &Path, contaminants: usize) -> PathBuf {
    let root = dir.join("partitions");
    fs::create_dir_all(&root).unwrap();
    let species: Vec<String> = (0..10).map(|i| format!("sp{i}")).collect();
    let groups = Partition::new((0..10).map(|i| usize::from(i >= 5)).collect());
    for c in 0..contaminants {
        let json = partition_to_json(&species, &groups).unwrap();
        fs::write(root.join(format!("c{c:02}.json")), json.to_string()).unwrap();
    }
    root
}

#[test]
fn tensor_selects_rank_two_on_block_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let parts = write_block_partitions(dir.path(), 13);
    let o = dir.path().join("t");
    let out = ssd(&["tensor", s(&parts), "--ranks", "1-4", "--max-iters", "2000", "--tol", "1e-14", "--out", s(&o)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(o.join("tensor.json"));
    assert_eq!(doc["rank"], 2);
    assert_eq!(doc["dims"], serde_json::json!([10, 10, 13]));
    let manifest = read_json(o.join("manifest.json"));
    assert_eq!(manifest["config"]["args"]["min_species"], 8);
    assert_eq!(manifest["config"]["args"]["min_contaminants"], 13);
}

#[test]
fn tensor_filter_drops_small_contaminants() {
    let dir = tempfile::tempdir().unwrap();
    let parts = write_block_partitions(dir.path(), 3);
    let species: Vec<String> = (0..7).map(|i| format!("sp{i}")).collect();
    let json = partition_to_json(&species, &Partition::new(vec![0; 7])).unwrap();
    fs::write(parts.join("small.json"), json.to_string()).unwrap();
    let o = dir.path().join("t");
    let out = ssd(&[
        "tensor", s(&parts), "--min-contaminants", "1", "--ranks", "1,2", "--folds", "3", "--max-iters", "100", "--out",
        s(&o),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let index = read_json(o.join("tensor_index.json"));
    let kept: Vec<String> = serde_json::from_value(index["contaminants"].clone()).unwrap();
    assert_eq!(kept, vec!["c00", "c01", "c02"]);
    assert_eq!(read_json(o.join("tensor.json"))["contaminants_read"], 4);
}

#[test]
fn report_concatenates_documents() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    fs::write(&a, r#"{"x": 1}"#).unwrap();
    let out = ssd(&["report", s(&a)]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["documents"][s(&a)]["x"], 1);
    assert_eq!(code(&ssd(&["report"])), 2);
}
