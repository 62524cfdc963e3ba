//! Cross-contaminant association tensor and its symmetric non-negative
//! PARAFAC decomposition `Y ~ [[A, A, C]]` over observed entries.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::error::{Error, Result};

/// Species-by-species-by-contaminant array with a missing-entry mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationTensor {
    pub species: Vec<String>,
    pub contaminants: Vec<String>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl AssociationTensor {
    /// Fully observed tensor from a dense `values[k][i][j]` layout.
    pub fn from_dense(species: Vec<String>, contaminants: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let (s, c) = (species.len(), contaminants.len());
        if values.len() != s * s * c {
            return Err(Error::invalid("dense values do not match the dimensions"));
        }
        Ok(AssociationTensor {
            species,
            contaminants,
            values,
            mask: vec![true; s * s * c],
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.species.len(), self.species.len(), self.contaminants.len())
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let s = self.species.len();
        (k * s + i) * s + j
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let idx = self.index(i, j, k);
        self.mask[idx].then(|| self.values[idx])
    }

    pub fn is_observed(&self, i: usize, j: usize, k: usize) -> bool {
        self.mask[self.index(i, j, k)]
    }

    /// Sets an entry and its mirror `(j, i, k)`; `None` marks both missing.
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: Option<f64>) {
        for idx in [self.index(i, j, k), self.index(j, i, k)] {
            self.mask[idx] = value.is_some();
            self.values[idx] = value.unwrap_or(0.0);
        }
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        1.0 - self.observed_count() as f64 / self.mask.len().max(1) as f64
    }

    /// Observed entries as `(i, j, k, value)`, in storage order.
    pub fn triplets(&self) -> Vec<(usize, usize, usize, f64)> {
        let (s, _, c) = self.dims();
        let mut out = Vec::new();
        for k in 0..c {
            for i in 0..s {
                for j in 0..s {
                    if let Some(v) = self.get(i, j, k) {
                        out.push((i, j, k, v));
                    }
                }
            }
        }
        out
    }

    /// Observed symmetric units `(i, j, k)` with `i <= j`.
    fn units(&self) -> Vec<(usize, usize, usize)> {
        self.triplets()
            .into_iter()
            .filter(|&(i, j, _, _)| i <= j)
            .map(|(i, j, k, _)| (i, j, k))
            .collect()
    }

    pub fn to_triplet_csv(&self) -> String {
        let mut out = String::from("i,j,k,value\n");
        for (i, j, k, v) in self.triplets() {
            out.push_str(&format!("{i},{j},{k},{v}\n"));
        }
        out
    }

    pub fn index_json(&self) -> serde_json::Value {
        serde_json::json!({ "species": self.species, "contaminants": self.contaminants })
    }

    /// Inverse of `to_triplet_csv` together with `index_json`.
    pub fn from_triplets(index: &serde_json::Value, csv_text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Index {
            species: Vec<String>,
            contaminants: Vec<String>,
        }
        let index: Index = serde_json::from_value(index.clone())?;
        let (s, c) = (index.species.len(), index.contaminants.len());
        let mut tensor = AssociationTensor {
            species: index.species,
            contaminants: index.contaminants,
            values: vec![0.0; s * s * c],
            mask: vec![false; s * s * c],
        };
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        for (row, record) in reader.deserialize::<(usize, usize, usize, f64)>().enumerate() {
            let (i, j, k, v) = record?;
            if i >= s || j >= s || k >= c {
                return Err(Error::Parse {
                    row: row + 2,
                    message: "index out of range".into(),
                });
            }
            let idx = tensor.index(i, j, k);
            tensor.values[idx] = v;
            tensor.mask[idx] = true;
        }
        Ok(tensor)
    }
}

/// One contaminant's partition of the species it was tested on.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminantPartition {
    pub contaminant: String,
    pub species: Vec<String>,
    pub partition: Partition,
}

pub fn build_tensor(partitions: &[ContaminantPartition], universe: &[String]) -> Result<AssociationTensor> {
    let position: HashMap<&str, usize> = universe.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if position.len() != universe.len() {
        return Err(Error::invalid("duplicate species in universe"));
    }
    let s = universe.len();
    let c = partitions.len();
    let mut tensor = AssociationTensor {
        species: universe.to_vec(),
        contaminants: partitions.iter().map(|p| p.contaminant.clone()).collect(),
        values: vec![0.0; s * s * c],
        mask: vec![false; s * s * c],
    };
    for (k, cp) in partitions.iter().enumerate() {
        if cp.species.len() != cp.partition.len() {
            return Err(Error::invalid(format!(
                "{}: species list and partition differ in length",
                cp.contaminant
            )));
        }
        let mut seen = HashSet::new();
        let idx: Vec<usize> = cp
            .species
            .iter()
            .map(|name| {
                if !seen.insert(name.as_str()) {
                    return Err(Error::invalid(format!("{}: duplicate species `{name}`", cp.contaminant)));
                }
                position
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("{}: species `{name}` not in universe", cp.contaminant)))
            })
            .collect::<Result<_>>()?;
        let labels = cp.partition.labels();
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                let v = if labels[a] == labels[b] { 1.0 } else { 0.0 };
                let e = tensor.index(i, j, k);
                tensor.values[e] = v;
                tensor.mask[e] = true;
            }
        }
    }
    Ok(tensor)
}

/// Keeps contaminants tested on at least `min_species` species, then species
/// tested for at least `min_contaminants` of the kept contaminants.
pub fn filter_partitions(
    partitions: &[ContaminantPartition],
    min_species: usize,
    min_contaminants: usize,
) -> (Vec<ContaminantPartition>, Vec<String>) {
    let kept: Vec<&ContaminantPartition> = partitions.iter().filter(|p| p.species.len() >= min_species).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &kept {
        for s in &p.species {
            *counts.entry(s.as_str()).or_default() += 1;
        }
    }
    let universe: Vec<String> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_contaminants)
        .map(|(s, _)| s.to_string())
        .collect();
    let keep: HashSet<&str> = universe.iter().map(String::as_str).collect();
    let restricted = kept
        .into_iter()
        .map(|p| {
            let (species, labels): (Vec<String>, Vec<usize>) = p
                .species
                .iter()
                .zip(p.partition.labels())
                .filter(|(s, _)| keep.contains(s.as_str()))
                .map(|(s, &l)| (s.clone(), l))
                .unzip();
            ContaminantPartition {
                contaminant: p.contaminant.clone(),
                species,
                partition: Partition::new(labels),
            }
        })
        .collect();
    (restricted, universe)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// CSV with a leading name column and `c1..cR` headers.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("name");
        for r in 0..self.cols {
            out.push_str(&format!(",c{}", r + 1));
        }
        out.push('\n');
        for (i, name) in names.iter().enumerate().take(self.rows) {
            out.push_str(name);
            for v in self.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSet {
    pub a: Matrix,
    pub c: Matrix,
    pub rank: usize,
    /// Relative Frobenius error on observed entries.
    pub fit: f64,
    /// Masked objective at initialization and after every iteration.
    pub objective_trace: Vec<f64>,
}

impl FactorSet {
    pub fn reconstruct(&self, i: usize, j: usize, k: usize) -> f64 {
        let (ai, aj, ck) = (self.a.row(i), self.a.row(j), self.c.row(k));
        (0..self.rank).map(|r| ai[r] * aj[r] * ck[r]).sum()
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NncpConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub starts: usize,
}

impl Default for NncpConfig {
    fn default() -> Self {
        NncpConfig {
            max_iters: 500,
            tol: 1e-8,
            starts: 4,
        }
    }
}

/// An observed entry `(i, j, k, value)`.
type Entry = (usize, usize, usize, f64);

/// Observed entries grouped by first species index and by contaminant.
struct Observed {
    by_i: Vec<Vec<(usize, usize, f64)>>,
    by_k: Vec<Vec<(usize, usize, f64)>>,
    all: Vec<(usize, usize, usize, f64)>,
}

impl Observed {
    fn new(tensor: &AssociationTensor) -> Self {
        let (s, _, c) = tensor.dims();
        let all = tensor.triplets();
        let mut by_i = vec![Vec::new(); s];
        let mut by_k = vec![Vec::new(); c];
        for &(i, j, k, v) in &all {
            by_i[i].push((j, k, v));
            by_k[k].push((i, j, v));
        }
        Observed { by_i, by_k, all }
    }

    fn objective(&self, a: &Matrix, c: &Matrix) -> f64 {
        let r = a.cols;
        self.all
            .iter()
            .map(|&(i, j, k, y)| {
                let (ai, aj, ck) = (a.row(i), a.row(j), c.row(k));
                let fit: f64 = (0..r).map(|q| ai[q] * aj[q] * ck[q]).sum();
                (y - fit) * (y - fit)
            })
            .sum()
    }
}

/// Solves the symmetric system `g x = h` by Gaussian elimination with
/// partial pivoting; near-singular pivots get a small ridge.
fn solve(g: &[f64], h: &[f64], n: usize) -> Vec<f64> {
    let scale = (0..n).map(|i| g[i * n + i].abs()).fold(0.0, f64::max).max(1e-300);
    let mut m: Vec<f64> = g.to_vec();
    let mut b = h.to_vec();
    for i in 0..n {
        m[i * n + i] += 1e-13 * scale;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .expect("non-empty");
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = m[col * n + col];
        if d.abs() < 1e-300 {
            continue;
        }
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let d = m[row * n + row];
        if d.abs() < 1e-300 {
            continue;
        }
        let s: f64 = (row + 1..n).map(|k| m[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / d;
    }
    x
}

/// Lawson-Hanson active set NNLS for `min ||Z x - y||^2` given the normal
/// equations `g = Z'Z`, `h = Z'y`.
fn nnls(g: &[f64], h: &[f64], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let scale = h.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let eps = 1e-12 * scale.max(1e-300);
    let gradient = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| h[i] - (0..n).map(|j| g[i * n + j] * x[j]).sum::<f64>())
            .collect()
    };
    for _ in 0..3 * n + 10 {
        let w = gradient(&x);
        let candidate = (0..n)
            .filter(|&i| !passive[i] && w[i] > eps)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(t) = candidate else { break };
        passive[t] = true;
        loop {
            let p: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let np = p.len();
            let gp: Vec<f64> = p.iter().flat_map(|&a| p.iter().map(move |&b| g[a * n + b])).collect();
            let hp: Vec<f64> = p.iter().map(|&a| h[a]).collect();
            let zp = solve(&gp, &hp, np);
            if zp.iter().all(|&v| v > 0.0) {
                for (&i, &v) in p.iter().zip(&zp) {
                    x[i] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&i, &v) in p.iter().zip(&zp) {
                if v <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - v));
                }
            }
            for (&i, &v) in p.iter().zip(&zp) {
                x[i] += alpha * (v - x[i]);
                if x[i] <= 1e-300 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&b| b) {
                break;
            }
        }
    }
    x
}

/// A candidate from row-wise NNLS against `A` frozen in the paired mode.
fn a_candidate(obs: &Observed, a: &Matrix, c: &Matrix) -> Matrix {
    let r = a.cols;
    let mut out = Matrix::zeros(a.rows, r);
    let mut g = vec![0.0; r * r];
    let mut h = vec![0.0; r];
    let mut z = vec![0.0; r];
    for i in 0..a.rows {
        if obs.by_i[i].is_empty() {
            out.row_mut(i).copy_from_slice(a.row(i));
            continue;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        h.iter_mut().for_each(|v| *v = 0.0);
        for &(j, k, y) in &obs.by_i[i] {
            let (aj, ck) = (a.row(j), c.row(k));
            for q in 0..r {
                z[q] = aj[q] * ck[q];
            }
            for p in 0..r {
                h[p] += y * z[p];
                for q in 0..r {
                    g[p * r + q] += z[p] * z[q];
                }
            }
        }
        out.row_mut(i).copy_from_slice(&nnls(&g, &h, r));
    }
    out
}

fn c_update(obs: &Observed, a: &Matrix, c: &Matrix) -> Matrix {
    let r = a.cols;
    let mut out = Matrix::zeros(c.rows, r);
    let mut g = vec![0.0; r * r];
    let mut h = vec![0.0; r];
    let mut z = vec![0.0; r];
    for k in 0..c.rows {
        if obs.by_k[k].is_empty() {
            out.row_mut(k).copy_from_slice(c.row(k));
            continue;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        h.iter_mut().for_each(|v| *v = 0.0);
        for &(i, j, y) in &obs.by_k[k] {
            let (ai, aj) = (a.row(i), a.row(j));
            for q in 0..r {
                z[q] = ai[q] * aj[q];
            }
            for p in 0..r {
                h[p] += y * z[p];
                for q in 0..r {
                    g[p * r + q] += z[p] * z[q];
                }
            }
        }
        out.row_mut(k).copy_from_slice(&nnls(&g, &h, r));
    }
    out
}

fn blend(old: &Matrix, new: &Matrix, t: f64) -> Matrix {
    Matrix {
        rows: old.rows,
        cols: old.cols,
        data: old.data.iter().zip(&new.data).map(|(o, n)| o + t * (n - o)).collect(),
    }
}

fn extrapolate(start: &Matrix, end: &Matrix, step: f64) -> Matrix {
    let mut out = blend(start, end, 1.0 + step);
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn decompose_from(obs: &Observed, mut a: Matrix, mut c: Matrix, config: &NncpConfig) -> (Matrix, Matrix, Vec<f64>) {
    let mut current = obs.objective(&a, &c);
    let mut trace = vec![current];
    for iter in 0..config.max_iters {
        let previous = current;
        let (a_start, c_start) = (a.clone(), c.clone());
        // A step: move toward the candidate, halving the step until the
        // objective does not increase.
        let candidate = a_candidate(obs, &a, &c);
        let mut t = 1.0;
        for _ in 0..30 {
            let trial = blend(&a, &candidate, t);
            let value = obs.objective(&trial, &c);
            if value <= current {
                a = trial;
                current = value;
                break;
            }
            t *= 0.5;
        }
        let c_new = c_update(obs, &a, &c);
        let value = obs.objective(&a, &c_new);
        if value <= current {
            c = c_new;
            current = value;
        }
        // Extrapolate along the sweep's displacement, projected onto the orthant.
        if iter > 0 {
            let step = ((iter + 1) as f64).cbrt();
            let a_trial = extrapolate(&a_start, &a, step);
            let c_trial = extrapolate(&c_start, &c, step);
            let value = obs.objective(&a_trial, &c_trial);
            if value < current {
                a = a_trial;
                c = c_trial;
                current = value;
            }
        }
        trace.push(current);
        if current <= 1e-300 || (previous - current) <= config.tol * previous {
            break;
        }
    }
    (a, c, trace)
}

/// Masked symmetric non-negative PARAFAC at rank `rank`; the best of
/// `config.starts` uniform(0,1) initializations, start `s` using stream `s`
/// of a generator seeded with `seed`.
pub fn nncp_decompose(tensor: &AssociationTensor, rank: usize, seed: u64, config: &NncpConfig) -> Result<FactorSet> {
    if rank == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    let obs = Observed::new(tensor);
    if obs.all.is_empty() {
        return Err(Error::invalid("tensor has no observed entries"));
    }
    let (s, _, c) = tensor.dims();
    let starts = config.starts.max(1);
    let runs: Vec<(Matrix, Matrix, Vec<f64>)> = (0..starts)
        .map(|start| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(start as u64);
            let mut init = |rows: usize| Matrix {
                rows,
                cols: rank,
                data: (0..rows * rank).map(|_| rng.random::<f64>()).collect(),
            };
            let a0 = init(s);
            let c0 = init(c);
            decompose_from(&obs, a0, c0, config)
        })
        .collect();
    let (a, c, trace) = runs
        .into_iter()
        .reduce(|best, run| if run.2.last() < best.2.last() { run } else { best })
        .expect("at least one start");
    let norm: f64 = obs.all.iter().map(|e| e.3 * e.3).sum();
    let objective = *trace.last().expect("non-empty");
    let fit = if norm > 0.0 { (objective / norm).sqrt() } else { objective.sqrt() };
    Ok(FactorSet { a, c, rank, fit, objective_trace: trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub ranks: Vec<usize>,
    /// Held-out Frobenius error, indexed `[rank][fold]`.
    pub fold_errors: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub minimizer: usize,
    pub chosen: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub holdout_fraction: Option<f64>,
    pub nncp: NncpConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            holdout_fraction: None,
            nncp: NncpConfig::default(),
        }
    }
}

/// Relative held-out error treated as zero when comparing ranks.
pub const RESOLUTION: f64 = 1e-8;

/// K-fold held-out error for each rank; selects the smallest rank whose mean
/// error lies within the 95% interval of the best rank.
pub fn cv_rank_select(tensor: &AssociationTensor, ranks: &[usize], config: &CvConfig, seed: u64) -> Result<CvResult> {
    if ranks.is_empty() {
        return Err(Error::invalid("rank grid is empty"));
    }
    if ranks.windows(2).any(|w| w[1] <= w[0]) || ranks[0] == 0 {
        return Err(Error::invalid("rank grid must be positive and increasing"));
    }
    let k = config.folds;
    if k < 2 {
        return Err(Error::invalid("at least 2 folds are required"));
    }
    let fraction = config.holdout_fraction.unwrap_or(1.0 / k as f64);
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
    }
    let mut units = tensor.units();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);
    let size = ((fraction * units.len() as f64).round() as usize).max(1);
    let (s, _, c) = tensor.dims();
    let species_seen: Vec<bool> = Observed::new(tensor).by_i.iter().map(|e| !e.is_empty()).collect();
    let folds: Vec<(AssociationTensor, Vec<Entry>)> = (0..k)
        .map(|f| {
            let held: Vec<(usize, usize, usize)> =
                (0..size).map(|m| units[(f * size + m) % units.len()]).collect();
            let mut train = tensor.clone();
            let mut test = Vec::new();
            for &(i, j, kk) in &held {
                let y = tensor.get(i, j, kk).expect("unit is observed");
                test.push((i, j, kk, y));
                if i != j {
                    test.push((j, i, kk, y));
                }
                train.set(i, j, kk, None);
            }
            let obs = Observed::new(&train);
            let empty_species = (0..s).any(|i| species_seen[i] && obs.by_i[i].is_empty());
            let empty_contaminant = (0..c).any(|kk| obs.by_k[kk].is_empty());
            if empty_species || empty_contaminant {
                return Err(Error::invalid(format!("holdout fold {f} leaves a mode empty")));
            }
            Ok((train, test))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..ranks.len()).flat_map(|r| (0..k).map(move |f| (r, f))).collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(r, f)| {
            let (train, test) = &folds[f];
            let fit = nncp_decompose(train, ranks[r], seed.wrapping_add(f as u64), &config.nncp)?;
            Ok(test
                .iter()
                .map(|&(i, j, kk, y)| (fit.reconstruct(i, j, kk) - y).powi(2))
                .sum::<f64>()
                .sqrt())
        })
        .collect::<Result<_>>()?;
    let fold_errors: Vec<Vec<f64>> = errors.chunks(k).map(<[f64]>::to_vec).collect();
    let mut mean = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for e in &fold_errors {
        let n = e.len() as f64;
        let m = e.iter().sum::<f64>() / n;
        let sd = (e.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
        let half = 1.96 * sd / n.sqrt();
        mean.push(m);
        lower.push(m - half);
        upper.push(m + half);
    }
    let best = (0..ranks.len())
        .min_by(|&a, &b| mean[a].total_cmp(&mean[b]))
        .expect("non-empty grid");
    // Errors below the numerical resolution of the fit count as ties.
    let resolution = RESOLUTION * tensor.triplets().iter().map(|e| e.3 * e.3).sum::<f64>().sqrt();
    let chosen = (0..ranks.len())
        .find(|&r| mean[r] <= upper[best].max(mean[best] + resolution))
        .unwrap_or(best);
    Ok(CvResult {
        ranks: ranks.to_vec(),
        fold_errors,
        mean,
        lower,
        upper,
        minimizer: ranks[best],
        chosen: ranks[chosen],
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Threshold {
    /// Indices in the upper cluster, ascending.
    pub members: Vec<usize>,
    /// The two clusters' ranges do not overlap.
    pub separated: bool,
    pub degenerate: bool,
}

/// Exact one-dimensional 2-means by scanning every split of the sorted values.
pub fn kmeans2_threshold(weights: &[f64]) -> Result<Threshold> {
    if weights.len() < 2 {
        return Err(Error::invalid("at least 2 weights are required"));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("non-finite weight"));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return Ok(Threshold {
            members: Vec::new(),
            separated: false,
            degenerate: true,
        });
    }
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, &v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let sse = |lo: usize, hi: usize| {
        let m = (hi - lo) as f64;
        let s = prefix[hi] - prefix[lo];
        (prefix_sq[hi] - prefix_sq[lo]) - s * s / m
    };
    let split = (1..n)
        .min_by(|&a, &b| (sse(0, a) + sse(a, n)).total_cmp(&(sse(0, b) + sse(b, n))))
        .expect("n >= 2");
    let mut members: Vec<usize> = order[split..].to_vec();
    members.sort_unstable();
    Ok(Threshold {
        members,
        separated: sorted[split - 1] < sorted[split],
        degenerate: false,
    })
}
