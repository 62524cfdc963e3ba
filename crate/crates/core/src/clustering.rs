//! Partition point estimation from posterior allocations.
//!
//! The estimate minimizes the posterior expected loss over all partitions,
//! searched greedily: sequential allocation in a random order, followed by
//! item-by-item reassignment sweeps until nothing moves, over several
//! restarts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nrmi_mixture::PosteriorChain;

/// Cluster labels for `n` items. Labels are arbitrary integers; two items are
/// together exactly when their labels agree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Self {
        Partition { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Relabels clusters `0, 1, ...` in order of first appearance.
    pub fn canonical(&self) -> Partition {
        let mut map = HashMap::new();
        let labels = self
            .labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Partition { labels }
    }

    pub fn together(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Binder,
    VI,
    ZeroOne,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binder" => Ok(LossKind::Binder),
            "vi" => Ok(LossKind::VI),
            "zero-one" | "zeroone" | "0-1" => Ok(LossKind::ZeroOne),
            other => Err(Error::invalid(format!("unknown loss `{other}`"))),
        }
    }
}

/// Posterior co-clustering probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Dense CSV; with names, a header row and a leading name column.
    pub fn to_csv(&self, names: Option<&[String]>) -> String {
        let mut out = String::new();
        if let Some(names) = names {
            out.push_str("species");
            for name in names {
                out.push(',');
                out.push_str(&csv_field(name));
            }
            out.push('\n');
        }
        for i in 0..self.n {
            if let Some(names) = names {
                out.push_str(&csv_field(&names[i]));
                out.push(',');
            }
            let row: Vec<String> = (0..self.n).map(|j| self.get(i, j).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn psm(chain: &PosteriorChain) -> Result<SimilarityMatrix> {
    psm_from_partitions(&chain.allocations)
}

pub fn psm_from_partitions(draws: &[Partition]) -> Result<SimilarityMatrix> {
    let first = draws.first().ok_or_else(|| Error::invalid("no allocations"))?;
    let n = first.len();
    if draws.iter().any(|d| d.len() != n) {
        return Err(Error::invalid("allocations differ in length"));
    }
    let mut counts = vec![0usize; n * n];
    for d in draws {
        for i in 0..n {
            for j in i + 1..n {
                if d.together(i, j) {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let t = draws.len() as f64;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let p = counts[i * n + j] as f64 / t;
            values[i * n + j] = p;
            values[j * n + i] = p;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

fn check_lengths(a: &Partition, b: &Partition) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "partition lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn xlogx(m: usize) -> f64 {
    if m <= 1 {
        0.0
    } else {
        let m = m as f64;
        m * m.ln()
    }
}

/// Variation of information in nats, `H(a) + H(b) - 2 I(a, b)`.
pub fn vi_loss(a: &Partition, b: &Partition) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut sizes_a: HashMap<usize, usize> = HashMap::new();
    let mut sizes_b: HashMap<usize, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        *sizes_a.entry(la).or_default() += 1;
        *sizes_b.entry(lb).or_default() += 1;
        *joint.entry((la, lb)).or_default() += 1;
    }
    let sa: f64 = sizes_a.values().map(|&m| xlogx(m)).sum();
    let sb: f64 = sizes_b.values().map(|&m| xlogx(m)).sum();
    let sj: f64 = joint.values().map(|&m| xlogx(m)).sum();
    Ok(((sa + sb - 2.0 * sj) / n as f64).max(0.0))
}

/// Number of item pairs on which `a` and `b` disagree about co-clustering.
pub fn binder_loss(a: &Partition, b: &Partition) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len();
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if a.together(i, j) != b.together(i, j) {
                count += 1;
            }
        }
    }
    Ok(count as f64)
}

/// Binder expected loss in closed form from the PSM.
pub fn expected_binder(candidate: &Partition, psm: &SimilarityMatrix) -> f64 {
    let n = candidate.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let p = psm.get(i, j);
            total += if candidate.together(i, j) { 1.0 - p } else { p };
        }
    }
    total
}

pub fn expected_vi(candidate: &Partition, draws: &[Partition]) -> Result<f64> {
    for d in draws {
        check_lengths(candidate, d)?;
    }
    Ok(CanonicalDraws::new(draws).expected_vi(candidate))
}

/// Draws relabeled `0..k`, with their entropy terms, for repeated VI
/// evaluation.
struct CanonicalDraws {
    labels: Vec<Vec<usize>>,
    widths: Vec<usize>,
    self_terms: Vec<f64>,
}

impl CanonicalDraws {
    fn new(draws: &[Partition]) -> Self {
        let labels: Vec<Vec<usize>> = draws.iter().map(|d| d.canonical().labels).collect();
        let widths: Vec<usize> = labels.iter().map(|l| l.iter().max().map_or(0, |m| m + 1)).collect();
        let self_terms = labels
            .iter()
            .zip(&widths)
            .map(|(l, &w)| {
                let mut sizes = vec![0usize; w];
                l.iter().for_each(|&c| sizes[c] += 1);
                sizes.into_iter().map(xlogx).sum()
            })
            .collect();
        CanonicalDraws {
            labels,
            widths,
            self_terms,
        }
    }

    fn expected_vi(&self, candidate: &Partition) -> f64 {
        let c = candidate.canonical().labels;
        let n = c.len();
        if n == 0 || self.labels.is_empty() {
            return 0.0;
        }
        let kc = c.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; kc];
        c.iter().for_each(|&l| sizes[l] += 1);
        let own: f64 = sizes.into_iter().map(xlogx).sum();
        let mut table = Vec::new();
        let mut total = 0.0;
        for ((d, &w), &term) in self.labels.iter().zip(&self.widths).zip(&self.self_terms) {
            table.clear();
            table.resize(kc * w, 0usize);
            for (&a, &b) in c.iter().zip(d) {
                table[a * w + b] += 1;
            }
            let joint: f64 = table.iter().map(|&m| xlogx(m)).sum();
            total += ((own + term - 2.0 * joint) / n as f64).max(0.0);
        }
        total / self.labels.len() as f64
    }
}

pub fn expected_zero_one(candidate: &Partition, draws: &[Partition]) -> f64 {
    let c = candidate.canonical();
    let hits = draws.iter().filter(|d| d.canonical() == c).count();
    1.0 - hits as f64 / draws.len() as f64
}

/// Posterior expected loss of `candidate` under the draws.
pub fn expected_loss(candidate: &Partition, draws: &[Partition], loss: LossKind) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::invalid("no draws"));
    }
    for d in draws {
        check_lengths(candidate, d)?;
    }
    match loss {
        LossKind::Binder => Ok(expected_binder(candidate, &psm_from_partitions(draws)?)),
        LossKind::VI => expected_vi(candidate, draws),
        LossKind::ZeroOne => Ok(expected_zero_one(candidate, draws)),
    }
}

pub fn expected_loss_chain(candidate: &Partition, chain: &PosteriorChain, loss: LossKind) -> Result<f64> {
    expected_loss(candidate, &chain.allocations, loss)
}

/// Incremental bookkeeping for the greedy search. `deltas` fills, for every
/// cluster slot, the change in (scaled) expected loss from adding `item` to
/// that slot; empty slots stand for a new cluster.
trait SearchLoss: Sync {
    fn deltas(&self, item: usize, state: &WorkingPartition, out: &mut [f64]);
    fn add(&mut self, item: usize, slot: usize);
    fn remove(&mut self, item: usize, slot: usize);
    fn reset(&mut self);
}

#[derive(Clone)]
struct WorkingPartition {
    labels: Vec<Option<usize>>,
    sizes: Vec<usize>,
}

impl WorkingPartition {
    fn new(n: usize) -> Self {
        WorkingPartition {
            labels: vec![None; n],
            sizes: vec![0; n],
        }
    }

    fn empty_slot(&self) -> usize {
        self.sizes.iter().position(|&s| s == 0).expect("n slots for n items")
    }

    fn to_partition(&self) -> Partition {
        Partition::new(self.labels.iter().map(|l| l.expect("all items allocated")).collect()).canonical()
    }
}

struct BinderSearch<'a> {
    psm: &'a SimilarityMatrix,
}

impl SearchLoss for BinderSearch<'_> {
    fn deltas(&self, item: usize, state: &WorkingPartition, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, label) in state.labels.iter().enumerate() {
            if let (Some(slot), true) = (label, j != item) {
                out[*slot] += 1.0 - 2.0 * self.psm.get(item, j);
            }
        }
    }
    fn add(&mut self, _: usize, _: usize) {}
    fn remove(&mut self, _: usize, _: usize) {}
    fn reset(&mut self) {}
}

struct ViSearch {
    /// Per draw, canonical label of every item.
    draw_labels: Vec<Vec<usize>>,
    n_draw_labels: Vec<usize>,
    /// Per draw, `slots x draw_labels` contingency counts for allocated items.
    counts: Vec<Vec<u32>>,
    /// `increment[m] = (m + 1) ln (m + 1) - m ln m`.
    increment: Vec<f64>,
    n_slots: usize,
}

impl ViSearch {
    fn new(draws: &[Partition]) -> Self {
        let n = draws[0].len();
        let draw_labels: Vec<Vec<usize>> = draws.iter().map(|d| d.canonical().labels).collect();
        let n_draw_labels: Vec<usize> = draw_labels
            .iter()
            .map(|l| l.iter().max().map_or(0, |m| m + 1))
            .collect();
        let counts = n_draw_labels.iter().map(|&l| vec![0u32; n * l]).collect();
        let increment = (0..=n).map(|m| xlogx(m + 1) - xlogx(m)).collect();
        ViSearch {
            draw_labels,
            n_draw_labels,
            counts,
            increment,
            n_slots: n,
        }
    }
}

impl SearchLoss for ViSearch {
    fn deltas(&self, item: usize, state: &WorkingPartition, out: &mut [f64]) {
        let t = self.draw_labels.len() as f64;
        for (slot, v) in out.iter_mut().enumerate() {
            *v = t * self.increment[state.sizes[slot]];
        }
        for (d, labels) in self.draw_labels.iter().enumerate() {
            let l = labels[item];
            let width = self.n_draw_labels[d];
            let counts = &self.counts[d];
            for (slot, v) in out.iter_mut().enumerate() {
                if state.sizes[slot] > 0 {
                    *v -= 2.0 * self.increment[counts[slot * width + l] as usize];
                }
            }
        }
    }

    fn add(&mut self, item: usize, slot: usize) {
        for (d, labels) in self.draw_labels.iter().enumerate() {
            self.counts[d][slot * self.n_draw_labels[d] + labels[item]] += 1;
        }
    }

    fn remove(&mut self, item: usize, slot: usize) {
        for (d, labels) in self.draw_labels.iter().enumerate() {
            self.counts[d][slot * self.n_draw_labels[d] + labels[item]] -= 1;
        }
    }

    fn reset(&mut self) {
        for c in &mut self.counts {
            c.iter_mut().for_each(|v| *v = 0);
        }
        let _ = self.n_slots;
    }
}

/// Best slot for `item`: the minimum delta over occupied slots and one empty
/// slot. `prefer` wins ties within `1e-12`.
fn best_slot(deltas: &[f64], state: &WorkingPartition, prefer: Option<usize>) -> usize {
    let empty = state.empty_slot();
    let mut best = empty;
    let mut best_val = deltas[empty];
    for (slot, &v) in deltas.iter().enumerate() {
        if state.sizes[slot] > 0 && v < best_val {
            best = slot;
            best_val = v;
        }
    }
    if let Some(p) = prefer {
        let pv = deltas[p];
        if pv <= best_val + 1e-12 {
            return p;
        }
    }
    best
}

fn run_restart(loss: &mut dyn SearchLoss, n: usize, rng: &mut ChaCha20Rng) -> Partition {
    loss.reset();
    let mut state = WorkingPartition::new(n);
    let mut deltas = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &item in &order {
        loss.deltas(item, &state, &mut deltas);
        let slot = best_slot(&deltas, &state, None);
        state.labels[item] = Some(slot);
        state.sizes[slot] += 1;
        loss.add(item, slot);
    }
    for _ in 0..1000 {
        let mut changed = false;
        order.shuffle(rng);
        for &item in &order {
            let current = state.labels[item].expect("allocated");
            state.labels[item] = None;
            state.sizes[current] -= 1;
            loss.remove(item, current);
            loss.deltas(item, &state, &mut deltas);
            // An emptied slot is itself the new-cluster option.
            let prefer = if state.sizes[current] == 0 {
                Some(state.empty_slot())
            } else {
                Some(current)
            };
            let slot = best_slot(&deltas, &state, prefer);
            if slot != current && !(state.sizes[current] == 0 && state.sizes[slot] == 0) {
                changed = true;
            }
            state.labels[item] = Some(slot);
            state.sizes[slot] += 1;
            loss.add(item, slot);
        }
        if !changed {
            break;
        }
    }
    state.to_partition()
}

/// Greedy minimizer of the posterior expected loss over `draws`; also returns
/// its expected loss.
pub fn greedy_from_draws(draws: &[Partition], loss: LossKind, restarts: usize, seed: u64) -> Result<(Partition, f64)> {
    let first = draws.first().ok_or_else(|| Error::invalid("no draws"))?;
    let n = first.len();
    if draws.iter().any(|d| d.len() != n) {
        return Err(Error::invalid("allocations differ in length"));
    }
    // Distinct visited partitions, with frequencies, in order of first visit.
    let mut visited: Vec<(Partition, usize)> = Vec::new();
    let mut index: HashMap<Partition, usize> = HashMap::new();
    for d in draws {
        let c = d.canonical();
        match index.get(&c) {
            Some(&k) => visited[k].1 += 1,
            None => {
                index.insert(c.clone(), visited.len());
                visited.push((c, 1));
            }
        }
    }
    if loss == LossKind::ZeroOne || n == 0 {
        let (best, hits) = visited
            .iter()
            .fold(None::<&(Partition, usize)>, |acc, v| match acc {
                Some(a) if a.1 >= v.1 => Some(a),
                _ => Some(v),
            })
            .expect("non-empty");
        return Ok((best.clone(), 1.0 - *hits as f64 / draws.len() as f64));
    }

    let psm = psm_from_partitions(draws)?;
    let canonical = CanonicalDraws::new(draws);
    let score = |p: &Partition| -> Result<f64> {
        match loss {
            LossKind::Binder => Ok(expected_binder(p, &psm)),
            _ => Ok(canonical.expected_vi(p)),
        }
    };
    let restarts = restarts.max(1);
    let candidates: Vec<Partition> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            match loss {
                LossKind::Binder => run_restart(&mut BinderSearch { psm: &psm }, n, &mut rng),
                _ => run_restart(&mut ViSearch::new(draws), n, &mut rng),
            }
        })
        .collect();
    let scored: Vec<(f64, Partition)> = candidates
        .into_par_iter()
        .chain(visited.into_par_iter().map(|(p, _)| p))
        .map(|p| score(&p).map(|s| (s, p)))
        .collect::<Result<_>>()?;
    // First minimum in restart order, then visit order.
    let mut best = &scored[0];
    for s in &scored[1..] {
        if s.0 < best.0 - 1e-12 {
            best = s;
        }
    }
    Ok((best.1.clone(), best.0))
}

/// Every partition of `n` items, as restricted growth strings in lexicographic order.
pub fn enumerate_partitions(n: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn extend(pos: usize, max: usize, labels: &mut Vec<usize>, out: &mut Vec<Partition>) {
        if pos == labels.len() {
            out.push(Partition::new(labels.clone()));
            return;
        }
        for l in 0..=max + 1 {
            labels[pos] = l;
            extend(pos + 1, max.max(l), labels, out);
        }
    }
    if n == 0 {
        return vec![Partition::new(Vec::new())];
    }
    extend(1, 0, &mut labels, &mut out);
    out
}

pub fn greedy_point_estimate(chain: &PosteriorChain, loss: LossKind, restarts: usize, seed: u64) -> Result<Partition> {
    greedy_from_draws(&chain.allocations, loss, restarts, seed).map(|(p, _)| p)
}

/// `{species: label}` map of a partition.
pub fn partition_to_json(species: &[String], partition: &Partition) -> Result<serde_json::Value> {
    if species.len() != partition.len() {
        return Err(Error::invalid("species list and partition differ in length"));
    }
    let map: BTreeMap<&str, usize> = species
        .iter()
        .map(String::as_str)
        .zip(partition.labels().iter().copied())
        .collect();
    if map.len() != species.len() {
        return Err(Error::invalid("duplicate species in partition"));
    }
    Ok(serde_json::to_value(map)?)
}

/// Reads a `{species: label}` map; species are returned sorted by name.
pub fn partition_from_json(text: &str) -> Result<(Vec<String>, Partition)> {
    let map: BTreeMap<String, usize> = serde_json::from_str(text)?;
    let (species, labels): (Vec<String>, Vec<usize>) = map.into_iter().unzip();
    Ok((species, Partition::new(labels)))
}
