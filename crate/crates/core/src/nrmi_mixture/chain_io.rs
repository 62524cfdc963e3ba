//! Line-delimited chain files.
//!
//! ```text
//! # ssd-chain schema=1
//! # meta {"prior":...,"mcmc":...,"sample":...,"species":[...],...}
//! # weights<TAB>mus<TAB>sigmas<TAB>u<TAB>loglik<TAB>allocation
//! 0.61,0.39<TAB>-0.2,1.1<TAB>0.8,0.4<TAB>3.2<TAB>-27.5<TAB>0,0,1,...
//! ```
//!
//! Lists are comma separated; floats use the shortest representation that
//! round-trips, so the same chain always serializes to the same bytes.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Atom, MCMCConfig, MixtureDraw, PosteriorChain, PriorConfig};
use crate::clustering::Partition;
use crate::data_model::StandardizedSample;
use crate::error::{Error, Result};

pub const CHAIN_SCHEMA: u32 = 1;
const MAGIC: &str = "# ssd-chain schema=";

/// Run context stored in the chain header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub prior: PriorConfig,
    pub mcmc: MCMCConfig,
    #[serde(default)]
    pub contaminant: Option<String>,
    #[serde(default)]
    pub species: Vec<String>,
    #[serde(default)]
    pub sample: Option<StandardizedSample>,
    #[serde(default)]
    pub manifest: Option<String>,
}

impl ChainMeta {
    pub fn for_chain(chain: &PosteriorChain) -> Self {
        ChainMeta {
            prior: chain.prior,
            mcmc: chain.mcmc,
            contaminant: None,
            species: Vec::new(),
            sample: None,
            manifest: None,
        }
    }
}

fn join<T: std::fmt::Display>(values: impl Iterator<Item = T>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_chain<W: Write>(mut out: W, chain: &PosteriorChain, meta: &ChainMeta) -> Result<()> {
    writeln!(out, "{MAGIC}{CHAIN_SCHEMA}")?;
    writeln!(out, "# meta {}", serde_json::to_string(meta)?)?;
    writeln!(out, "# weights\tmus\tsigmas\tu\tloglik\tallocation")?;
    for (draw, alloc) in chain.draws.iter().zip(&chain.allocations) {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            join(draw.atoms.iter().map(|a| a.weight)),
            join(draw.atoms.iter().map(|a| a.mu)),
            join(draw.atoms.iter().map(|a| a.sigma)),
            draw.latent_u,
            draw.log_likelihood,
            join(alloc.labels().iter()),
        )?;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(field: &str, row: usize) -> Result<Vec<T>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|v| {
            v.parse().map_err(|_| Error::Parse {
                row,
                message: format!("bad list value `{v}`"),
            })
        })
        .collect()
}

pub fn read_chain<R: BufRead>(input: R) -> Result<(PosteriorChain, ChainMeta)> {
    let mut lines = input.lines().enumerate();
    let bad = |row: usize, message: &str| Error::Parse {
        row,
        message: message.to_string(),
    };
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty chain file"))?;
    let first = first?;
    let version = first
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad(1, "not a chain file"))?;
    if version.trim() != CHAIN_SCHEMA.to_string() {
        return Err(bad(1, &format!("unsupported chain schema `{version}`")));
    }
    let (_, meta_line) = lines.next().ok_or_else(|| bad(2, "missing meta line"))?;
    let meta_line = meta_line?;
    let meta_json = meta_line
        .strip_prefix("# meta ")
        .ok_or_else(|| bad(2, "missing meta line"))?;
    let meta: ChainMeta = serde_json::from_str(meta_json)?;

    let mut draws = Vec::new();
    let mut allocations = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        let line = line?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(bad(row, "expected 6 tab-separated fields"));
        }
        let weights: Vec<f64> = parse_list(fields[0], row)?;
        let mus: Vec<f64> = parse_list(fields[1], row)?;
        let sigmas: Vec<f64> = parse_list(fields[2], row)?;
        if weights.is_empty() || weights.len() != mus.len() || mus.len() != sigmas.len() {
            return Err(bad(row, "atom lists differ in length"));
        }
        let latent_u = fields[3].parse().map_err(|_| bad(row, "bad latent value"))?;
        let log_likelihood = fields[4].parse().map_err(|_| bad(row, "bad log-likelihood"))?;
        let labels: Vec<usize> = parse_list(fields[5], row)?;
        if labels.iter().any(|&l| l >= weights.len()) {
            return Err(bad(row, "allocation refers to a missing atom"));
        }
        draws.push(MixtureDraw {
            atoms: weights
                .into_iter()
                .zip(mus)
                .zip(sigmas)
                .map(|((weight, mu), sigma)| Atom { weight, mu, sigma })
                .collect(),
            latent_u,
            log_likelihood,
        });
        allocations.push(Partition::new(labels));
    }
    let mut chain = PosteriorChain::from_draws(draws, allocations);
    chain.prior = meta.prior;
    chain.mcmc = meta.mcmc;
    Ok((chain, meta))
}
