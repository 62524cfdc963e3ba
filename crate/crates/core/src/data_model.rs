//! Concentration records, per-species aggregation and log-standardization.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A possibly censored observation.
///
/// The same type carries raw concentrations (strictly positive) and
/// standardized log values (any real); validation differs by context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Observation {
    Exact { value: f64 },
    /// The true value is at most `upper`.
    Left { upper: f64 },
    /// The true value is at least `lower`.
    Right { lower: f64 },
    Interval { lower: f64, upper: f64 },
}

impl Observation {
    pub fn exact(value: f64) -> Self {
        Observation::Exact { value }
    }

    pub fn left(upper: f64) -> Self {
        Observation::Left { upper }
    }

    pub fn right(lower: f64) -> Self {
        Observation::Right { lower }
    }

    pub fn interval(lower: f64, upper: f64) -> Self {
        Observation::Interval { lower, upper }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Observation::Exact { .. })
    }

    pub fn exact_value(&self) -> Option<f64> {
        match *self {
            Observation::Exact { value } => Some(value),
            _ => None,
        }
    }

    /// `(lower, upper)` bounds, with `None` for an unbounded side.
    pub fn bounds(&self) -> (Option<f64>, Option<f64>) {
        match *self {
            Observation::Exact { value } => (Some(value), Some(value)),
            Observation::Left { upper } => (None, Some(upper)),
            Observation::Right { lower } => (Some(lower), None),
            Observation::Interval { lower, upper } => (Some(lower), Some(upper)),
        }
    }

    /// Applies a monotone increasing map to every bound.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        match *self {
            Observation::Exact { value } => Observation::exact(f(value)),
            Observation::Left { upper } => Observation::left(f(upper)),
            Observation::Right { lower } => Observation::right(f(lower)),
            Observation::Interval { lower, upper } => Observation::interval(f(lower), f(upper)),
        }
    }

    /// Checks the invariants of a concentration-scale observation.
    pub fn validate_concentration(&self) -> std::result::Result<(), String> {
        let (lo, hi) = self.bounds();
        for v in [lo, hi].into_iter().flatten() {
            if !v.is_finite() {
                return Err("non-finite concentration".into());
            }
            if v <= 0.0 {
                return Err("non-positive concentration".into());
            }
        }
        if let Observation::Interval { lower, upper } = *self {
            if lower >= upper {
                return Err("interval with lower >= upper".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRecord {
    pub contaminant: String,
    pub species: String,
    pub observation: Observation,
}

/// Back-mapping from the standardized log scale to concentrations:
/// `concentration = base^(mean + sd * z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub log_base: f64,
    pub mean: f64,
    pub sd: f64,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            log_base: 10.0,
            mean: 0.0,
            sd: 1.0,
        }
    }

    pub fn to_standard(&self, concentration: f64) -> f64 {
        (concentration.log(self.log_base) - self.mean) / self.sd
    }

    /// Standardized value to log-scale value.
    pub fn to_log(&self, z: f64) -> f64 {
        self.mean + self.sd * z
    }

    pub fn to_concentration(&self, z: f64) -> f64 {
        self.log_base.powf(self.to_log(z))
    }

    /// Density of the concentration at `concentration`, given the density of
    /// the standardized variable at the corresponding point.
    pub fn density_to_concentration(&self, concentration: f64, standardized_density: f64) -> f64 {
        standardized_density / (self.sd * concentration * self.log_base.ln())
    }
}

/// Standardized log-scale sample, one observation per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedSample {
    pub values: Vec<Observation>,
    pub transform: Transform,
}

impl StandardizedSample {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn exact_values(&self) -> Vec<f64> {
        self.values.iter().filter_map(Observation::exact_value).collect()
    }

    pub fn has_censored(&self) -> bool {
        self.values.iter().any(|o| !o.is_exact())
    }

    /// Standardizes values that are already on a log scale.
    pub fn from_log_values(values: &[Observation], log_base: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("at least 2 observations are required"));
        }
        let exact: Vec<f64> = values.iter().filter_map(Observation::exact_value).collect();
        if exact.is_empty() {
            return Err(Error::invalid("cannot standardize without exact values"));
        }
        if exact.len() < 2 {
            return Err(Error::invalid(
                "cannot standardize with fewer than 2 exact values",
            ));
        }
        let (mean, sd) = mean_sd(&exact);
        if !(sd > 0.0) {
            return Err(Error::invalid("zero variance among exact values"));
        }
        let transform = Transform {
            log_base,
            mean,
            sd,
        };
        let values = values.iter().map(|o| o.map(|v| (v - mean) / sd)).collect();
        Ok(StandardizedSample { values, transform })
    }

    /// Values on the original concentration scale.
    pub fn back_transform(&self) -> Vec<Observation> {
        self.values
            .iter()
            .map(|o| o.map(|z| self.transform.to_concentration(z)))
            .collect()
    }
}

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    contaminant: String,
    species: String,
    value: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
    censor: String,
}

/// Reads a `contaminant,species,value,lower,upper,censor` CSV file.
///
/// Row numbers in errors are file line numbers (the header is line 1).
pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<ConcentrationRecord>> {
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    parse_reader(reader)
}

pub fn parse_csv_str(text: &str) -> Result<Vec<ConcentrationRecord>> {
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    parse_reader(reader)
}

fn parse_reader<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<Vec<ConcentrationRecord>> {
    let headers = reader.headers()?.clone();
    for col in ["contaminant", "species", "value", "lower", "upper", "censor"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse {
                row: 1,
                message: format!("missing column `{col}`"),
            });
        }
    }
    let mut records = Vec::new();
    for (idx, row) in reader.deserialize::<CsvRow>().enumerate() {
        let line = idx + 2;
        let parse_err = |message: String| Error::Parse { row: line, message };
        let row = row.map_err(|e| parse_err(format!("malformed row ({e})")))?;
        if row.contaminant.is_empty() || row.species.is_empty() {
            return Err(parse_err("empty contaminant or species".into()));
        }
        let need = |v: Option<f64>, col: &str| {
            v.ok_or_else(|| parse_err(format!("missing `{col}` for censor `{}`", row.censor)))
        };
        let observation = match row.censor.to_ascii_lowercase().as_str() {
            "none" | "" => Observation::exact(need(row.value, "value")?),
            "left" => Observation::left(need(row.value, "value")?),
            "right" => Observation::right(need(row.value, "value")?),
            "interval" => Observation::interval(need(row.lower, "lower")?, need(row.upper, "upper")?),
            other => return Err(parse_err(format!("unknown censor kind `{other}`"))),
        };
        observation.validate_concentration().map_err(parse_err)?;
        records.push(ConcentrationRecord {
            contaminant: row.contaminant,
            species: row.species,
            observation,
        });
    }
    Ok(records)
}

/// Distinct contaminants in order of first appearance.
pub fn contaminants(records: &[ConcentrationRecord]) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for r in records {
        if !seen.contains(&r.contaminant) {
            seen.push(r.contaminant.clone());
        }
    }
    seen
}

fn geometric_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v.ln(), n + 1));
    (sum / n as f64).exp()
}

/// Collapses multiple records per species into one.
///
/// Exact-only species get the geometric mean. Species with any censored
/// record get componentwise geometric means of the lower and of the upper
/// bounds, where a left-censored record has lower bound 0+ and a right-censored
/// one an infinite upper bound; an unbounded side in any record stays
/// unbounded. Output order follows first appearance of each species.
pub fn aggregate_species(records: &[ConcentrationRecord]) -> Result<Vec<ConcentrationRecord>> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("no records to aggregate"))?;
    if records.iter().any(|r| r.contaminant != first.contaminant) {
        return Err(Error::invalid("records span more than one contaminant"));
    }
    let mut order = Vec::<&str>::new();
    let mut groups: BTreeMap<&str, Vec<Observation>> = BTreeMap::new();
    for r in records {
        let group = groups.entry(r.species.as_str()).or_default();
        if group.is_empty() {
            order.push(r.species.as_str());
        }
        group.push(r.observation);
    }
    order
        .into_iter()
        .map(|species| {
            let obs = &groups[species];
            let observation = if obs.len() == 1 {
                obs[0]
            } else {
                combine(obs).ok_or_else(|| {
                    Error::invalid(format!(
                        "species `{species}` has left- and right-censored records with no finite bounds"
                    ))
                })?
            };
            Ok(ConcentrationRecord {
                contaminant: first.contaminant.clone(),
                species: species.to_string(),
                observation,
            })
        })
        .collect()
}

fn combine(obs: &[Observation]) -> Option<Observation> {
    if obs.iter().all(Observation::is_exact) {
        let gm = geometric_mean(obs.iter().filter_map(Observation::exact_value));
        return Some(Observation::exact(gm));
    }
    let lowers: Option<Vec<f64>> = obs.iter().map(|o| o.bounds().0).collect();
    let uppers: Option<Vec<f64>> = obs.iter().map(|o| o.bounds().1).collect();
    let lower = lowers.map(|v| geometric_mean(v.into_iter()));
    let upper = uppers.map(|v| geometric_mean(v.into_iter()));
    match (lower, upper) {
        (Some(l), Some(u)) if l == u => Some(Observation::exact(l)),
        (Some(l), Some(u)) => Some(Observation::interval(l, u)),
        (None, Some(u)) => Some(Observation::left(u)),
        (Some(l), None) => Some(Observation::right(l)),
        (None, None) => None,
    }
}

/// Log-transform (base 10) and standardize one-per-species records.
pub fn log_standardize(records: &[ConcentrationRecord]) -> Result<StandardizedSample> {
    log_standardize_base(records, 10.0)
}

pub fn log_standardize_base(records: &[ConcentrationRecord], log_base: f64) -> Result<StandardizedSample> {
    for r in records {
        r.observation
            .validate_concentration()
            .map_err(|m| Error::invalid(format!("{m} for species `{}`", r.species)))?;
    }
    let logs: Vec<Observation> = records
        .iter()
        .map(|r| r.observation.map(|v| v.log(log_base)))
        .collect();
    StandardizedSample::from_log_values(&logs, log_base)
}

/// The customary uncensored version of a data set: left- and right-censored
/// records are dropped, intervals are replaced by their midpoint on the log
/// scale (the geometric midpoint of the concentrations).
pub fn decensor(records: &[ConcentrationRecord]) -> Vec<ConcentrationRecord> {
    records
        .iter()
        .filter_map(|r| {
            let observation = match r.observation {
                Observation::Exact { .. } => r.observation,
                Observation::Interval { lower, upper } => Observation::exact((lower * upper).sqrt()),
                _ => return None,
            };
            Some(ConcentrationRecord {
                observation,
                ..r.clone()
            })
        })
        .collect()
}
