//! TOML configuration with `key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blockpower::sim::{DesignKind, DesignPolicy, IntervalMethod, SweepGrid, DEFAULT_BETA_T, DEFAULT_NY};
use serde::Deserialize;
use toml::{Table, Value};

/// Every key a configuration file may set. Paths are relative to the working
/// directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Population CSV: `subject,x1..xp[,p_t,p_c]`.
    pub population: Option<PathBuf>,
    /// Number of subjects to generate when no population file is given.
    pub two_n: Option<usize>,
    /// Number of covariates to generate.
    pub p: usize,
    pub design: Option<DesignKind>,
    pub blocks: Option<usize>,
    /// Block CSV: `subject,block`.
    pub blocks_file: Option<PathBuf>,
    /// Assignment CSV: `subject,w`.
    pub assignment: Option<PathBuf>,
    /// Response CSV: `subject,y`.
    pub responses: Option<PathBuf>,
    /// Square distance matrix CSV used by `match` instead of covariates.
    pub distances: Option<PathBuf>,
    /// Results CSV read by `report`.
    pub results: Option<PathBuf>,
    pub beta0: f64,
    /// Covariate coefficients; defaults to one per covariate.
    pub beta: Option<Vec<f64>>,
    pub beta_t: f64,
    pub seed: u64,
    pub alpha: f64,
    pub ny: usize,
    /// Worker threads, 0 for one per core.
    pub parallelism: usize,
    pub out: PathBuf,
    pub sweep: SweepSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            population: None,
            two_n: None,
            p: 1,
            design: None,
            blocks: None,
            blocks_file: None,
            assignment: None,
            responses: None,
            distances: None,
            results: None,
            beta0: 0.0,
            beta: None,
            beta_t: DEFAULT_BETA_T,
            seed: 0,
            alpha: 0.05,
            ny: DEFAULT_NY,
            parallelism: 0,
            out: PathBuf::from("out"),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    /// `B = 1` and every even admissible `B`.
    Standard,
    EvenB,
    AllDivisors,
}

impl PolicyName {
    fn policy(self) -> DesignPolicy {
        match self {
            PolicyName::Standard => DesignPolicy::standard(),
            PolicyName::EvenB => DesignPolicy::even_b(),
            PolicyName::AllDivisors => DesignPolicy::all_divisors(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub two_n: Vec<usize>,
    pub p: Vec<usize>,
    pub beta_t: Vec<f64>,
    /// Coefficient shared by every covariate.
    pub beta: f64,
    pub policy: PolicyName,
    pub interval: IntervalMethod,
    /// Record per-cell wall-clock time; makes reruns differ.
    pub timing: bool,
    /// Number of tests for the size correction; defaults to the null cells run.
    pub bonferroni_tests: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        let grid = SweepGrid::default();
        Self {
            two_n: grid.two_n,
            p: grid.p,
            beta_t: grid.beta_t,
            beta: grid.beta,
            policy: PolicyName::Standard,
            interval: IntervalMethod::Normal,
            timing: false,
            bonferroni_tests: None,
        }
    }
}

impl Config {
    /// Reads `path` (or starts empty), applies `key=value` overrides with
    /// dotted keys for nested tables, then deserializes, rejecting unknown keys.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        Config::deserialize(Value::Table(table)).context("invalid configuration")
    }

    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            two_n: self.sweep.two_n.clone(),
            p: self.sweep.p.clone(),
            beta_t: self.sweep.beta_t.clone(),
            beta0: self.beta0,
            beta: self.sweep.beta,
            ny: self.ny,
            alpha: self.alpha,
            seed: self.seed,
            policy: self.sweep.policy.policy(),
        }
    }

    /// Coefficients for `p` covariates.
    pub fn coefficients(&self, p: usize) -> Result<Vec<f64>> {
        match &self.beta {
            Some(b) if b.len() != p => bail!("beta has {} entries for {p} covariates", b.len()),
            Some(b) => Ok(b.clone()),
            None => Ok(vec![1.0; p]),
        }
    }
}

/// Sets `a.b.c = value`; the value is parsed as TOML and kept as a string
/// when that fails.
fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override `{assignment}` is not of the form key=value");
    };
    let key = key.trim();
    if key.is_empty() {
        bail!("override `{assignment}` has an empty key");
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => bail!("override `{key}`: `{part}` is not a table"),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
