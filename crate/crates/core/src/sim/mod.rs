//! Monte Carlo estimation of the size and power of the CMH test over grids of
//! sample sizes, block counts, covariate dimensions and effect sizes.
//!
//! Every cell owns a seed derived from the master seed and the cell's key, and
//! replicate `r` of a cell draws from stream `r` of a ChaCha8 generator keyed
//! by that seed. Results therefore do not depend on the number of worker
//! threads or the order in which cells and replicates run.

mod plot;
mod report;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::cmh::{chi2_critical, mh_from_labels, MhResult};
use crate::design::{fill_assignment, hierarchical_blocks, quantile_blocks, BlockStructure};
use crate::error::{Error, Result};
use crate::matching::{mahalanobis_distances, min_weight_perfect_matching, pm_blockstructure};
use crate::outcome::{fill_responses, logistic_outcomes, CovariateMatrix, PotentialOutcomes};
use crate::par;
use crate::theory::{eta_n, TheorySummary};

pub use plot::{plot_groups, write_svg, PlotKey};
pub use report::{
    bonferroni_size_report, read_results, write_results, ResultRecord, SizeFlag, SizeReport,
};

/// Replicates simulated per cell unless configured otherwise.
pub const DEFAULT_NY: usize = 100_000;
/// Treatment log-odds used for power cells unless configured otherwise.
pub const DEFAULT_BETA_T: f64 = 0.7;
/// Replicates handled by one work unit.
const CHUNK: usize = 1024;

/// How a cell's block structure is built from its covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DesignKind {
    /// Sorted slices of the first covariate.
    QuantileBlocks,
    /// Strata on the first covariate, each halved on the second.
    HierarchicalBlocks,
    /// Optimal Mahalanobis pairs.
    PairwiseMatch,
    /// A single block of all subjects.
    Bcrd,
}

impl DesignKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::QuantileBlocks => "quantileBlocks",
            DesignKind::HierarchicalBlocks => "hierarchicalBlocks",
            DesignKind::PairwiseMatch => "pairwiseMatch",
            DesignKind::Bcrd => "bcrd",
        }
    }

    fn code(self) -> u64 {
        match self {
            DesignKind::QuantileBlocks => 1,
            DesignKind::HierarchicalBlocks => 2,
            DesignKind::PairwiseMatch => 3,
            DesignKind::Bcrd => 4,
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantileBlocks" => Ok(DesignKind::QuantileBlocks),
            "hierarchicalBlocks" => Ok(DesignKind::HierarchicalBlocks),
            "pairwiseMatch" => Ok(DesignKind::PairwiseMatch),
            "bcrd" => Ok(DesignKind::Bcrd),
            _ => Err(Error::Parse(format!("unknown design kind {s:?}"))),
        }
    }
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSpec {
    pub two_n: usize,
    pub blocks: usize,
    pub p: usize,
    pub beta0: f64,
    pub beta_t: f64,
    pub beta: Vec<f64>,
    pub ny: usize,
    pub alpha: f64,
    /// Master seed; covariates and replicate streams are derived from it.
    pub seed: u64,
    pub design: DesignKind,
}

impl CellSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidValue(msg));
        if self.two_n == 0 || !self.two_n.is_multiple_of(2) {
            return invalid(format!("2n = {} must be positive and even", self.two_n));
        }
        if self.blocks == 0 || !self.two_n.is_multiple_of(self.blocks) || !(self.two_n / self.blocks).is_multiple_of(2)
        {
            return Err(Error::Divisibility {
                count: self.two_n,
                blocks: self.blocks,
            });
        }
        if self.p == 0 || self.beta.len() != self.p {
            return invalid(format!(
                "{} coefficients for {} covariates",
                self.beta.len(),
                self.p
            ));
        }
        if self.ny == 0 {
            return invalid("NY must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha {} is outside (0, 1)", self.alpha));
        }
        if !(self.beta0.is_finite() && self.beta_t.is_finite())
            || self.beta.iter().any(|b| !b.is_finite())
        {
            return invalid("coefficients must be finite".into());
        }
        match self.design {
            DesignKind::Bcrd if self.blocks != 1 => {
                invalid(format!("bcrd has one block, got B = {}", self.blocks))
            }
            DesignKind::PairwiseMatch if self.two_n != 2 * self.blocks => {
                invalid(format!("pairwise matching needs B = n, got B = {}", self.blocks))
            }
            DesignKind::HierarchicalBlocks if self.p < 2 => {
                invalid("hierarchical blocking needs two covariates".into())
            }
            DesignKind::HierarchicalBlocks if !self.blocks.is_multiple_of(2) => {
                Err(Error::OddBlockCount(self.blocks))
            }
            _ => Ok(()),
        }
    }

    /// Seed of this cell's replicate streams.
    pub fn cell_seed(&self) -> u64 {
        stable_hash(&[
            self.seed,
            self.two_n as u64,
            self.blocks as u64,
            self.p as u64,
            self.beta_t.to_bits(),
            self.design.code(),
        ])
    }

    /// Generator for replicate `r`.
    pub fn replicate_rng(&self, r: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cell_seed());
        rng.set_stream(r as u64);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Platform-independent hash of a key tuple.
fn stable_hash(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |h, &x| splitmix64(h ^ splitmix64(x)))
}

/// Which block counts a sweep visits for each sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignPolicy {
    /// Add the single-block design even when odd counts are excluded.
    pub include_bcrd: bool,
    /// Restrict `B > 1` to even counts so two-covariate blocking is possible.
    pub even_b: bool,
}

impl DesignPolicy {
    /// `B = 1` plus every even `B` dividing `2n` with even block size, up to `n`.
    pub fn standard() -> Self {
        Self {
            include_bcrd: true,
            even_b: true,
        }
    }

    /// Even `B` only.
    pub fn even_b() -> Self {
        Self {
            include_bcrd: false,
            even_b: true,
        }
    }

    /// Every `B` dividing `2n` with even block size.
    pub fn all_divisors() -> Self {
        Self {
            include_bcrd: true,
            even_b: false,
        }
    }

    /// Admissible block counts for `2n` subjects, ascending.
    pub fn block_counts(&self, two_n: usize) -> Vec<usize> {
        if two_n == 0 || !two_n.is_multiple_of(2) {
            return Vec::new();
        }
        (1..=two_n / 2)
            .filter(|&b| two_n.is_multiple_of(b) && (two_n / b).is_multiple_of(2))
            .filter(|&b| {
                if b == 1 {
                    self.include_bcrd
                } else {
                    !self.even_b || b % 2 == 0
                }
            })
            .collect()
    }
}

/// Cross product of sample sizes, covariate dimensions and effect sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub two_n: Vec<usize>,
    pub p: Vec<usize>,
    pub beta_t: Vec<f64>,
    pub beta0: f64,
    /// Coefficient shared by every covariate.
    pub beta: f64,
    pub ny: usize,
    pub alpha: f64,
    pub seed: u64,
    pub policy: DesignPolicy,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            two_n: vec![48, 96, 192, 288, 384],
            p: vec![1],
            beta_t: vec![0.0, DEFAULT_BETA_T],
            beta0: 0.0,
            beta: 1.0,
            ny: DEFAULT_NY,
            alpha: 0.05,
            seed: 0,
            policy: DesignPolicy::standard(),
        }
    }
}

/// Design used for `B` blocks of `2n` subjects with `p` covariates.
pub fn design_kind(two_n: usize, blocks: usize, p: usize) -> DesignKind {
    if blocks == 1 {
        DesignKind::Bcrd
    } else if 2 * blocks == two_n {
        DesignKind::PairwiseMatch
    } else if p >= 2 {
        DesignKind::HierarchicalBlocks
    } else {
        DesignKind::QuantileBlocks
    }
}

/// All cells of a grid, ordered by `2n`, `p`, `beta_T` and then `B`.
pub fn enumerate_cells(grid: &SweepGrid) -> Result<Vec<CellSpec>> {
    let mut cells = Vec::new();
    for &two_n in &grid.two_n {
        if two_n == 0 || two_n % 2 != 0 {
            return Err(Error::InvalidValue(format!("2n = {two_n} must be positive and even")));
        }
        for &p in &grid.p {
            for &beta_t in &grid.beta_t {
                for blocks in grid.policy.block_counts(two_n) {
                    let cell = CellSpec {
                        two_n,
                        blocks,
                        p,
                        beta0: grid.beta0,
                        beta_t,
                        beta: vec![grid.beta; p],
                        ny: grid.ny,
                        alpha: grid.alpha,
                        seed: grid.seed,
                        design: design_kind(two_n, blocks, p),
                    };
                    cell.validate()?;
                    cells.push(cell);
                }
            }
        }
    }
    Ok(cells)
}

/// Covariates and potential outcomes of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub covariates: CovariateMatrix,
    /// Probabilities at the cell's `beta_T`.
    pub outcomes: PotentialOutcomes,
    /// Probabilities at `beta_T = 0`.
    pub null_outcomes: PotentialOutcomes,
}

/// `2n x p` iid standard normal covariates for a master seed. The draw depends
/// only on `(2n, p, seed)`, so every cell with that key sees the same subjects.
pub fn draw_covariates(two_n: usize, p: usize, seed: u64) -> Result<CovariateMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[seed, two_n as u64, p as u64]));
    let values = (0..two_n * p).map(|_| rng.sample(StandardNormal)).collect();
    CovariateMatrix::new(values, two_n, p)
}

pub fn draw_population(spec: &CellSpec) -> Result<Population> {
    spec.validate()?;
    let covariates = draw_covariates(spec.two_n, spec.p, spec.seed)?;
    let outcomes = logistic_outcomes(&covariates, spec.beta0, &spec.beta, spec.beta_t)?;
    let null_outcomes = logistic_outcomes(&covariates, spec.beta0, &spec.beta, 0.0)?;
    Ok(Population {
        covariates,
        outcomes,
        null_outcomes,
    })
}

/// Builds the cell's block structure from its covariates.
pub fn build_design(spec: &CellSpec, x: &CovariateMatrix) -> Result<BlockStructure> {
    design_blocks(spec.design, spec.blocks, x)
}

/// Block structure of `kind` with `blocks` blocks over the rows of `x`.
/// Pairwise matching and the single-block design fix the count themselves
/// and reject any other.
pub fn design_blocks(kind: DesignKind, blocks: usize, x: &CovariateMatrix) -> Result<BlockStructure> {
    let fixed = match kind {
        DesignKind::Bcrd => Some(1),
        DesignKind::PairwiseMatch => Some(x.subjects() / 2),
        _ => None,
    };
    if let Some(expected) = fixed {
        if blocks != expected {
            return Err(Error::InvalidValue(format!(
                "{kind} uses {expected} blocks for {} subjects, got {blocks}",
                x.subjects()
            )));
        }
    }
    match kind {
        DesignKind::Bcrd => BlockStructure::bcrd(x.subjects()),
        DesignKind::QuantileBlocks => quantile_blocks(&x.column(0), blocks),
        DesignKind::HierarchicalBlocks => hierarchical_blocks(x, blocks),
        DesignKind::PairwiseMatch => {
            let matching = min_weight_perfect_matching(&mahalanobis_distances(x)?)?;
            pm_blockstructure(&matching)
        }
    }
}

/// Statistics of one simulated trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replicate {
    pub mh: MhResult,
    /// `w'y / 2n`.
    pub linear: f64,
    /// `y' Sigma y / 2n`.
    pub quadratic: f64,
    pub rejected: bool,
}

/// Simulates `ny` trials and folds them chunk by chunk. Chunks are combined
/// in replicate order, so the result is independent of scheduling.
fn fold_replicates<A, F, G>(
    spec: &CellSpec,
    po: &PotentialOutcomes,
    bs: &BlockStructure,
    init: fn() -> A,
    step: F,
    merge: G,
) -> Result<A>
where
    A: Send,
    F: Fn(&mut A, &Replicate) + Sync + Send,
    G: Fn(&mut A, A),
{
    spec.validate()?;
    if po.subjects() != spec.two_n || bs.subjects() != spec.two_n {
        return Err(Error::Dimension(format!(
            "cell has 2n = {} but population has {} and design {} subjects",
            spec.two_n,
            po.subjects(),
            bs.subjects()
        )));
    }
    let critical = chi2_critical(spec.alpha)?;
    let m = spec.two_n as f64;
    let chunks = spec.ny.div_ceil(CHUNK);
    let parts = par::map_range(chunks, |c| {
        let mut acc = init();
        let mut labels = vec![0i8; spec.two_n];
        let mut y = vec![0u8; spec.two_n];
        let mut scratch = Vec::with_capacity(bs.block_size());
        for r in c * CHUNK..((c + 1) * CHUNK).min(spec.ny) {
            let mut rng = spec.replicate_rng(r);
            fill_assignment(bs, &mut rng, &mut labels, &mut scratch);
            fill_responses(po, &labels, &mut rng, &mut y);
            let mh = mh_from_labels(bs, &labels, &y);
            let replicate = Replicate {
                mh,
                linear: contrast(&labels, &y) / m,
                quadratic: 4.0 * mh.denominator / m,
                rejected: mh.defined && mh.mh > critical,
            };
            step(&mut acc, &replicate);
        }
        acc
    });
    let mut parts = parts.into_iter();
    let mut total = parts.next().unwrap_or_else(init);
    for part in parts {
        merge(&mut total, part);
    }
    Ok(total)
}

/// `w'y`.
fn contrast(labels: &[i8], y: &[u8]) -> f64 {
    labels
        .iter()
        .zip(y)
        .map(|(&w, &v)| i64::from(w) * i64::from(v))
        .sum::<i64>() as f64
}

/// Per-replicate statistics in replicate order.
pub fn simulate_replicates(
    spec: &CellSpec,
    po: &PotentialOutcomes,
    bs: &BlockStructure,
) -> Result<Vec<Replicate>> {
    fold_replicates(spec, po, bs, Vec::new, |acc, r| acc.push(*r), |a, b| a.extend(b))
}

/// Rejection and undefined counts over a cell's replicates.
pub fn count_rejections(
    spec: &CellSpec,
    po: &PotentialOutcomes,
    bs: &BlockStructure,
) -> Result<(usize, usize)> {
    fold_replicates(
        spec,
        po,
        bs,
        || (0usize, 0usize),
        |acc, r| {
            acc.0 += usize::from(r.rejected);
            acc.1 += usize::from(!r.mh.defined);
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    )
}

/// Binomial interval for a rejection rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    /// Normal approximation, clamped to [0, 1].
    #[default]
    Normal,
    /// Exact interval from beta quantiles.
    ClopperPearson,
}

impl FromStr for IntervalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(IntervalMethod::Normal),
            "clopper-pearson" => Ok(IntervalMethod::ClopperPearson),
            _ => Err(Error::Parse(format!("unknown interval method {s:?}"))),
        }
    }
}

/// Two-sided `level` interval for `k` successes in `n` trials.
pub fn binomial_interval(k: usize, n: usize, level: f64, method: IntervalMethod) -> (f64, f64) {
    let rate = k as f64 / n as f64;
    let tail = (1.0 - level) / 2.0;
    match method {
        IntervalMethod::Normal => {
            let z = Normal::standard().inverse_cdf(1.0 - tail);
            let half = z * (rate * (1.0 - rate) / n as f64).sqrt();
            ((rate - half).max(0.0), (rate + half).min(1.0))
        }
        IntervalMethod::ClopperPearson => {
            let (kf, nf) = (k as f64, n as f64);
            let low = if k == 0 {
                0.0
            } else {
                Beta::new(kf, nf - kf + 1.0)
                    .expect("positive shape parameters")
                    .inverse_cdf(tail)
            };
            let high = if k == n {
                1.0
            } else {
                Beta::new(kf + 1.0, nf - kf)
                    .expect("positive shape parameters")
                    .inverse_cdf(1.0 - tail)
            };
            (low.min(rate), high.max(rate))
        }
    }
}

/// Two-sided p-value of the one-proportion z-test of `rate = alpha`.
pub fn size_test_p_value(rejections: usize, ny: usize, alpha: f64) -> f64 {
    let rate = rejections as f64 / ny as f64;
    let z = (rate - alpha) / (alpha * (1.0 - alpha) / ny as f64).sqrt();
    2.0 * Normal::standard().sf(z.abs())
}

/// Outcome of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCellResult {
    pub spec: CellSpec,
    pub rejections: usize,
    pub undefined_count: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Calibration test, reported for `beta_T = 0` cells only.
    pub size_test_p: Option<f64>,
    pub theory: TheorySummary,
    pub wallclock_seconds: f64,
}

/// Runs a cell with normal-approximation intervals.
pub fn run_cell(spec: &CellSpec) -> Result<PowerCellResult> {
    run_cell_with(spec, IntervalMethod::Normal)
}

pub fn run_cell_with(spec: &CellSpec, interval: IntervalMethod) -> Result<PowerCellResult> {
    let start = Instant::now();
    let population = draw_population(spec)?;
    let bs = build_design(spec, &population.covariates)?;
    let theory = eta_n(&population.outcomes, &bs)?;
    let (rejections, undefined_count) = count_rejections(spec, &population.outcomes, &bs)?;
    let rate = rejections as f64 / spec.ny as f64;
    let (ci_low, ci_high) = binomial_interval(rejections, spec.ny, 0.95, interval);
    let size_test_p = (spec.beta_t == 0.0).then(|| size_test_p_value(rejections, spec.ny, spec.alpha));
    Ok(PowerCellResult {
        spec: spec.clone(),
        rejections,
        undefined_count,
        rate,
        ci_low,
        ci_high,
        size_test_p,
        theory,
        wallclock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// A cell together with its result or the reason it failed.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub spec: CellSpec,
    pub outcome: std::result::Result<PowerCellResult, String>,
}

/// Runs every cell on `parallelism` workers (0 = all cores). Failed cells are
/// reported in place and do not stop the sweep.
pub fn sweep(specs: &[CellSpec], parallelism: usize) -> Vec<SweepRow> {
    sweep_with(specs, parallelism, IntervalMethod::Normal)
}

pub fn sweep_with(specs: &[CellSpec], parallelism: usize, interval: IntervalMethod) -> Vec<SweepRow> {
    par::with_threads(parallelism, || {
        par::map_slice(specs, |spec| SweepRow {
            spec: spec.clone(),
            outcome: run_cell_with(spec, interval).map_err(|e| e.to_string()),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcome::effect_summary;

    fn cell(two_n: usize, blocks: usize, p: usize, beta_t: f64, ny: usize) -> CellSpec {
        CellSpec {
            two_n,
            blocks,
            p,
            beta0: 0.0,
            beta_t,
            beta: vec![1.0; p],
            ny,
            alpha: 0.05,
            seed: 7,
            design: design_kind(two_n, blocks, p),
        }
    }

    #[test]
    fn block_counts_under_policies() {
        assert_eq!(DesignPolicy::even_b().block_counts(8), vec![2, 4]);
        assert_eq!(DesignPolicy::standard().block_counts(8), vec![1, 2, 4]);
        assert_eq!(
            DesignPolicy::standard().block_counts(48),
            vec![1, 2, 4, 6, 8, 12, 24]
        );
        assert_eq!(
            DesignPolicy::all_divisors().block_counts(48),
            vec![1, 2, 3, 4, 6, 8, 12, 24]
        );
        assert!(DesignPolicy::standard().block_counts(7).is_empty());
    }

    #[test]
    fn default_grid_cell_counts() {
        let per_size: Vec<usize> = [48, 96, 192, 288, 384]
            .iter()
            .map(|&m| DesignPolicy::standard().block_counts(m).len())
            .collect();
        assert_eq!(per_size, vec![7, 9, 11, 13, 13]);
        let grid = SweepGrid::default();
        let cells = enumerate_cells(&grid).unwrap();
        assert_eq!(cells.len(), 2 * 53);
        let pm = cells.iter().filter(|c| c.design == DesignKind::PairwiseMatch).count();
        assert_eq!(pm, 10);
    }

    #[test]
    fn multi_covariate_cells_use_hierarchical_blocks() {
        let grid = SweepGrid {
            two_n: vec![48],
            p: vec![2],
            beta_t: vec![0.7],
            ..SweepGrid::default()
        };
        let kinds: Vec<_> = enumerate_cells(&grid).unwrap().iter().map(|c| c.design).collect();
        assert_eq!(kinds[0], DesignKind::Bcrd);
        assert_eq!(kinds[kinds.len() - 1], DesignKind::PairwiseMatch);
        assert!(kinds[1..kinds.len() - 1]
            .iter()
            .all(|&k| k == DesignKind::HierarchicalBlocks));
    }

    #[test]
    fn spec_validation() {
        assert!(cell(48, 4, 1, 0.0, 10).validate().is_ok());
        assert!(matches!(
            cell(48, 7, 1, 0.0, 10).validate(),
            Err(Error::Divisibility { .. })
        ));
        assert!(cell(48, 48, 1, 0.0, 10).validate().is_err());
        assert!(cell(48, 4, 1, 0.0, 0).validate().is_err());
        let mut bad = cell(48, 4, 1, 0.0, 10);
        bad.alpha = 1.0;
        assert!(bad.validate().is_err());
        bad = cell(48, 4, 2, 0.0, 10);
        bad.beta.pop();
        assert!(bad.validate().is_err());
        bad = cell(48, 4, 1, 0.0, 10);
        bad.design = DesignKind::HierarchicalBlocks;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn covariates_shared_across_block_counts() {
        let a = draw_population(&cell(96, 4, 2, 0.7, 1)).unwrap();
        let b = draw_population(&cell(96, 12, 2, 0.0, 1)).unwrap();
        assert_eq!(a.covariates, b.covariates);
        assert_eq!(a.null_outcomes, b.outcomes);
        let c = draw_population(&cell(96, 4, 1, 0.7, 1)).unwrap();
        assert_ne!(a.covariates.column(0), c.covariates.column(0));
    }

    #[test]
    fn null_and_alternative_effects() {
        let pop = draw_population(&cell(96, 4, 1, 0.7, 1)).unwrap();
        assert!(effect_summary(&pop.null_outcomes).tau.iter().all(|&t| t == 0.0));
        assert!(effect_summary(&pop.outcomes).tau_bar > 0.0);
    }

    #[test]
    fn seeds_depend_on_every_key_field() {
        let base = cell(96, 4, 1, 0.7, 1);
        let mut seeds = vec![base.cell_seed()];
        for change in 0..5 {
            let mut c = base.clone();
            match change {
                0 => c.seed += 1,
                1 => c.blocks = 8,
                2 => c.p = 2,
                3 => c.beta_t = 0.0,
                _ => c.two_n = 48,
            }
            seeds.push(c.cell_seed());
        }
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 6);
        assert_eq!(stable_hash(&[1, 2, 3]), stable_hash(&[1, 2, 3]));
    }

    #[test]
    fn single_replicate_is_handled() {
        for beta_t in [0.0, 0.7] {
            let r = run_cell(&cell(48, 4, 1, beta_t, 1)).unwrap();
            assert!(r.rate == 0.0 || r.rate == 1.0);
            assert_eq!(r.ci_low, r.rate);
            assert_eq!(r.ci_high, r.rate);
            assert!(r.size_test_p.is_none() || beta_t == 0.0);
            let (lo, hi) = binomial_interval(r.rejections, 1, 0.95, IntervalMethod::ClopperPearson);
            assert!(lo <= r.rate && r.rate <= hi && hi - lo > 0.9);
        }
    }

    #[test]
    fn separation_gives_full_power() {
        let mut spec = cell(96, 8, 1, 40.0, 200);
        spec.beta = vec![0.0];
        let r = run_cell(&spec).unwrap();
        assert_eq!(r.rate, 1.0);
    }

    #[test]
    fn replicates_are_reproducible_and_thread_independent() {
        let spec = cell(48, 6, 1, 0.7, 3000);
        let pop = draw_population(&spec).unwrap();
        let bs = build_design(&spec, &pop.covariates).unwrap();
        let a = par::with_threads(1, || simulate_replicates(&spec, &pop.outcomes, &bs).unwrap());
        let b = par::with_threads(4, || simulate_replicates(&spec, &pop.outcomes, &bs).unwrap());
        assert_eq!(a.len(), 3000);
        assert!(a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.linear == y.linear && x.quadratic == y.quadratic && x.rejected == y.rejected));
        let counts = count_rejections(&spec, &pop.outcomes, &bs).unwrap();
        assert_eq!(counts.0, a.iter().filter(|r| r.rejected).count());
    }

    #[test]
    fn replicate_statistics_agree_with_library_forms() {
        use crate::cmh::mh_quadratic_form;
        use crate::design::{sample_assignment, Assignment};
        let spec = cell(24, 3, 1, 0.7, 50);
        let pop = draw_population(&spec).unwrap();
        let bs = build_design(&spec, &pop.covariates).unwrap();
        let reps = simulate_replicates(&spec, &pop.outcomes, &bs).unwrap();
        for (r, rep) in reps.iter().enumerate() {
            let mut rng = spec.replicate_rng(r);
            let w = sample_assignment(&bs, &mut rng);
            let y = crate::outcome::draw_responses(&pop.outcomes, &w, &mut rng).unwrap();
            let full = mh_quadratic_form(&bs, &w, &y).unwrap();
            assert_eq!(full.defined, rep.mh.defined);
            if full.defined {
                assert!((full.mh - rep.mh.mh).abs() < 1e-12);
                assert!((full.signed_root - rep.mh.signed_root).abs() < 1e-12);
            }
            let wy: f64 = w.labels().iter().zip(&y).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            assert!((rep.linear - wy / 24.0).abs() < 1e-12);
            let _ = Assignment::from_labels(w.into_labels(), &bs).unwrap();
        }
    }

    #[test]
    fn sweep_reports_failures_per_cell() {
        let mut bad = cell(48, 4, 1, 0.0, 10);
        bad.blocks = 5;
        let specs = vec![cell(48, 4, 1, 0.0, 10), bad];
        let rows = sweep(&specs, 2);
        assert!(rows[0].outcome.is_ok());
        assert!(rows[1].outcome.is_err());
        assert!(sweep(&[], 2).is_empty());
    }

    #[test]
    fn size_test_and_intervals() {
        assert_eq!(size_test_p_value(5000, 100_000, 0.05), 1.0);
        assert!(size_test_p_value(20_000, 100_000, 0.05) < 1e-100);
        let (lo, hi) = binomial_interval(50, 1000, 0.95, IntervalMethod::Normal);
        assert!((lo - (0.05 - 1.959_964 * (0.05f64 * 0.95 / 1000.0).sqrt())).abs() < 1e-6);
        assert!(hi > 0.05);
        let (lo, hi) = binomial_interval(0, 20, 0.95, IntervalMethod::ClopperPearson);
        assert_eq!(lo, 0.0);
        // 1 - 0.025^(1/20)
        assert!((hi - (1.0 - 0.025f64.powf(1.0 / 20.0))).abs() < 1e-9);
    }
}
