//! The Cochran-Mantel-Haenszel statistic for blocked binary data.
//!
//! Every block contributes a 2x2 table of arm by outcome. With `n_B/2`
//! subjects per arm and block the statistic simplifies to
//!
//! ```text
//! MH = (sum_b (nT1_b - n1_b / 2))^2 / (sum_b n1_b n0_b / (4 (n_B - 1)))
//!    = (w'y)^2 / (y' Sigma y)
//! ```
//!
//! Both routes are implemented; they agree to rounding on every input.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{check_balance, quadratic_form, Assignment, BlockStructure};
use crate::error::{Error, Result};

/// Counts of one block's 2x2 table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockTable {
    pub treated_affected: u32,
    pub control_affected: u32,
    pub treated_unaffected: u32,
    pub control_unaffected: u32,
}

impl BlockTable {
    /// `n1_b`, responders in the block.
    pub fn affected(&self) -> u32 {
        self.treated_affected + self.control_affected
    }

    /// `n0_b`.
    pub fn unaffected(&self) -> u32 {
        self.treated_unaffected + self.control_unaffected
    }
}

/// One 2x2 table per block, all blocks of size `n_B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratifiedTables {
    tables: Vec<BlockTable>,
    block_size: usize,
}

impl StratifiedTables {
    pub fn tables(&self) -> &[BlockTable] {
        &self.tables
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Writes `block,nT1,nT0,nC1,nC0`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["block", "nT1", "nT0", "nC1", "nC0"])?;
        for (b, t) in self.tables.iter().enumerate() {
            wtr.write_record([
                b.to_string(),
                t.treated_affected.to_string(),
                t.treated_unaffected.to_string(),
                t.control_affected.to_string(),
                t.control_unaffected.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Value of the statistic. `numerator` and `denominator` are the two halves
/// of the contingency-table expression, i.e. `(w'y)^2 / 4` and `y' Sigma y / 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhResult {
    pub mh: f64,
    /// `sign(w'y) * sqrt(MH)`; zero when `w'y = 0`.
    pub signed_root: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// False when every block's responses are constant (zero denominator).
    pub defined: bool,
}

impl MhResult {
    fn from_parts(sum: f64, numerator: f64, denominator: f64) -> Self {
        if denominator > 0.0 {
            let mh = numerator / denominator;
            Self {
                mh,
                signed_root: if sum == 0.0 { 0.0 } else { mh.sqrt().copysign(sum) },
                numerator,
                denominator,
                defined: true,
            }
        } else {
            Self {
                mh: f64::NAN,
                signed_root: f64::NAN,
                numerator,
                denominator,
                defined: false,
            }
        }
    }
}

fn check_inputs(bs: &BlockStructure, w: &Assignment, y: &[u8]) -> Result<()> {
    if w.labels().len() != bs.subjects() || y.len() != bs.subjects() {
        return Err(Error::Dimension(format!(
            "{} labels and {} responses for {} subjects",
            w.labels().len(),
            y.len(),
            bs.subjects()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidValue(format!("response {bad} is not binary")));
    }
    check_balance(w.labels(), bs)
}

pub fn tabulate(bs: &BlockStructure, w: &Assignment, y: &[u8]) -> Result<StratifiedTables> {
    check_inputs(bs, w, y)?;
    let labels = w.labels();
    let tables = bs
        .blocks()
        .iter()
        .map(|members| {
            let mut t = BlockTable::default();
            for &i in members {
                match (labels[i] > 0, y[i] == 1) {
                    (true, true) => t.treated_affected += 1,
                    (true, false) => t.treated_unaffected += 1,
                    (false, true) => t.control_affected += 1,
                    (false, false) => t.control_unaffected += 1,
                }
            }
            t
        })
        .collect();
    Ok(StratifiedTables {
        tables,
        block_size: bs.block_size(),
    })
}

/// Contingency-table form of the statistic.
pub fn mh_table_form(t: &StratifiedTables) -> MhResult {
    let nb = t.block_size as f64;
    let mut excess = 0.0;
    let mut spread = 0.0;
    for table in &t.tables {
        excess += f64::from(table.treated_affected) - f64::from(table.affected()) / 2.0;
        spread += f64::from(table.affected()) * f64::from(table.unaffected());
    }
    MhResult::from_parts(excess, excess * excess, spread / (4.0 * (nb - 1.0)))
}

/// Quadratic form `(w'y)^2 / (y' Sigma y)` via the design covariance.
pub fn mh_quadratic_form(bs: &BlockStructure, w: &Assignment, y: &[u8]) -> Result<MhResult> {
    check_inputs(bs, w, y)?;
    let wy: f64 = w
        .labels()
        .iter()
        .zip(y)
        .map(|(&wi, &yi)| f64::from(wi) * f64::from(yi))
        .sum();
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let quad = quadratic_form(bs, &yf)?;
    Ok(MhResult::from_parts(wy, wy * wy / 4.0, quad / 4.0))
}

/// Table-form statistic straight from labels and responses, without
/// validation or allocation. Used on the simulation hot path.
pub(crate) fn mh_from_labels(bs: &BlockStructure, labels: &[i8], y: &[u8]) -> MhResult {
    let nb = bs.block_size() as f64;
    let mut excess = 0i64;
    let mut spread = 0i64;
    let size = bs.block_size() as i64;
    for members in bs.blocks() {
        let (mut affected, mut treated_affected) = (0i64, 0i64);
        for &i in members {
            let yi = i64::from(y[i]);
            affected += yi;
            treated_affected += yi * i64::from(labels[i] > 0);
        }
        // twice (nT1 - n1/2), kept integral
        excess += 2 * treated_affected - affected;
        spread += affected * (size - affected);
    }
    let half = excess as f64 / 2.0;
    MhResult::from_parts(half, half * half, spread as f64 / (4.0 * (nb - 1.0)))
}

/// Upper-`alpha` quantile of the chi-squared distribution with one degree of
/// freedom, `z_{1 - alpha/2}^2`.
pub fn chi2_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidValue(format!("alpha {alpha} is outside (0, 1)")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    Ok(z * z)
}

/// Rejects when the statistic is defined and exceeds the chi-squared(1)
/// critical value. An undefined statistic never rejects.
pub fn reject(r: &MhResult, alpha: f64) -> Result<bool> {
    let critical = chi2_critical(alpha)?;
    Ok(r.defined && r.mh > critical)
}
