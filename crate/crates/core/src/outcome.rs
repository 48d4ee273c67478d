//! Fixed covariates, potential-outcome probabilities and response draws.
//!
//! Each subject `i` carries a pair of Bernoulli probabilities `(pT_i, pC_i)`,
//! the chance of a positive response under treatment (`w_i = +1`) and control
//! (`w_i = -1`). The half-difference `tau` and the average `v` of that pair are
//! the quantities the power analysis is phrased in.

use std::io::{Read, Write};

use rand::Rng;

use crate::design::Assignment;
use crate::error::{Error, Result};

/// `2n x p` matrix of subject covariates, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    values: Vec<f64>,
    rows: usize,
    p: usize,
}

impl CovariateMatrix {
    /// Builds a matrix from row-major values.
    pub fn new(values: Vec<f64>, rows: usize, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidValue("covariate count must be positive".into()));
        }
        if rows == 0 || !rows.is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "subject count must be positive and even, got {rows}"
            )));
        }
        if values.len() != rows * p {
            return Err(Error::Dimension(format!(
                "expected {} covariate values for {rows} x {p}, got {}",
                rows * p,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "covariate of subject {} column {} is not finite",
                pos / p,
                pos % p
            )));
        }
        Ok(Self { values, rows, p })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("ragged covariate rows".into()));
        }
        Self::new(rows.concat(), rows.len(), p)
    }

    /// Single-covariate matrix.
    pub fn from_column(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.len(), 1)
    }

    /// Number of subjects, `2n`.
    pub fn subjects(&self) -> usize {
        self.rows
    }

    /// Half the subject count.
    pub fn n(&self) -> usize {
        self.rows / 2
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.values[i * self.p + j]).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Per-subject response probabilities under treatment and control.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    p_t: Vec<f64>,
    p_c: Vec<f64>,
}

impl PotentialOutcomes {
    pub fn new(p_t: Vec<f64>, p_c: Vec<f64>) -> Result<Self> {
        if p_t.len() != p_c.len() {
            return Err(Error::Dimension(format!(
                "pT has {} entries but pC has {}",
                p_t.len(),
                p_c.len()
            )));
        }
        if p_t.is_empty() || !p_t.len().is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "subject count must be positive and even, got {}",
                p_t.len()
            )));
        }
        for (i, &p) in p_t.iter().chain(p_c.iter()).enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidValue(format!(
                    "probability {p} at position {} is outside [0, 1]",
                    i % p_t.len()
                )));
            }
        }
        Ok(Self { p_t, p_c })
    }

    pub fn subjects(&self) -> usize {
        self.p_t.len()
    }

    pub fn p_t(&self) -> &[f64] {
        &self.p_t
    }

    pub fn p_c(&self) -> &[f64] {
        &self.p_c
    }
}

/// Half-differences `tau`, their mean, and averages `v` of the two arms.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSummary {
    pub tau: Vec<f64>,
    pub tau_bar: f64,
    pub v: Vec<f64>,
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn inv_logit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Potential outcomes under the log-odds-linear model
/// `logit P(y = 1) = beta0 + beta . x + betaT * w` with `w = +/-1`.
pub fn logistic_outcomes(
    x: &CovariateMatrix,
    beta0: f64,
    beta: &[f64],
    beta_t: f64,
) -> Result<PotentialOutcomes> {
    if beta.len() != x.p() {
        return Err(Error::Dimension(format!(
            "beta has {} coefficients for {} covariates",
            beta.len(),
            x.p()
        )));
    }
    let mut p_t = Vec::with_capacity(x.subjects());
    let mut p_c = Vec::with_capacity(x.subjects());
    for i in 0..x.subjects() {
        let base = beta0
            + x.row(i)
                .iter()
                .zip(beta)
                .map(|(xi, b)| xi * b)
                .sum::<f64>();
        let (zt, zc) = (base + beta_t, base - beta_t);
        if !zt.is_finite() || !zc.is_finite() {
            return Err(Error::InvalidValue(format!(
                "linear predictor of subject {i} is not finite"
            )));
        }
        p_t.push(inv_logit(zt));
        p_c.push(inv_logit(zc));
    }
    PotentialOutcomes::new(p_t, p_c)
}

pub fn effect_summary(po: &PotentialOutcomes) -> EffectSummary {
    let tau: Vec<f64> = po
        .p_t
        .iter()
        .zip(&po.p_c)
        .map(|(t, c)| (t - c) / 2.0)
        .collect();
    let v = po
        .p_t
        .iter()
        .zip(&po.p_c)
        .map(|(t, c)| (t + c) / 2.0)
        .collect();
    let tau_bar = tau.iter().sum::<f64>() / tau.len() as f64;
    EffectSummary { tau, tau_bar, v }
}

/// Draws one response vector for a realized assignment.
pub fn draw_responses<R: Rng + ?Sized>(
    po: &PotentialOutcomes,
    w: &Assignment,
    rng: &mut R,
) -> Result<Vec<u8>> {
    if w.labels().len() != po.subjects() {
        return Err(Error::Dimension(format!(
            "assignment has {} labels for {} subjects",
            w.labels().len(),
            po.subjects()
        )));
    }
    let mut y = vec![0u8; po.subjects()];
    fill_responses(po, w.labels(), rng, &mut y);
    Ok(y)
}

/// Allocation-free response draw; lengths must already agree.
pub(crate) fn fill_responses<R: Rng + ?Sized>(
    po: &PotentialOutcomes,
    labels: &[i8],
    rng: &mut R,
    out: &mut [u8],
) {
    for (i, (&w, y)) in labels.iter().zip(out.iter_mut()).enumerate() {
        let p = if w > 0 { po.p_t[i] } else { po.p_c[i] };
        // `random::<f64>()` lies in [0, 1), so p = 1 always fires and p = 0 never does.
        *y = u8::from(rng.random::<f64>() < p);
    }
}

/// Writes `subject,y` with binary responses.
pub fn write_responses<W: Write>(writer: W, y: &[u8]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["subject", "y"])?;
    for (i, v) in y.iter().enumerate() {
        wtr.write_record([i.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `subject,y`; ids must run `0..2n` in order and responses be 0 or 1.
pub fn read_responses<R: Read>(reader: R) -> Result<Vec<u8>> {
    crate::design::read_indexed_column(reader, |field| match field {
        "0" => Some(0u8),
        "1" => Some(1u8),
        _ => None,
    })
}

/// Writes `subject,x1..xp,p_t,p_c`.
pub fn write_population<W: Write>(
    writer: W,
    x: &CovariateMatrix,
    po: Option<&PotentialOutcomes>,
) -> Result<()> {
    if let Some(po) = po {
        if po.subjects() != x.subjects() {
            return Err(Error::Dimension(
                "population and covariates disagree on subject count".into(),
            ));
        }
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["subject".to_string()];
    header.extend((1..=x.p()).map(|j| format!("x{j}")));
    if po.is_some() {
        header.push("p_t".into());
        header.push("p_c".into());
    }
    wtr.write_record(&header)?;
    for i in 0..x.subjects() {
        let mut rec = vec![i.to_string()];
        rec.extend(x.row(i).iter().map(f64::to_string));
        if let Some(po) = po {
            rec.push(po.p_t[i].to_string());
            rec.push(po.p_c[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a covariate or population CSV written by [`write_population`].
///
/// Rows must be listed in subject order `0..2n`. The probability columns are
/// optional; when absent only covariates are returned.
pub fn read_population<R: Read>(
    reader: R,
) -> Result<(CovariateMatrix, Option<PotentialOutcomes>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("subject") {
        return Err(Error::Parse("first column must be `subject`".into()));
    }
    let x_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x'))
        .map(|(k, _)| k)
        .collect();
    let pt_col = headers.iter().position(|h| h == "p_t");
    let pc_col = headers.iter().position(|h| h == "p_c");
    if pt_col.is_some() != pc_col.is_some() {
        return Err(Error::Parse("p_t and p_c must appear together".into()));
    }
    if x_cols.is_empty() {
        return Err(Error::Parse("no covariate columns (x1..xp)".into()));
    }
    let mut values = Vec::new();
    let (mut p_t, mut p_c) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = parse_usize(&rec, 0, line)?;
        if id != line {
            return Err(Error::Parse(format!(
                "row {} has subject id {id}; ids must run 0..2n in order",
                line + 1
            )));
        }
        for &k in &x_cols {
            values.push(parse_f64(&rec, k, line)?);
        }
        if let (Some(t), Some(c)) = (pt_col, pc_col) {
            p_t.push(parse_f64(&rec, t, line)?);
            p_c.push(parse_f64(&rec, c, line)?);
        }
    }
    let rows = values.len() / x_cols.len();
    let x = CovariateMatrix::new(values, rows, x_cols.len())?;
    let po = if pt_col.is_some() {
        Some(PotentialOutcomes::new(p_t, p_c)?)
    } else {
        None
    };
    Ok((x, po))
}

pub(crate) fn parse_f64(rec: &csv::StringRecord, k: usize, line: usize) -> Result<f64> {
    let field = rec
        .get(k)
        .ok_or_else(|| Error::Parse(format!("row {} is missing column {}", line + 1, k + 1)))?;
    field.trim().parse().map_err(|_| {
        Error::Parse(format!(
            "row {} column {}: `{field}` is not a number",
            line + 1,
            k + 1
        ))
    })
}

pub(crate) fn parse_usize(rec: &csv::StringRecord, k: usize, line: usize) -> Result<usize> {
    let field = rec
        .get(k)
        .ok_or_else(|| Error::Parse(format!("row {} is missing column {}", line + 1, k + 1)))?;
    field.trim().parse().map_err(|_| {
        Error::Parse(format!(
            "row {} column {}: `{field}` is not a non-negative integer",
            line + 1,
            k + 1
        ))
    })
}
