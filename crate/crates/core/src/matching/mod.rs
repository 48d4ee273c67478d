//! Mahalanobis distances and optimal nonbipartite pairing of subjects.

mod blossom;

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::design::BlockStructure;
use crate::error::{Error, Result};
use crate::outcome::{parse_f64, parse_usize, CovariateMatrix};
use crate::par;

pub use blossom::max_weight_matching;

/// Symmetric matrix of non-negative pairwise distances with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    d: Vec<f64>,
    size: usize,
}

impl DistanceMatrix {
    pub fn new(d: Vec<f64>, size: usize) -> Result<Self> {
        if d.len() != size * size {
            return Err(Error::Dimension(format!(
                "{} distances for a {size} x {size} matrix",
                d.len()
            )));
        }
        for i in 0..size {
            if d[i * size + i] != 0.0 {
                return Err(Error::InvalidValue(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (d[i * size + j], d[j * size + i]);
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidValue(format!(
                        "distance ({i}, {j}) = {a} is not a finite non-negative number"
                    )));
                }
                if a != b {
                    return Err(Error::InvalidValue(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { d, size })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut d = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..i {
                let v = f(i, j);
                d[i * size + j] = v;
                d[j * size + i] = v;
            }
        }
        Self::new(d, size)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.size + j]
    }

    /// Writes the square matrix with a `subject,d0,..,d{m-1}` header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["subject".to_string()];
        header.extend((0..self.size).map(|j| format!("d{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.size {
            let mut rec = vec![i.to_string()];
            rec.extend((0..self.size).map(|j| self.get(i, j).to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let size = rdr.headers()?.len().saturating_sub(1);
        let mut d = Vec::with_capacity(size * size);
        let mut rows = 0;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if parse_usize(&rec, 0, line)? != line {
                return Err(Error::Parse(format!("row {} is out of subject order", line + 1)));
            }
            for k in 1..=size {
                d.push(parse_f64(&rec, k, line)?);
            }
            rows += 1;
        }
        if rows != size {
            return Err(Error::Parse(format!("{rows} rows for {size} distance columns")));
        }
        Self::new(d, size)
    }
}

/// Perfect matching: unordered pairs plus their summed distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pairs: Vec<(usize, usize)>,
    total_weight: f64,
}

impl Matching {
    /// Canonicalizes pairs to `(low, high)` in ascending order and sums their
    /// distances in that order.
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>, d: &DistanceMatrix) -> Result<Self> {
        let mut seen = vec![false; d.size()];
        for pair in pairs.iter_mut() {
            if pair.0 > pair.1 {
                *pair = (pair.1, pair.0);
            }
            for v in [pair.0, pair.1] {
                if v >= d.size() || std::mem::replace(&mut seen[v], true) {
                    return Err(Error::InvalidValue(format!(
                        "subject {v} missing from or repeated in the matching"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidValue("matching does not cover every subject".into()));
        }
        pairs.sort_unstable();
        let total_weight = pairs.iter().map(|&(i, j)| d.get(i, j)).sum();
        Ok(Self {
            pairs,
            total_weight,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Writes `pair,first,second,distance`.
    pub fn write_csv<W: Write>(&self, writer: W, d: &DistanceMatrix) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["pair", "first", "second", "distance"])?;
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            wtr.write_record([
                k.to_string(),
                i.to_string(),
                j.to_string(),
                d.get(i, j).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sample covariance of the rows with the `2n - 1` denominator.
fn sample_covariance(x: &CovariateMatrix) -> DMatrix<f64> {
    let m = x.subjects();
    let p = x.p();
    let means: Vec<f64> = (0..p)
        .map(|j| (0..m).map(|i| x.get(i, j)).sum::<f64>() / m as f64)
        .collect();
    DMatrix::from_fn(p, p, |a, b| {
        (0..m)
            .map(|i| (x.get(i, a) - means[a]) * (x.get(i, b) - means[b]))
            .sum::<f64>()
            / (m as f64 - 1.0)
    })
}

/// Pairwise `(x_l - x_m)' S^-1 (x_l - x_m)` with `S` the sample covariance.
///
/// Computed by whitening every row with the Cholesky factor of `S`, so each
/// distance is a squared Euclidean norm.
pub fn mahalanobis_distances(x: &CovariateMatrix) -> Result<DistanceMatrix> {
    let m = x.subjects();
    let p = x.p();
    if p >= m {
        return Err(Error::SingularCovariance(format!(
            "{p} covariates need more than {p} subjects, got {m}"
        )));
    }
    let s = sample_covariance(x);
    for j in 0..p {
        if s[(j, j)] <= 0.0 {
            return Err(Error::SingularCovariance(format!("covariate {} is constant", j + 1)));
        }
    }
    let chol = s.clone().cholesky().ok_or_else(|| {
        Error::SingularCovariance("covariates are linearly dependent".into())
    })?;
    let l = chol.l();
    let max_var = (0..p).map(|j| s[(j, j)]).fold(0.0, f64::max);
    let min_pivot = (0..p).map(|j| l[(j, j)].powi(2)).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-12 * max_var {
        return Err(Error::SingularCovariance(
            "covariates are numerically collinear".into(),
        ));
    }
    let white: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let row = DVector::from_column_slice(x.row(i));
            let z = l
                .solve_lower_triangular(&row)
                .expect("Cholesky factor has a positive diagonal");
            z.iter().copied().collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = par::map_range(m, |i| {
        (0..m)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    white[a]
                        .iter()
                        .zip(&white[b])
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum()
                }
            })
            .collect()
    });
    DistanceMatrix::new(rows.concat(), m)
}

/// Resolution used to turn real distances into integer edge weights.
const WEIGHT_SCALE: f64 = (1u64 << 40) as f64;

/// Exact minimum-weight perfect matching on the complete graph over subjects.
///
/// Distances are mapped to integers at a resolution of `max(d) / 2^40` so the
/// blossom solver's dual updates are exact; two matchings are only confused
/// when their total weights differ by less than `n` such quanta.
pub fn min_weight_perfect_matching(d: &DistanceMatrix) -> Result<Matching> {
    let m = d.size();
    if !m.is_multiple_of(2) {
        return Err(Error::OddSubjectCount(m));
    }
    if m == 0 {
        return Matching::from_pairs(Vec::new(), d);
    }
    let max_d = d.d.iter().copied().fold(0.0, f64::max);
    let scale = if max_d > 0.0 { WEIGHT_SCALE / max_d } else { 0.0 };
    let quantized = |i: usize, j: usize| (d.get(i, j) * scale).round() as i64;
    let ceiling = (max_d * scale).round() as i64 + 1;
    let mut edges = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            edges.push((i, j, ceiling - quantized(i, j)));
        }
    }
    let mate = blossom::max_weight_matching(m, &edges, true);
    let mut pairs = Vec::with_capacity(m / 2);
    for (i, partner) in mate.iter().enumerate() {
        let j = partner.expect("maximum-cardinality matching of a complete graph is perfect");
        if i < j {
            pairs.push((i, j));
        }
    }
    Matching::from_pairs(pairs, d)
}

/// Greedy pairing: repeatedly joins the closest two unmatched subjects.
/// Benchmarking baseline only; not optimal.
pub fn greedy_matching(d: &DistanceMatrix) -> Result<Matching> {
    let m = d.size();
    if !m.is_multiple_of(2) {
        return Err(Error::OddSubjectCount(m));
    }
    let mut edges: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    edges.sort_by(|a, b| d.get(a.0, a.1).total_cmp(&d.get(b.0, b.1)).then(a.cmp(b)));
    let mut used = vec![false; m];
    let mut pairs = Vec::with_capacity(m / 2);
    for (i, j) in edges {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    Matching::from_pairs(pairs, d)
}

/// One block of two per matched pair.
pub fn pm_blockstructure(m: &Matching) -> Result<BlockStructure> {
    BlockStructure::new(m.pairs.iter().map(|&(i, j)| vec![i, j]).collect())
}
