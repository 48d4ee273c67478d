//! Block structures, balanced assignments and the design covariance.
//!
//! A design partitions the `2n` subjects into `B` blocks of equal even size
//! `n_B = 2n / B` and assigns exactly half of every block to treatment. Under
//! such a design the assignment vector `W` has covariance
//! `Sigma` with unit diagonal, `-1/(n_B - 1)` between distinct members of the
//! same block and zero across blocks.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::outcome::{parse_usize, CovariateMatrix};

/// A partition of subjects `0..2n` into equally sized blocks of even size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
    block_size: usize,
}

impl BlockStructure {
    /// Validates and wraps an explicit partition. Members of each block are
    /// stored in ascending subject order.
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let count: usize = blocks.iter().map(Vec::len).sum();
        let block_size = blocks.first().map_or(0, Vec::len);
        if blocks.is_empty() || block_size == 0 {
            return Err(Error::InvalidValue("a design needs at least one non-empty block".into()));
        }
        if blocks.iter().any(|b| b.len() != block_size) || !block_size.is_multiple_of(2) {
            return Err(Error::Divisibility {
                count,
                blocks: blocks.len(),
            });
        }
        let mut block_of = vec![usize::MAX; count];
        for (b, members) in blocks.iter_mut().enumerate() {
            members.sort_unstable();
            for &i in members.iter() {
                if i >= count {
                    return Err(Error::InvalidValue(format!(
                        "subject {i} out of range for {count} subjects"
                    )));
                }
                if block_of[i] != usize::MAX {
                    return Err(Error::InvalidValue(format!("subject {i} appears in two blocks")));
                }
                block_of[i] = b;
            }
        }
        Ok(Self {
            blocks,
            block_of,
            block_size,
        })
    }

    /// Balanced complete randomization: every subject in one block.
    pub fn bcrd(subjects: usize) -> Result<Self> {
        check_divisibility(subjects, 1)?;
        Self::new(vec![(0..subjects).collect()])
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &[usize] {
        &self.blocks[b]
    }

    /// Block containing subject `i`.
    pub fn block_of(&self, i: usize) -> usize {
        self.block_of[i]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `n_B`.
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// `2n`.
    pub fn subjects(&self) -> usize {
        self.block_of.len()
    }

    pub fn covariance(&self) -> DesignCovariance<'_> {
        DesignCovariance { structure: self }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["subject", "block"])?;
        for (i, b) in self.block_of.iter().enumerate() {
            wtr.write_record([i.to_string(), b.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a `subject,block` CSV. Block ids must be `0..B`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let subject = parse_usize(&rec, 0, line)?;
            let block = parse_usize(&rec, 1, line)?;
            if block >= blocks.len() {
                blocks.resize_with(block + 1, Vec::new);
            }
            blocks[block].push(subject);
        }
        if blocks.iter().any(Vec::is_empty) {
            return Err(Error::Parse("block ids must be contiguous from 0".into()));
        }
        Self::new(blocks)
    }
}

fn check_divisibility(count: usize, blocks: usize) -> Result<usize> {
    if blocks == 0 || count == 0 || !count.is_multiple_of(blocks) || !(count / blocks).is_multiple_of(2) {
        return Err(Error::Divisibility { count, blocks });
    }
    Ok(count / blocks)
}

/// Subject indices ordered by `values`, ties broken by subject index.
fn stable_order(values: &[f64], subjects: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut order: Vec<usize> = subjects.into_iter().collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// Sorts subjects on `x` and slices at the sample quantiles `1/B, ..., (B-1)/B`.
///
/// Block 0 holds the `n_B` smallest values, block 1 the next `n_B`, and so on.
/// `B = 1` gives BCRD and `B = n` the sorted pairing.
pub fn quantile_blocks(x: &[f64], num_blocks: usize) -> Result<BlockStructure> {
    let size = check_divisibility(x.len(), num_blocks)?;
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidValue("covariate contains NaN".into()));
    }
    let order = stable_order(x, 0..x.len());
    BlockStructure::new(order.chunks(size).map(<[usize]>::to_vec).collect())
}

/// Two-level blocking: `B/2` quantile strata on covariate 1, each split in
/// two by covariate 2. Any further covariates are ignored.
pub fn hierarchical_blocks(x: &CovariateMatrix, num_blocks: usize) -> Result<BlockStructure> {
    if x.p() < 2 {
        return Err(Error::Dimension(format!(
            "hierarchical blocking needs at least 2 covariates, got {}",
            x.p()
        )));
    }
    if !num_blocks.is_multiple_of(2) {
        return Err(Error::OddBlockCount(num_blocks));
    }
    let size = check_divisibility(x.subjects(), num_blocks)?;
    let first = x.column(0);
    let second = x.column(1);
    let outer = stable_order(&first, 0..x.subjects());
    let mut blocks = Vec::with_capacity(num_blocks);
    for stratum in outer.chunks(2 * size) {
        let mut inner = stratum.to_vec();
        // stable, so equal second covariates keep their first-covariate order
        inner.sort_by(|&a, &b| second[a].total_cmp(&second[b]));
        blocks.push(inner[..size].to_vec());
        blocks.push(inner[size..].to_vec());
    }
    BlockStructure::new(blocks)
}

/// Treatment labels `+1` / `-1`, balanced within every block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    labels: Vec<i8>,
}

impl Assignment {
    /// Validates per-block balance of explicit labels.
    pub fn from_labels(labels: Vec<i8>, bs: &BlockStructure) -> Result<Self> {
        if labels.len() != bs.subjects() {
            return Err(Error::Dimension(format!(
                "{} labels for {} subjects",
                labels.len(),
                bs.subjects()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&w| w != 1 && w != -1) {
            return Err(Error::InvalidValue(format!("treatment label {bad} is not +1 or -1")));
        }
        check_balance(&labels, bs)?;
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<i8> {
        self.labels
    }

    /// Reverses every label; still balanced.
    pub fn flipped(&self) -> Self {
        Self {
            labels: self.labels.iter().map(|w| -w).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["subject", "w"])?;
        for (i, w) in self.labels.iter().enumerate() {
            let w = if *w > 0 { "+1" } else { "-1" };
            wtr.write_record([i.to_string().as_str(), w])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, bs: &BlockStructure) -> Result<Self> {
        let labels = read_indexed_column(reader, |field| match field {
            "+1" | "1" => Some(1i8),
            "-1" => Some(-1i8),
            _ => None,
        })?;
        Self::from_labels(labels, bs)
    }
}

/// Reads a two-column `subject,value` CSV whose ids run `0..len` in order.
pub(crate) fn read_indexed_column<R: Read, T>(
    reader: R,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = parse_usize(&rec, 0, line)?;
        if id != line {
            return Err(Error::Parse(format!(
                "row {} has subject id {id}; ids must run 0..2n in order",
                line + 1
            )));
        }
        let field = rec.get(1).map(str::trim).unwrap_or("");
        let value = parse(field).ok_or_else(|| {
            Error::Parse(format!("row {}: unexpected value `{field}`", line + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub(crate) fn check_balance(labels: &[i8], bs: &BlockStructure) -> Result<()> {
    for (b, members) in bs.blocks().iter().enumerate() {
        let treated = members.iter().filter(|&&i| labels[i] > 0).count();
        if 2 * treated != members.len() {
            return Err(Error::Unbalanced {
                block: b,
                treated,
                size: members.len(),
            });
        }
    }
    Ok(())
}

/// Uniformly random balanced labeling of every block, blocks independent.
pub fn sample_assignment<R: Rng + ?Sized>(bs: &BlockStructure, rng: &mut R) -> Assignment {
    let mut labels = vec![0i8; bs.subjects()];
    let mut scratch = Vec::with_capacity(bs.block_size());
    fill_assignment(bs, rng, &mut labels, &mut scratch);
    Assignment { labels }
}

/// Shuffles a half-and-half label vector into each block.
pub(crate) fn fill_assignment<R: Rng + ?Sized>(
    bs: &BlockStructure,
    rng: &mut R,
    labels: &mut [i8],
    scratch: &mut Vec<i8>,
) {
    let half = bs.block_size() / 2;
    for members in bs.blocks() {
        scratch.clear();
        scratch.resize(half, 1);
        scratch.resize(2 * half, -1);
        scratch.shuffle(rng);
        for (&i, &w) in members.iter().zip(scratch.iter()) {
            labels[i] = w;
        }
    }
}

/// Exact mixed moment `E[W_i1 ... W_ik]` for 2 to 4 distinct subjects of one block.
pub fn design_moment(bs: &BlockStructure, indices: &[usize]) -> Result<f64> {
    let reject = || Error::NotCoBlocked(indices.to_vec());
    if !(2..=4).contains(&indices.len()) {
        return Err(Error::InvalidValue(format!(
            "design moments are defined for 2 to 4 indices, got {}",
            indices.len()
        )));
    }
    if indices.iter().any(|&i| i >= bs.subjects()) {
        return Err(reject());
    }
    let block = bs.block_of(indices[0]);
    if indices.iter().any(|&i| bs.block_of(i) != block) {
        return Err(reject());
    }
    for (k, i) in indices.iter().enumerate() {
        if indices[..k].contains(i) {
            return Err(reject());
        }
    }
    let nb = bs.block_size() as f64;
    match indices.len() {
        2 => Ok(-1.0 / (nb - 1.0)),
        3 => Ok(0.0),
        _ => {
            if bs.block_size() <= 3 {
                return Err(Error::MomentPole(bs.block_size()));
            }
            Ok(3.0 / ((nb - 3.0) * (nb - 1.0)))
        }
    }
}

/// The block-diagonal covariance of the assignment vector, never stored densely.
#[derive(Debug, Clone, Copy)]
pub struct DesignCovariance<'a> {
    structure: &'a BlockStructure,
}

impl DesignCovariance<'_> {
    pub fn structure(&self) -> &BlockStructure {
        self.structure
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else if self.structure.block_of(i) == self.structure.block_of(j) {
            -1.0 / (self.structure.block_size() as f64 - 1.0)
        } else {
            0.0
        }
    }

    /// `z' Sigma z` as `sum_b n_B/(n_B - 1) * sum_{i in b} (z_i - mean_b)^2`.
    pub fn quadratic_form(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.structure.subjects() {
            return Err(Error::Dimension(format!(
                "vector of length {} for {} subjects",
                z.len(),
                self.structure.subjects()
            )));
        }
        let nb = self.structure.block_size() as f64;
        let mut total = 0.0;
        for members in self.structure.blocks() {
            let mean = members.iter().map(|&i| z[i]).sum::<f64>() / nb;
            total += members.iter().map(|&i| (z[i] - mean).powi(2)).sum::<f64>();
        }
        Ok(total * nb / (nb - 1.0))
    }

    /// Dense `2n x 2n` matrix for small checks; refuses more than 64 subjects.
    pub fn dense(&self) -> Result<Vec<Vec<f64>>> {
        let m = self.structure.subjects();
        if m > 64 {
            return Err(Error::InvalidValue(format!(
                "dense design covariance limited to 64 subjects, got {m}"
            )));
        }
        Ok((0..m)
            .map(|i| (0..m).map(|j| self.entry(i, j)).collect())
            .collect())
    }
}

/// `z' Sigma z` for the covariance induced by `bs`.
pub fn quadratic_form(bs: &BlockStructure, z: &[f64]) -> Result<f64> {
    bs.covariance().quadratic_form(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_quadratic(bs: &BlockStructure, z: &[f64]) -> f64 {
        let sigma = bs.covariance().dense().unwrap();
        let mut total = 0.0;
        for (i, row) in sigma.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                total += z[i] * s * z[j];
            }
        }
        total
    }

    #[test]
    fn quantile_blocks_follow_sorted_order() {
        let bs = quantile_blocks(&[3.0, 1.0, 4.0, 2.0], 2).unwrap();
        assert_eq!(bs.blocks(), &[vec![1, 3], vec![0, 2]]);
    }

    #[test]
    fn one_block_is_bcrd() {
        let bs = quantile_blocks(&[0.5, -1.0, 2.0, 0.0, 9.0, 3.0], 1).unwrap();
        assert_eq!(bs.num_blocks(), 1);
        assert_eq!(bs.block(0), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(bs, BlockStructure::bcrd(6).unwrap());
    }

    #[test]
    fn n_blocks_pair_adjacent_order_statistics() {
        let x = [0.9, -0.3, 2.2, 0.1, -1.7, 1.4];
        let bs = quantile_blocks(&x, 3).unwrap();
        // sorted: 4 (-1.7), 1 (-0.3), 3 (0.1), 0 (0.9), 5 (1.4), 2 (2.2)
        assert_eq!(bs.blocks(), &[vec![1, 4], vec![0, 3], vec![2, 5]]);
        assert_eq!(bs.block_size(), 2);
        assert_eq!(bs.covariance().entry(1, 4), -1.0);
    }

    #[test]
    fn divisibility_is_an_error() {
        let x: Vec<f64> = (0..48).map(f64::from).collect();
        assert!(matches!(
            quantile_blocks(&x, 7),
            Err(Error::Divisibility { count: 48, blocks: 7 })
        ));
        // 48 / 16 = 3 is odd
        assert!(quantile_blocks(&x, 16).is_err());
        assert!(quantile_blocks(&x, 0).is_err());
        assert!(quantile_blocks(&x, 48).is_err());
        assert!(quantile_blocks(&x, 24).is_ok());
    }

    #[test]
    fn quantile_ties_use_subject_order() {
        let bs = quantile_blocks(&[1.0, 0.0, 1.0, 1.0, 0.0, 1.0], 3).unwrap();
        assert_eq!(bs.blocks(), &[vec![1, 4], vec![0, 2], vec![3, 5]]);
    }

    #[test]
    fn hierarchical_splits_strata_on_second_covariate() {
        // covariate 1 splits {0,1,2,3} from {4,5,6,7}; covariate 2 pairs within
        let x = CovariateMatrix::from_rows(&[
            vec![0.0, 5.0],
            vec![0.1, 1.0],
            vec![0.2, 4.0],
            vec![0.3, 2.0],
            vec![1.0, 0.5],
            vec![1.1, 0.6],
            vec![1.2, 0.1],
            vec![1.3, 0.2],
        ])
        .unwrap();
        let bs = hierarchical_blocks(&x, 4).unwrap();
        assert_eq!(
            bs.blocks(),
            &[vec![1, 3], vec![0, 2], vec![6, 7], vec![4, 5]]
        );
    }

    #[test]
    fn hierarchical_constant_second_covariate() {
        let x = CovariateMatrix::from_rows(&[
            vec![3.0, 1.0],
            vec![0.0, 1.0],
            vec![2.0, 1.0],
            vec![1.0, 1.0],
            vec![5.0, 1.0],
            vec![4.0, 1.0],
            vec![7.0, 1.0],
            vec![6.0, 1.0],
        ])
        .unwrap();
        let bs = hierarchical_blocks(&x, 4).unwrap();
        assert_eq!(
            bs.blocks(),
            &[vec![1, 3], vec![0, 2], vec![4, 5], vec![6, 7]]
        );
    }

    #[test]
    fn hierarchical_ignores_extra_covariates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
            .collect();
        let five = CovariateMatrix::from_rows(&rows).unwrap();
        let two = CovariateMatrix::from_rows(
            &rows.iter().map(|r| r[..2].to_vec()).collect::<Vec<_>>(),
        )
        .unwrap();
        for b in [2, 4, 6] {
            assert_eq!(
                hierarchical_blocks(&five, b).unwrap(),
                hierarchical_blocks(&two, b).unwrap()
            );
        }
    }

    #[test]
    fn hierarchical_validation() {
        let x = CovariateMatrix::from_rows(&vec![vec![0.0, 1.0]; 12]).unwrap();
        assert!(matches!(hierarchical_blocks(&x, 3), Err(Error::OddBlockCount(3))));
        assert!(matches!(
            hierarchical_blocks(&x, 4),
            Err(Error::Divisibility { .. })
        ));
        let one = CovariateMatrix::from_column(&[0.0; 8]).unwrap();
        assert!(hierarchical_blocks(&one, 2).is_err());
    }

    #[test]
    fn invalid_partitions_rejected() {
        assert!(BlockStructure::new(vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(BlockStructure::new(vec![vec![0, 1], vec![2, 5]]).is_err());
        assert!(BlockStructure::new(vec![vec![0, 1, 2], vec![3, 4, 5]]).is_err());
        assert!(BlockStructure::new(vec![vec![0, 1], vec![2, 3, 4, 5]]).is_err());
    }

    #[test]
    fn pair_block_labelings_are_fair() {
        let bs = BlockStructure::bcrd(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 100_000;
        let first_treated = (0..draws)
            .filter(|_| {
                let w = sample_assignment(&bs, &mut rng);
                assert_eq!(w.labels()[0], -w.labels()[1]);
                w.labels()[0] == 1
            })
            .count();
        let share = first_treated as f64 / draws as f64;
        assert!((share - 0.5).abs() < 4.0 * (0.25 / draws as f64).sqrt());
    }

    #[test]
    fn empirical_label_moments() {
        // two blocks of 4: E[W_i] = 0, same-block E[W_i W_j] = -1/3, cross-block 0
        let bs = BlockStructure::new(vec![vec![0, 2, 4, 6], vec![1, 3, 5, 7]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let (mut m0, mut same, mut cross) = (0i64, 0i64, 0i64);
        for _ in 0..draws {
            let w = sample_assignment(&bs, &mut rng);
            let l = w.labels();
            m0 += l[0] as i64;
            same += (l[0] * l[2]) as i64;
            cross += (l[0] * l[1]) as i64;
        }
        let d = draws as f64;
        let se = 1.0 / d.sqrt();
        assert!((m0 as f64 / d).abs() < 4.0 * se);
        assert!((same as f64 / d + 1.0 / 3.0).abs() < 4.0 * se);
        assert!((cross as f64 / d).abs() < 4.0 * se);
    }

    #[test]
    fn design_moment_values() {
        let pairs = BlockStructure::bcrd(2).unwrap();
        assert_eq!(design_moment(&pairs, &[0, 1]).unwrap(), -1.0);
        let four = BlockStructure::bcrd(4).unwrap();
        assert_eq!(design_moment(&four, &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(design_moment(&four, &[3, 1, 0, 2]).unwrap(), 1.0);
        let eight = BlockStructure::bcrd(8).unwrap();
        assert!((design_moment(&eight, &[0, 5]).unwrap() + 1.0 / 7.0).abs() < 1e-15);
        assert!((design_moment(&eight, &[0, 1, 2, 3]).unwrap() - 3.0 / 35.0).abs() < 1e-15);
    }

    #[test]
    fn design_moment_errors() {
        let bs = BlockStructure::new(vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]).unwrap();
        assert!(matches!(design_moment(&bs, &[0, 4]), Err(Error::NotCoBlocked(_))));
        assert!(matches!(design_moment(&bs, &[0, 0]), Err(Error::NotCoBlocked(_))));
        assert!(design_moment(&bs, &[0]).is_err());
        assert!(design_moment(&bs, &[0, 1, 2, 3, 4]).is_err());
        assert!(design_moment(&bs, &[0, 99]).is_err());
    }

    #[test]
    fn quadratic_form_examples() {
        let bs = BlockStructure::bcrd(2).unwrap();
        assert_eq!(quadratic_form(&bs, &[1.0, 0.0]).unwrap(), 1.0);
        let bs = BlockStructure::new(vec![vec![0, 3], vec![1, 2]]).unwrap();
        assert_eq!(quadratic_form(&bs, &[2.5, -1.0, -1.0, 2.5]).unwrap(), 0.0);
        assert!(quadratic_form(&bs, &[1.0]).is_err());
    }

    #[test]
    fn dense_covariance_refuses_large_designs() {
        assert!(BlockStructure::bcrd(66).unwrap().covariance().dense().is_err());
        let sigma = BlockStructure::bcrd(4).unwrap().covariance().dense().unwrap();
        for row in &sigma {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let bs = quantile_blocks(&[0.4, 0.1, 0.3, 0.2, 0.6, 0.5], 3).unwrap();
        let mut buf = Vec::new();
        bs.write_csv(&mut buf).unwrap();
        assert_eq!(BlockStructure::read_csv(buf.as_slice()).unwrap(), bs);

        let w = sample_assignment(&bs, &mut ChaCha8Rng::seed_from_u64(9));
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert_eq!(Assignment::read_csv(buf.as_slice(), &bs).unwrap(), w);

        let unbalanced = "subject,w\n0,+1\n1,+1\n2,+1\n3,-1\n4,-1\n5,-1\n";
        let err = Assignment::read_csv(unbalanced.as_bytes(), &bs).unwrap_err();
        assert!(matches!(err, Error::Unbalanced { .. }), "{err}");
        let garbage = "subject,w\n0,x\n";
        assert!(matches!(
            Assignment::read_csv(garbage.as_bytes(), &bs),
            Err(Error::Parse(_))
        ));
    }

    fn structure_strategy() -> impl Strategy<Value = (BlockStructure, Vec<f64>)> {
        (1usize..=8, 1usize..=4, any::<u64>()).prop_flat_map(|(blocks, half, seed)| {
            let m = blocks * half * 2;
            (
                Just(blocks),
                prop::collection::vec(-5.0f64..5.0, m),
                Just(seed),
            )
                .prop_map(|(blocks, z, seed)| {
                    let mut order: Vec<usize> = (0..z.len()).collect();
                    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                    let size = z.len() / blocks;
                    let bs = BlockStructure::new(
                        order.chunks(size).map(<[usize]>::to_vec).collect(),
                    )
                    .unwrap();
                    (bs, z)
                })
        })
    }

    proptest! {
        #[test]
        fn quadratic_form_matches_dense((bs, z) in structure_strategy()) {
            let fast = quadratic_form(&bs, &z).unwrap();
            let dense = dense_quadratic(&bs, &z);
            prop_assert!((fast - dense).abs() <= 1e-12 * (1.0 + dense.abs()));
        }

        #[test]
        fn quadratic_form_within_eigenvalue_bounds((bs, z) in structure_strategy()) {
            let q = quadratic_form(&bs, &z).unwrap();
            let norm: f64 = z.iter().map(|v| v * v).sum();
            prop_assert!(q >= -1e-12);
            prop_assert!(q <= 2.0 * norm + 1e-9);
        }

        #[test]
        fn sampled_assignments_are_balanced((bs, _z) in structure_strategy(), seed: u64) {
            let w = sample_assignment(&bs, &mut ChaCha8Rng::seed_from_u64(seed));
            for members in bs.blocks() {
                prop_assert_eq!(members.iter().map(|&i| w.labels()[i] as i32).sum::<i32>(), 0);
            }
            prop_assert_eq!(w.labels().iter().map(|&l| l as i32).sum::<i32>(), 0);
        }
    }
}
