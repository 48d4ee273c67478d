//! Result rows, their CSV form and the multiplicity-corrected size report.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{DesignKind, SweepRow};
use crate::error::{Error, Result};

/// One row of the results CSV. Fields other than the cell key are empty for
/// cells that failed, and `error` holds the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    #[serde(rename = "twoN")]
    pub two_n: usize,
    #[serde(rename = "B")]
    pub blocks: usize,
    pub p: usize,
    #[serde(rename = "betaT")]
    pub beta_t: f64,
    #[serde(rename = "designKind")]
    pub design: DesignKind,
    #[serde(rename = "NY")]
    pub ny: usize,
    pub rejections: Option<usize>,
    #[serde(rename = "undefinedCount")]
    pub undefined_count: Option<usize>,
    pub rate: Option<f64>,
    #[serde(rename = "ciLow")]
    pub ci_low: Option<f64>,
    #[serde(rename = "ciHigh")]
    pub ci_high: Option<f64>,
    #[serde(rename = "sizeTestP")]
    pub size_test_p: Option<f64>,
    #[serde(rename = "etaN")]
    pub eta_n: Option<f64>,
    #[serde(rename = "vQuad")]
    pub v_quad: Option<f64>,
    #[serde(rename = "secondOrder")]
    pub second_order: Option<f64>,
    #[serde(rename = "wallclockSeconds")]
    pub wallclock_seconds: Option<f64>,
    pub error: Option<String>,
}

impl ResultRecord {
    /// Flattens a sweep row. Timing is dropped unless `timing` is set, so that
    /// reruns with the same seed give identical files.
    pub fn from_row(row: &SweepRow, timing: bool) -> Self {
        let s = &row.spec;
        let mut rec = ResultRecord {
            two_n: s.two_n,
            blocks: s.blocks,
            p: s.p,
            beta_t: s.beta_t,
            design: s.design,
            ny: s.ny,
            rejections: None,
            undefined_count: None,
            rate: None,
            ci_low: None,
            ci_high: None,
            size_test_p: None,
            eta_n: None,
            v_quad: None,
            second_order: None,
            wallclock_seconds: None,
            error: None,
        };
        match &row.outcome {
            Ok(r) => {
                rec.rejections = Some(r.rejections);
                rec.undefined_count = Some(r.undefined_count);
                rec.rate = Some(r.rate);
                rec.ci_low = Some(r.ci_low);
                rec.ci_high = Some(r.ci_high);
                rec.size_test_p = r.size_test_p;
                rec.eta_n = Some(r.theory.eta_n);
                rec.v_quad = Some(r.theory.v_quad);
                rec.second_order = Some(r.theory.second_order);
                rec.wallclock_seconds = timing.then_some(r.wallclock_seconds);
            }
            Err(e) => rec.error = Some(e.clone()),
        }
        rec
    }

    /// Monte Carlo standard error of the rate.
    pub fn standard_error(&self) -> Option<f64> {
        self.rate.map(|r| (r * (1.0 - r) / self.ny as f64).sqrt())
    }
}

pub fn write_results<W: Write>(writer: W, records: &[ResultRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for rec in records {
        wtr.serialize(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize().enumerate() {
        out.push(rec.map_err(|e| Error::Parse(format!("results row {}: {e}", k + 2)))?);
    }
    Ok(out)
}

/// A null cell whose calibration test rejects after correction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeFlag {
    #[serde(rename = "twoN")]
    pub two_n: usize,
    #[serde(rename = "B")]
    pub blocks: usize,
    pub p: usize,
    #[serde(rename = "designKind")]
    pub design: DesignKind,
    pub rate: f64,
    #[serde(rename = "sizeTestP")]
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    /// Familywise level before correction.
    pub level: f64,
    /// Number of tests the level is divided over.
    pub tests: usize,
    /// Per-test threshold `level / tests`.
    pub threshold: f64,
    pub flagged: Vec<SizeFlag>,
}

impl SizeReport {
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "size calibration: {} null cells, level {} over {} tests, threshold {:.3e}",
            self.tests, self.level, self.tests, self.threshold
        )?;
        if self.flagged.is_empty() {
            writeln!(w, "no cells flagged")?;
        }
        for f in &self.flagged {
            writeln!(
                w,
                "flagged 2n={} B={} p={} {} rate={:.5} p={:.3e}",
                f.two_n, f.blocks, f.p, f.design, f.rate, f.p_value
            )?;
        }
        Ok(())
    }
}

/// Flags null cells whose size test rejects at `level / tests`, where
/// `tests` defaults to the number of null cells in `records`.
pub fn bonferroni_size_report(
    records: &[ResultRecord],
    level: f64,
    tests: Option<usize>,
) -> SizeReport {
    let null: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| r.size_test_p.is_some() && r.rate.is_some())
        .collect();
    let tests = tests.unwrap_or(null.len()).max(1);
    let threshold = level / tests as f64;
    let flagged = null
        .iter()
        .filter_map(|r| {
            let p_value = r.size_test_p?;
            let rate = r.rate?;
            (p_value < threshold).then_some(SizeFlag {
                two_n: r.two_n,
                blocks: r.blocks,
                p: r.p,
                design: r.design,
                rate,
                p_value,
            })
        })
        .collect();
    SizeReport {
        level,
        tests,
        threshold,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{size_test_p_value, CellSpec};
    use super::*;

    fn null_record(blocks: usize, rejections: usize, ny: usize) -> ResultRecord {
        let rate = rejections as f64 / ny as f64;
        ResultRecord {
            two_n: 384,
            blocks,
            p: 1,
            beta_t: 0.0,
            design: DesignKind::QuantileBlocks,
            ny,
            rejections: Some(rejections),
            undefined_count: Some(0),
            rate: Some(rate),
            ci_low: Some(rate),
            ci_high: Some(rate),
            size_test_p: Some(size_test_p_value(rejections, ny, 0.05)),
            eta_n: Some(0.2),
            v_quad: Some(0.01),
            second_order: Some(0.0),
            wallclock_seconds: None,
            error: None,
        }
    }

    #[test]
    fn exact_size_is_never_flagged() {
        let recs: Vec<_> = (1..=10).map(|b| null_record(b, 5000, 100_000)).collect();
        let report = bonferroni_size_report(&recs, 0.05, None);
        assert_eq!(report.tests, 10);
        assert!(report.flagged.is_empty());
    }

    #[test]
    fn gross_miscalibration_is_flagged() {
        let mut recs: Vec<_> = (1..=10).map(|b| null_record(b, 5000, 100_000)).collect();
        recs.push(null_record(16, 20_000, 100_000));
        let report = bonferroni_size_report(&recs, 0.05, Some(444));
        assert_eq!(report.flagged.len(), 1);
        assert_eq!(report.flagged[0].blocks, 16);
        let z = (0.20 - 0.05) / (0.05f64 * 0.95 / 1e5).sqrt();
        assert!(z > 200.0);
    }

    #[test]
    fn csv_roundtrip_with_failed_cell() {
        let mut recs = vec![null_record(4, 4999, 100_000)];
        let spec = CellSpec {
            two_n: 48,
            blocks: 5,
            p: 1,
            beta0: 0.0,
            beta_t: 0.7,
            beta: vec![1.0],
            ny: 10,
            alpha: 0.05,
            seed: 1,
            design: DesignKind::QuantileBlocks,
        };
        recs.push(ResultRecord::from_row(
            &SweepRow {
                spec,
                outcome: Err("48 subjects cannot be split, into 5 blocks".into()),
            },
            false,
        ));
        let mut buf = Vec::new();
        write_results(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "twoN,B,p,betaT,designKind,NY,rejections,undefinedCount,rate,ciLow,ciHigh,\
             sizeTestP,etaN,vQuad,secondOrder,wallclockSeconds,error\n"
        ));
        assert_eq!(read_results(buf.as_slice()).unwrap(), recs);
        assert!(read_results("twoN,B\n1,x\n".as_bytes()).is_err());
    }
}
