//! Asymptotic variance and power of the signed-root CMH statistic.
//!
//! For a population with half-differences `tau` and averages `v`, the
//! linear statistic `w'Y / 2n` has mean `mean(tau)` and variance `eta_n / 2n`
//! where
//!
//! ```text
//! eta_n = v' Sigma v / 2n  +  (pT'(1 - pT) + pC'(1 - pC)) / 4n
//! ```
//!
//! The first term is the only design-dependent part: the average within-block
//! variance of `v`. Under local alternatives the signed root tends to
//! `N(c / sqrt(eta), 1)` with `c = sqrt(2n) * mean(tau)`. All values here are
//! finite-`n` plug-ins of those limits.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{quadratic_form, BlockStructure};
use crate::error::{Error, Result};
use crate::outcome::{effect_summary, PotentialOutcomes};

/// Significance level used for the power stored in a [`TheorySummary`].
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheorySummary {
    pub subjects: usize,
    pub blocks: usize,
    pub block_size: usize,
    /// `v' Sigma v / 2n`, the mean within-block variance of `v`.
    pub v_quad: f64,
    /// `(pT'(1 - pT) + pC'(1 - pC)) / 4n`.
    pub bernoulli_term: f64,
    pub eta_n: f64,
    /// `(|tau|^2 - tau' Sigma tau) / (n_B - 1)`.
    pub second_order: f64,
    pub tau_bar: f64,
    /// `|tau|^2 / 2n`.
    pub tau_sq_mean: f64,
    /// `sqrt(2n) * tau_bar`.
    pub local_c: f64,
    /// Per-block `n_B/(n_B - 1) * sum (v_i - vbar_b)^2`.
    pub block_variances: Vec<f64>,
    pub sigma_min_sq: f64,
    pub sigma_max_sq: f64,
    /// Square root of `bernoulli_term`, the conditional noise scale.
    pub bernoulli_sd: f64,
    pub alpha: f64,
    /// Two-sided power at `alpha`; `None` when `eta_n = 0`.
    pub asymptotic_power: Option<f64>,
}

impl TheorySummary {
    /// Mean of the limiting normal, `c / sqrt(eta_n)`.
    pub fn noncentrality(&self) -> Option<f64> {
        (self.eta_n > 0.0).then(|| self.local_c / self.eta_n.sqrt())
    }

    /// Closed-form `E[Y' Sigma Y / 2n]`
    /// `= (v' Sigma v + sum v_i (1 - v_i) + second_order) / 2n`,
    /// which exceeds `eta_n` by `(|tau|^2 + second_order) / 2n`.
    pub fn quadratic_form_mean(&self) -> f64 {
        self.eta_n + self.tau_sq_mean + self.second_order / self.subjects as f64
    }

    /// `sigma_min^2 / sigma_max^2`; reported only, no threshold is applied.
    pub fn sigma_ratio(&self) -> Option<f64> {
        (self.sigma_max_sq > 0.0).then(|| self.sigma_min_sq / self.sigma_max_sq)
    }
}

/// Scalar part of a summary as one CSV row keyed by `(2n, B, p, beta_T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRecord {
    #[serde(rename = "twoN")]
    pub two_n: usize,
    #[serde(rename = "B")]
    pub blocks: usize,
    pub p: usize,
    #[serde(rename = "betaT")]
    pub beta_t: f64,
    #[serde(rename = "nB")]
    pub block_size: usize,
    #[serde(rename = "vQuad")]
    pub v_quad: f64,
    #[serde(rename = "bernoulliTerm")]
    pub bernoulli_term: f64,
    #[serde(rename = "etaN")]
    pub eta_n: f64,
    #[serde(rename = "secondOrder")]
    pub second_order: f64,
    #[serde(rename = "tauBar")]
    pub tau_bar: f64,
    #[serde(rename = "localC")]
    pub local_c: f64,
    pub alpha: f64,
    #[serde(rename = "asymptoticPower")]
    pub asymptotic_power: Option<f64>,
    #[serde(rename = "sigmaMinSq")]
    pub sigma_min_sq: f64,
    #[serde(rename = "sigmaMaxSq")]
    pub sigma_max_sq: f64,
    #[serde(rename = "sigmaRatio")]
    pub sigma_ratio: Option<f64>,
    #[serde(rename = "bernoulliSd")]
    pub bernoulli_sd: f64,
}

impl TheorySummary {
    /// Recomputes the stored power at another level.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidValue(format!("alpha {alpha} is outside (0, 1)")));
        }
        self.alpha = alpha;
        self.asymptotic_power = asymptotic_power(&self, alpha).ok();
        Ok(self)
    }

    pub fn record(&self, p: usize, beta_t: f64) -> TheoryRecord {
        TheoryRecord {
            two_n: self.subjects,
            blocks: self.blocks,
            p,
            beta_t,
            block_size: self.block_size,
            v_quad: self.v_quad,
            bernoulli_term: self.bernoulli_term,
            eta_n: self.eta_n,
            second_order: self.second_order,
            tau_bar: self.tau_bar,
            local_c: self.local_c,
            alpha: self.alpha,
            asymptotic_power: self.asymptotic_power,
            sigma_min_sq: self.sigma_min_sq,
            sigma_max_sq: self.sigma_max_sq,
            sigma_ratio: self.sigma_ratio(),
            bernoulli_sd: self.bernoulli_sd,
        }
    }

    /// Pretty-printed JSON object with every field, block variances included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary fields serialize")
    }
}

pub fn write_theory_csv<W: Write>(writer: W, rows: &[TheoryRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn check_sizes(po: &PotentialOutcomes, bs: &BlockStructure) -> Result<()> {
    if po.subjects() != bs.subjects() {
        return Err(Error::Dimension(format!(
            "population of {} subjects with a design over {}",
            po.subjects(),
            bs.subjects()
        )));
    }
    Ok(())
}

fn bernoulli_variance(po: &PotentialOutcomes, i: usize) -> f64 {
    let (t, c) = (po.p_t()[i], po.p_c()[i]);
    t * (1.0 - t) + c * (1.0 - c)
}

/// Evaluates `eta_n`, its decomposition, the block variances and the
/// plug-in asymptotic power at [`DEFAULT_ALPHA`].
pub fn eta_n(po: &PotentialOutcomes, bs: &BlockStructure) -> Result<TheorySummary> {
    check_sizes(po, bs)?;
    let m = po.subjects() as f64;
    let nb = bs.block_size() as f64;
    let effects = effect_summary(po);

    let block_variances: Vec<f64> = bs
        .blocks()
        .iter()
        .map(|members| {
            let mean = members.iter().map(|&i| effects.v[i]).sum::<f64>() / nb;
            let ss: f64 = members.iter().map(|&i| (effects.v[i] - mean).powi(2)).sum();
            ss * nb / (nb - 1.0)
        })
        .collect();
    let v_quad = block_variances.iter().sum::<f64>() / m;
    let bernoulli_term = (0..po.subjects())
        .map(|i| bernoulli_variance(po, i))
        .sum::<f64>()
        / (2.0 * m);
    let eta = v_quad + bernoulli_term;
    let second_order = second_order_penalty(po, bs)?;
    let local_c = m.sqrt() * effects.tau_bar;
    let sigma_min_sq = block_variances.iter().copied().fold(f64::INFINITY, f64::min);
    let sigma_max_sq = block_variances.iter().copied().fold(0.0, f64::max);

    let mut summary = TheorySummary {
        subjects: po.subjects(),
        blocks: bs.num_blocks(),
        block_size: bs.block_size(),
        v_quad,
        bernoulli_term,
        eta_n: eta,
        second_order,
        tau_bar: effects.tau_bar,
        tau_sq_mean: effects.tau.iter().map(|t| t * t).sum::<f64>() / m,
        local_c,
        block_variances,
        sigma_min_sq,
        sigma_max_sq,
        bernoulli_sd: bernoulli_term.sqrt(),
        alpha: DEFAULT_ALPHA,
        asymptotic_power: None,
    };
    summary.asymptotic_power = asymptotic_power(&summary, DEFAULT_ALPHA).ok();
    Ok(summary)
}

/// `(|tau|^2 - tau' Sigma tau) / (n_B - 1)`, the finite-sample inflation of
/// the statistic's denominator. Positive when same-block effects share a sign
/// and largest for small blocks.
pub fn second_order_penalty(po: &PotentialOutcomes, bs: &BlockStructure) -> Result<f64> {
    check_sizes(po, bs)?;
    let tau = effect_summary(po).tau;
    let norm: f64 = tau.iter().map(|t| t * t).sum();
    let quad = quadratic_form(bs, &tau)?;
    Ok((norm - quad) / (bs.block_size() as f64 - 1.0))
}

/// Power of the two-sided level-`alpha` test against `N(c / sqrt(eta_n), 1)`:
/// `P(|Z + c/sqrt(eta)| > z_{1 - alpha/2})`.
pub fn asymptotic_power(summary: &TheorySummary, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidValue(format!("alpha {alpha} is outside (0, 1)")));
    }
    let shift = summary.noncentrality().ok_or(Error::ZeroVariance)?;
    Ok(two_sided_power(shift, alpha))
}

pub(crate) fn two_sided_power(shift: f64, alpha: f64) -> f64 {
    let normal = Normal::standard();
    let z = normal.inverse_cdf(1.0 - alpha / 2.0);
    normal.cdf(-z - shift) + normal.sf(z - shift)
}

/// Variance of block `b`'s mean contribution, scaled by `n_B`:
/// `sum (v_i - vbar_b)^2 / (n_B - 1) + sum (pT(1-pT) + pC(1-pC)) / 2 n_B`.
pub fn block_eta(po: &PotentialOutcomes, bs: &BlockStructure, b: usize) -> Result<f64> {
    check_sizes(po, bs)?;
    if b >= bs.num_blocks() {
        return Err(Error::InvalidValue(format!(
            "block {b} out of range for {} blocks",
            bs.num_blocks()
        )));
    }
    let nb = bs.block_size() as f64;
    let members = bs.block(b);
    let v: Vec<f64> = members
        .iter()
        .map(|&i| (po.p_t()[i] + po.p_c()[i]) / 2.0)
        .collect();
    let mean = v.iter().sum::<f64>() / nb;
    let spread: f64 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nb - 1.0);
    let noise: f64 = members.iter().map(|&i| bernoulli_variance(po, i)).sum::<f64>() / (2.0 * nb);
    Ok(spread + noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::quantile_blocks;
    use crate::outcome::{logistic_outcomes, CovariateMatrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_quadratic(bs: &BlockStructure, z: &[f64]) -> f64 {
        let sigma = bs.covariance().dense().unwrap();
        (0..z.len())
            .map(|i| (0..z.len()).map(|j| z[i] * sigma[i][j] * z[j]).sum::<f64>())
            .sum()
    }

    fn random_population(seed: u64, m: usize) -> PotentialOutcomes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p_t = (0..m).map(|_| rng.random()).collect();
        let p_c = (0..m).map(|_| rng.random()).collect();
        PotentialOutcomes::new(p_t, p_c).unwrap()
    }

    #[test]
    fn constant_v_within_blocks() {
        // v = 0.4 in block {0,1}, 0.7 in block {2,3}
        let po = PotentialOutcomes::new(vec![0.5, 0.3, 0.9, 0.5], vec![0.3, 0.5, 0.5, 0.9])
            .unwrap();
        let bs = BlockStructure::new(vec![vec![0, 1], vec![2, 3]]).unwrap();
        let s = eta_n(&po, &bs).unwrap();
        assert!(s.v_quad.abs() < 1e-15);
        assert_eq!(s.eta_n, s.v_quad + s.bernoulli_term);
    }

    #[test]
    fn half_probabilities_give_quarter_noise() {
        let po = PotentialOutcomes::new(vec![0.5; 6], vec![0.5; 6]).unwrap();
        let s = eta_n(&po, &BlockStructure::bcrd(6).unwrap()).unwrap();
        assert_eq!(s.bernoulli_term, 0.25);
        assert_eq!(s.eta_n, 0.25);
        assert_eq!(s.asymptotic_power, Some(0.05_f64).map(|a| two_sided_power(0.0, a)));
    }

    #[test]
    fn v_quad_matches_dense_form() {
        for seed in 0..20 {
            let po = random_population(seed, 16);
            let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
            for b in [1, 2, 4, 8] {
                let bs = quantile_blocks(&x, b).unwrap();
                let v = effect_summary(&po).v;
                let dense = dense_quadratic(&bs, &v) / 16.0;
                assert!((eta_n(&po, &bs).unwrap().v_quad - dense).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn second_order_examples() {
        let po = PotentialOutcomes::new(vec![0.4; 4], vec![0.4; 4]).unwrap();
        let bs = BlockStructure::bcrd(4).unwrap();
        assert_eq!(second_order_penalty(&po, &bs).unwrap(), 0.0);

        let t = 0.15;
        let po = PotentialOutcomes::new(vec![0.5 + t, 0.6 + t], vec![0.5 - t, 0.6 - t]).unwrap();
        let bs = BlockStructure::bcrd(2).unwrap();
        assert!((second_order_penalty(&po, &bs).unwrap() - 2.0 * t * t).abs() < 1e-15);
    }

    #[test]
    fn power_limits_and_normal_oracle() {
        let po = PotentialOutcomes::new(vec![0.5; 4], vec![0.5; 4]).unwrap();
        let mut s = eta_n(&po, &BlockStructure::bcrd(4).unwrap()).unwrap();
        // the normal quantile is accurate to about 1e-12
        assert!((asymptotic_power(&s, 0.05).unwrap() - 0.05).abs() < 1e-10);
        assert!((asymptotic_power(&s, 0.2).unwrap() - 0.2).abs() < 1e-10);

        s.local_c = 2.8 * s.eta_n.sqrt();
        // 1 - Phi(1.959964 - 2.8) + Phi(-1.959964 - 2.8), Phi from erfc
        let phi = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
        let z = 1.959_963_984_540_054;
        let oracle = 1.0 - phi(z - 2.8) + phi(-z - 2.8);
        assert!((asymptotic_power(&s, 0.05).unwrap() - oracle).abs() < 1e-10);
        assert!((oracle - 0.799_556_871).abs() < 1e-8);

        s.local_c = 1e3;
        assert!(asymptotic_power(&s, 0.05).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn quadratic_form_mean_matches_enumeration() {
        // E[Y'SY | w] = sum_i mu_i + sum_{i != j} S_ij mu_i mu_j, averaged
        // over every balanced assignment.
        let po = random_population(5, 8);
        let bs = BlockStructure::new(vec![vec![0, 3, 5, 6], vec![1, 2, 4, 7]]).unwrap();
        let sigma = bs.covariance().dense().unwrap();
        let (mut total, mut count) = (0.0, 0);
        for mask in 0u32..256 {
            let w: Vec<f64> = (0..8).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            if bs.blocks().iter().any(|b| b.iter().map(|&i| w[i]).sum::<f64>() != 0.0) {
                continue;
            }
            let mu: Vec<f64> = (0..8)
                .map(|i| if w[i] > 0.0 { po.p_t()[i] } else { po.p_c()[i] })
                .collect();
            let mut e = mu.iter().sum::<f64>();
            for i in 0..8 {
                for j in 0..8 {
                    if i != j {
                        e += sigma[i][j] * mu[i] * mu[j];
                    }
                }
            }
            total += e;
            count += 1;
        }
        assert_eq!(count, 36);
        let exact = total / count as f64 / 8.0;
        let s = eta_n(&po, &bs).unwrap();
        assert!((s.quadratic_form_mean() - exact).abs() < 1e-12);
    }

    #[test]
    fn exports() {
        let po = random_population(3, 8);
        let s = eta_n(&po, &quantile_blocks(&[0., 1., 2., 3., 4., 5., 6., 7.], 2).unwrap()).unwrap();
        let json: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(json["eta_n"].as_f64().unwrap(), s.eta_n);
        assert_eq!(json["block_variances"].as_array().unwrap().len(), 2);
        let mut buf = Vec::new();
        write_theory_csv(&mut buf, &[s.record(1, 0.7)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("twoN,B,p,betaT,nB,vQuad,bernoulliTerm,etaN,secondOrder,"));
        assert!(text.lines().nth(1).unwrap().starts_with("8,2,1,0.7,4,"));
        let moved = s.clone().with_alpha(0.01).unwrap();
        assert!(moved.asymptotic_power < s.asymptotic_power);
        assert!(s.with_alpha(1.5).is_err());
    }

    #[test]
    fn zero_eta_is_an_error() {
        let po = PotentialOutcomes::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let s = eta_n(&po, &BlockStructure::bcrd(2).unwrap()).unwrap();
        assert_eq!(s.eta_n, 0.0);
        assert!(s.asymptotic_power.is_none());
        assert!(matches!(asymptotic_power(&s, 0.05), Err(Error::ZeroVariance)));
    }

    #[test]
    fn block_eta_aggregates_to_eta_n() {
        for seed in 0..10 {
            let po = random_population(100 + seed, 24);
            let x: Vec<f64> = (0..24).map(|i| ((i * 5) % 24) as f64).collect();
            for b in [1, 2, 3, 4, 6, 12] {
                let bs = quantile_blocks(&x, b).unwrap();
                let mean = (0..b).map(|k| block_eta(&po, &bs, k).unwrap()).sum::<f64>() / b as f64;
                assert!((mean - eta_n(&po, &bs).unwrap().eta_n).abs() < 1e-12);
            }
        }
        let po = random_population(1, 4);
        assert!(block_eta(&po, &BlockStructure::bcrd(4).unwrap(), 1).is_err());
    }

    #[test]
    fn degenerate_block_has_zero_eta() {
        let po = PotentialOutcomes::new(vec![1.0, 0.0, 0.3, 0.6], vec![0.0, 1.0, 0.2, 0.6])
            .unwrap();
        let bs = BlockStructure::new(vec![vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(block_eta(&po, &bs, 0).unwrap(), 0.0);
        assert!(block_eta(&po, &bs, 1).unwrap() > 0.0);
    }

    #[test]
    fn sorted_refinement_never_increases_v_quad() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Vec<f64> = (0..96).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let cov = CovariateMatrix::from_column(&x).unwrap();
        let po = logistic_outcomes(&cov, 0.0, &[1.0], 0.7).unwrap();
        let admissible = [1usize, 2, 3, 4, 6, 8, 12, 16, 24, 48];
        for &coarse in &admissible {
            for &fine in &admissible {
                if fine % coarse == 0 {
                    let a = eta_n(&po, &quantile_blocks(&x, coarse).unwrap()).unwrap();
                    let b = eta_n(&po, &quantile_blocks(&x, fine).unwrap()).unwrap();
                    assert!(b.v_quad <= a.v_quad + 1e-15, "{coarse} -> {fine}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn second_order_double_sum(seed: u64, blocks in 1usize..=6, half in 1usize..=4) {
            let m = blocks * half * 2;
            let po = random_population(seed, m);
            let x: Vec<f64> = (0..m).map(|i| ((i * 13 + seed as usize) % m) as f64).collect();
            let bs = quantile_blocks(&x, blocks).unwrap();
            let tau = effect_summary(&po).tau;
            let nb = bs.block_size() as f64;
            let mut cross = 0.0;
            for members in bs.blocks() {
                for &i in members {
                    for &j in members {
                        if i != j {
                            cross += tau[i] * tau[j];
                        }
                    }
                }
            }
            let by_sum = cross / (nb - 1.0).powi(2);
            let by_matrix = second_order_penalty(&po, &bs).unwrap();
            prop_assert!((by_sum - by_matrix).abs() < 1e-12);

            let norm: f64 = tau.iter().map(|t| t * t).sum();
            let quad = dense_quadratic(&bs, &tau);
            prop_assert!(quad <= 2.0 * norm + 1e-12);

            let s = eta_n(&po, &bs).unwrap();
            prop_assert!(s.v_quad >= 0.0 && s.bernoulli_term >= 0.0);
            prop_assert_eq!(s.eta_n, s.v_quad + s.bernoulli_term);
        }

        #[test]
        fn same_sign_effects_give_nonnegative_penalty(seed: u64, blocks in 1usize..=6, half in 1usize..=4) {
            let m = blocks * half * 2;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p_c: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 0.5).collect();
            let p_t: Vec<f64> = p_c.iter().map(|c| c + rng.random::<f64>() * 0.5).collect();
            let po = PotentialOutcomes::new(p_t, p_c).unwrap();
            let bs = quantile_blocks(&(0..m).map(|i| i as f64).collect::<Vec<_>>(), blocks).unwrap();
            prop_assert!(second_order_penalty(&po, &bs).unwrap() >= -1e-15);
        }
    }
}
