//! Blocked randomized designs for binary outcomes: block construction and
//! optimal pairing, the Cochran-Mantel-Haenszel test, its asymptotic power,
//! and a deterministic Monte Carlo harness for size and power.

pub mod cmh;
pub mod design;
pub mod error;
pub mod matching;
pub mod outcome;
pub mod par;
pub mod sim;
pub mod theory;

pub use cmh::{chi2_critical, mh_quadratic_form, mh_table_form, reject, tabulate, MhResult};
pub use design::{
    hierarchical_blocks, quantile_blocks, sample_assignment, Assignment, BlockStructure,
};
pub use error::{Error, Result};
pub use matching::{mahalanobis_distances, min_weight_perfect_matching, DistanceMatrix, Matching};
pub use outcome::{logistic_outcomes, CovariateMatrix, PotentialOutcomes};
pub use theory::{asymptotic_power, eta_n, TheorySummary};
