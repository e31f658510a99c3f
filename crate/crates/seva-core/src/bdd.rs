//! Chi-square bad data detection on the WLS objective value.
//!
//! Degrees of freedom follow the pseudo-measurement convention: zero-injection
//! constraints count toward redundancy, so dof = p + zero constraints - states.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BddOutcome {
    pub threshold: f64,
    pub detected: bool,
    pub dof: usize,
}

/// Compares the objective value against the chi-square quantile at the given
/// significance level.
pub fn bdd_chi_square(
    j_star: f64,
    p: usize,
    n_states: usize,
    n_zero_constraints: usize,
    significance: f64,
) -> Result<BddOutcome> {
    if !(0.0 < significance && significance < 1.0) {
        return Err(Error::Domain(format!(
            "significance must lie in (0, 1), got {significance}"
        )));
    }
    let dof = p as i64 + n_zero_constraints as i64 - n_states as i64;
    if dof < 1 {
        return Err(Error::InsufficientRedundancy { dof });
    }
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::Numeric(format!("chi-square distribution: {e}")))?;
    let threshold = dist.inverse_cdf(1.0 - significance);
    Ok(BddOutcome {
        threshold,
        detected: j_star > threshold,
        dof: dof as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matches_reference_quantile() {
        // chi-square(5) 0.95 quantile from standard tables.
        let out = bdd_chi_square(0.0, 10, 7, 2, 0.05).unwrap();
        assert_eq!(out.dof, 5);
        assert_abs_diff_eq!(out.threshold, 11.0705, epsilon = 1e-4);
    }

    #[test]
    fn zero_objective_never_detected() {
        for dof_extra in [1usize, 3, 10] {
            let out = bdd_chi_square(0.0, 7 + dof_extra, 7, 0, 0.05).unwrap();
            assert!(!out.detected);
        }
    }

    #[test]
    fn large_objective_detected() {
        let out = bdd_chi_square(120.0, 10, 7, 2, 0.05).unwrap();
        assert!(out.detected);
    }

    #[test]
    fn insufficient_redundancy_rejected() {
        match bdd_chi_square(0.0, 7, 7, 0, 0.05) {
            Err(Error::InsufficientRedundancy { dof }) => assert_eq!(dof, 0),
            other => panic!("expected redundancy error, got {other:?}"),
        }
    }

    #[test]
    fn significance_domain_checked() {
        assert!(bdd_chi_square(0.0, 10, 7, 0, 0.0).is_err());
        assert!(bdd_chi_square(0.0, 10, 7, 0, 1.0).is_err());
    }
}
