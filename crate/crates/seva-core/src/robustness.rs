//! Operating-condition sweeps and the SVD-based invariance analysis.
//!
//! One sensitivity row per operating condition is stacked into two matrices:
//! the vectorized variable sensitivities (column-major over dx/dz) and the
//! objective sensitivities. After column mean-centering, the spread of the
//! singular values tells whether the sensitivity pattern depends on the
//! operating condition or is fixed by topology, parameters, and measurement
//! placement.

use nalgebra::{DMatrix, RowDVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, SolverOptions};
use crate::measurement::{self, MeasurementConfig};
use crate::network::Network;
use crate::scoring::{self, ScoreParams, ScoreTable};

/// How per-condition noise realizations are seeded.
///
/// `Shared` reuses one realization for every condition, so row-to-row
/// variation reflects only the operating point; this is the default because
/// independent draws bury the condition dependence of the objective
/// sensitivities under measurement noise. `PerCondition` derives a distinct
/// seed per condition (base + index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedPolicy {
    Shared,
    PerCondition,
}

impl SeedPolicy {
    pub fn seed_for(&self, base: u64, condition: usize) -> u64 {
        match self {
            SeedPolicy::Shared => base,
            SeedPolicy::PerCondition => base.wrapping_add(condition as u64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub factors: Vec<f64>,
    pub noise_sigma_scale: f64,
    pub base_seed: u64,
    pub seed_policy: SeedPolicy,
    pub solver: SolverOptions,
    pub score_params: ScoreParams,
    /// Score with the second-order stealth surrogate when residuals are
    /// consistent (see `scoring::run_algorithm_1`).
    pub surrogate_on_degenerate: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            factors: default_factors(),
            noise_sigma_scale: 1.0,
            base_seed: 1,
            seed_policy: SeedPolicy::Shared,
            solver: SolverOptions::default(),
            score_params: ScoreParams::default(),
            surrogate_on_degenerate: false,
        }
    }
}

/// 24 demand scale factors uniformly spanning [0.55, 1.15].
pub fn default_factors() -> Vec<f64> {
    (0..24).map(|k| 0.55 + 0.6 * k as f64 / 23.0).collect()
}

/// Stacked sensitivity rows across operating conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityEnsemble {
    pub scale_factors: Vec<f64>,
    /// t x (n*p); row k is dx/dz at condition k, vectorized column-major.
    pub x_matrix: DMatrix<f64>,
    /// t x p; row k is dJ/dz at condition k.
    pub j_matrix: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
    pub var_labels: Vec<String>,
    pub meas_labels: Vec<String>,
}

impl SensitivityEnsemble {
    pub fn t(&self) -> usize {
        self.scale_factors.len()
    }

    /// Meaning of a flat x_matrix column: (variable label, measurement label).
    pub fn column_meaning(&self, col: usize) -> (&str, &str) {
        (
            &self.var_labels[col % self.n],
            &self.meas_labels[col / self.n],
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionRun {
    pub index: usize,
    pub factor: f64,
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub scores: ScoreTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionFailure {
    pub index: usize,
    pub factor: f64,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepOutput {
    pub ensemble: SensitivityEnsemble,
    pub runs: Vec<ConditionRun>,
    pub failures: Vec<ConditionFailure>,
}

/// Runs the full per-condition pipeline (scale, synthesize, estimate,
/// sensitivities, scores) for every factor and stacks the sensitivity rows in
/// factor order. Per-condition failures are recorded; the sweep fails only
/// when fewer than min(2, requested) conditions survive.
pub fn sweep_operating_conditions(
    net: &Network,
    cfg: &MeasurementConfig,
    settings: &SweepSettings,
) -> Result<SweepOutput> {
    if settings.factors.is_empty() {
        return Err(Error::Domain(
            "sweep needs at least one scale factor".into(),
        ));
    }

    struct ConditionOk {
        run: ConditionRun,
        x_row: Vec<f64>,
        j_row: Vec<f64>,
        n: usize,
        p: usize,
        var_labels: Vec<String>,
        meas_labels: Vec<String>,
    }

    let outcomes: Vec<std::result::Result<ConditionOk, ConditionFailure>> = settings
        .factors
        .par_iter()
        .enumerate()
        .map(|(k, &factor)| {
            let seed = settings.seed_policy.seed_for(settings.base_seed, k);
            let attempt = (|| -> Result<ConditionOk> {
                let scaled = net.scale_demands(factor)?;
                let ms = measurement::synthesize_measurements(
                    &scaled,
                    cfg,
                    settings.noise_sigma_scale,
                    seed,
                )?;
                let est = estimator::estimate_state(&scaled, &ms, &settings.solver)?;
                let (sens, scores) = scoring::run_algorithm_1(
                    &scaled,
                    &ms,
                    &est,
                    &settings.score_params,
                    &settings.solver,
                    settings.surrogate_on_degenerate,
                )?;
                Ok(ConditionOk {
                    run: ConditionRun {
                        index: k,
                        factor,
                        seed,
                        objective: est.objective,
                        iterations: est.iterations,
                        scores,
                    },
                    n: sens.dx_dz.nrows(),
                    p: sens.dx_dz.ncols(),
                    x_row: sens.dx_dz.as_slice().to_vec(),
                    j_row: sens.dj_dz.as_slice().to_vec(),
                    var_labels: est.x.layout.labels(&scaled),
                    meas_labels: ms.labels(),
                })
            })();
            attempt.map_err(|e| ConditionFailure {
                index: k,
                factor,
                message: e.to_string(),
            })
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut rows: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut var_labels = Vec::new();
    let mut meas_labels = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(ok) => {
                match dims {
                    None => {
                        dims = Some((ok.n, ok.p));
                        var_labels = ok.var_labels;
                        meas_labels = ok.meas_labels;
                    }
                    Some(d) => {
                        if d != (ok.n, ok.p) {
                            return Err(Error::Shape {
                                expected: format!(
                                    "sensitivity dimensions {d:?} for every condition"
                                ),
                                actual: format!("({}, {})", ok.n, ok.p),
                            });
                        }
                    }
                }
                rows.push((ok.x_row, ok.j_row, ok.run.factor));
                runs.push(ok.run);
            }
            Err(f) => failures.push(f),
        }
    }

    let needed = settings.factors.len().min(2);
    if rows.len() < needed {
        let detail = failures
            .iter()
            .map(|f| format!("factor {:.4}: {}", f.factor, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Numeric(format!(
            "sweep produced {} usable conditions of {} requested ({detail})",
            rows.len(),
            settings.factors.len()
        )));
    }

    let (n, p) = dims.expect("at least one successful condition");
    let t = rows.len();
    let mut x_matrix = DMatrix::zeros(t, n * p);
    let mut j_matrix = DMatrix::zeros(t, p);
    let mut scale_factors = Vec::with_capacity(t);
    for (row, (x_row, j_row, factor)) in rows.into_iter().enumerate() {
        for (c, v) in x_row.into_iter().enumerate() {
            x_matrix[(row, c)] = v;
        }
        for (c, v) in j_row.into_iter().enumerate() {
            j_matrix[(row, c)] = v;
        }
        scale_factors.push(factor);
    }

    Ok(SweepOutput {
        ensemble: SensitivityEnsemble {
            scale_factors,
            x_matrix,
            j_matrix,
            n,
            p,
            var_labels,
            meas_labels,
        },
        runs,
        failures,
    })
}

/// Subtracts each column's mean; returns the centered matrix and the means.
pub fn center_columns(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, RowDVector<f64>)> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Shape {
            expected: "a non-empty matrix".into(),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    let means = m.row_mean();
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    Ok((centered, means))
}

/// Singular values of one centered sensitivity matrix, descending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdFragment {
    pub singular_values: Vec<f64>,
}

impl SvdFragment {
    /// Cumulative energy profile: prefix sums of the singular values (or
    /// their squares) over the total. Errors on an all-zero spectrum.
    pub fn cumulative_energy(&self, squared: bool) -> Result<Vec<f64>> {
        let vals: Vec<f64> = self
            .singular_values
            .iter()
            .map(|&s| if squared { s * s } else { s })
            .collect();
        let total: f64 = vals.iter().sum();
        if total <= 0.0 {
            return Err(Error::Numeric(
                "all singular values are zero; cumulative energy is undefined".into(),
            ));
        }
        let mut acc = 0.0;
        Ok(vals
            .iter()
            .map(|v| {
                acc += v;
                acc / total
            })
            .collect())
    }

    /// Cumulative energy captured by the leading `rank` singular values.
    pub fn ce_at(&self, rank: usize, squared: bool) -> Result<f64> {
        if rank == 0 {
            return Err(Error::Domain("rank must be at least 1".into()));
        }
        let ce = self.cumulative_energy(squared)?;
        Ok(ce[(rank - 1).min(ce.len() - 1)])
    }
}

/// Singular values of a centered matrix, descending. Only the values are
/// computed; the decomposition runs on the transpose when that is cheaper.
pub fn svd_analysis(centered: &DMatrix<f64>) -> Result<SvdFragment> {
    if centered.nrows() == 0 || centered.ncols() == 0 {
        return Err(Error::Shape {
            expected: "a non-empty matrix".into(),
            actual: format!("{}x{}", centered.nrows(), centered.ncols()),
        });
    }
    if centered.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "centered matrix has non-finite entries".into(),
        ));
    }
    let work = if centered.ncols() > centered.nrows() {
        centered.transpose()
    } else {
        centered.clone()
    };
    let svd = nalgebra::SVD::try_new(work, false, false, f64::EPSILON * 8.0, 0)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    Ok(SvdFragment { singular_values })
}

/// Mean-centering plus SVD for both stacked sensitivity matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdReport {
    pub x: SvdFragment,
    pub j: SvdFragment,
    pub x_means: RowDVector<f64>,
    pub j_means: RowDVector<f64>,
    pub t: usize,
}

pub fn analyze_ensemble(ensemble: &SensitivityEnsemble) -> Result<SvdReport> {
    let (x_centered, x_means) = center_columns(&ensemble.x_matrix)?;
    let (j_centered, j_means) = center_columns(&ensemble.j_matrix)?;
    Ok(SvdReport {
        x: svd_analysis(&x_centered)?,
        j: svd_analysis(&j_centered)?,
        x_means,
        j_means,
        t: ensemble.t(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceVerdict {
    /// Leading singular values considered.
    pub rank: usize,
    pub energy_threshold: f64,
    /// Cumulative energy was computed on squared singular values.
    pub squared: bool,
    pub ce_x: f64,
    pub ce_j: f64,
    pub invariant: bool,
    pub note: String,
}

/// Declares the sensitivities operating-condition invariant when the leading
/// `rank` singular values of both centered matrices capture at least
/// `energy_threshold` of the cumulative energy.
pub fn invariance_verdict(
    report: &SvdReport,
    rank: usize,
    energy_threshold: f64,
    squared: bool,
) -> Result<InvarianceVerdict> {
    if rank == 0 {
        return Err(Error::Domain("rank must be at least 1".into()));
    }
    let ce_x = report.x.ce_at(rank, squared)?;
    let ce_j = report.j.ce_at(rank, squared)?;
    let invariant = ce_x >= energy_threshold && ce_j >= energy_threshold;
    let note = if invariant {
        format!(
            "leading {rank} singular value(s) capture {:.1}% (variables) and {:.1}% (objective) of the energy; \
             sensitivities are dominated by topology, parameters, and measurement placement",
            100.0 * ce_x,
            100.0 * ce_j
        )
    } else {
        format!(
            "leading {rank} singular value(s) capture only {:.1}% (variables) and {:.1}% (objective) of the energy; \
             sensitivities vary with the operating condition at this threshold",
            100.0 * ce_x,
            100.0 * ce_j
        )
    };
    Ok(InvarianceVerdict {
        rank,
        energy_threshold,
        squared,
        ce_x,
        ce_j,
        invariant,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};

    #[test]
    fn default_factor_grid() {
        let f = default_factors();
        assert_eq!(f.len(), 24);
        assert_abs_diff_eq!(f[0], 0.55, epsilon = 1e-12);
        assert_abs_diff_eq!(f[23], 1.15, epsilon = 1e-12);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn centering_examples() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let (c, means) = center_columns(&m).unwrap();
        assert_abs_diff_eq!(means[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(0, 0)], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(1, 0)], 1.0, epsilon = 1e-15);

        let same = DMatrix::from_row_slice(3, 2, &[4.0, -1.0, 4.0, -1.0, 4.0, -1.0]);
        let (c, _) = center_columns(&same).unwrap();
        assert_abs_diff_eq!(c.abs().max(), 0.0, epsilon = 1e-15);

        assert!(center_columns(&DMatrix::<f64>::zeros(0, 3)).is_err());
    }

    #[test]
    fn centered_columns_have_zero_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = DMatrix::from_fn(10, 6, |_, _| rng.gen_range(-2.0..2.0));
        let (c, _) = center_columns(&m).unwrap();
        for col in 0..6 {
            assert_abs_diff_eq!(c.column(col).sum() / 10.0, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn svd_of_diagonal_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0]);
        let frag = svd_analysis(&m).unwrap();
        assert_abs_diff_eq!(frag.singular_values[0], 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(frag.singular_values[1], 3.0, epsilon = 1e-10);
        let ce = frag.cumulative_energy(false).unwrap();
        assert_abs_diff_eq!(ce[0], 4.0 / 7.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ce[1], 1.0, epsilon = 1e-12);
        let ce_sq = frag.cumulative_energy(true).unwrap();
        assert_abs_diff_eq!(ce_sq[0], 16.0 / 25.0, epsilon = 1e-10);
    }

    #[test]
    fn rank_one_matrix_captures_everything_first() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, 1.0, -1.0, 2.0]);
        let m = &u * v.transpose();
        let frag = svd_analysis(&m).unwrap();
        assert_abs_diff_eq!(frag.ce_at(1, false).unwrap(), 1.0, epsilon = 1e-10);
        for s in &frag.singular_values[1..] {
            assert!(s.abs() <= 1e-10);
        }
    }

    #[test]
    fn cumulative_energy_monotone_and_complete() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let m = DMatrix::from_fn(9, 7, |_, _| rng.gen_range(-3.0..3.0));
        let frag = svd_analysis(&m).unwrap();
        for squared in [false, true] {
            let ce = frag.cumulative_energy(squared).unwrap();
            assert!(ce.windows(2).all(|w| w[1] >= w[0] - 1e-15));
            assert_eq!(*ce.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn zero_matrix_energy_is_an_error() {
        let frag = svd_analysis(&DMatrix::zeros(3, 3)).unwrap();
        assert!(frag.cumulative_energy(false).is_err());
    }

    #[test]
    fn singular_values_match_gram_eigenvalues() {
        // Independent route: sqrt of the eigenvalues of X X^T.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(8, 20, |_, _| rng.gen_range(-1.0..1.0));
        let frag = svd_analysis(&m).unwrap();
        let gram = &m * m.transpose();
        let mut eigs: Vec<f64> = gram
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|&e| e.max(0.0).sqrt())
            .collect();
        eigs.sort_by(|a, b| b.total_cmp(a));
        let sum_svd: f64 = frag.singular_values.iter().sum();
        let sum_eig: f64 = eigs.iter().sum();
        assert!((sum_svd - sum_eig).abs() / sum_eig <= 1e-8);
        for (s, e) in frag.singular_values.iter().zip(&eigs) {
            assert_abs_diff_eq!(s, e, epsilon = 1e-8);
        }
    }

    #[test]
    fn row_permutation_leaves_singular_values_unchanged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(6, 9, |_, _| rng.gen_range(-1.0..1.0));
        let mut permuted = DMatrix::zeros(6, 9);
        let order = [5usize, 2, 0, 4, 1, 3];
        for (dst, &src) in order.iter().enumerate() {
            permuted.set_row(dst, &m.row(src));
        }
        let a = svd_analysis(&m).unwrap();
        let b = svd_analysis(&permuted).unwrap();
        for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn reconstruction_error_decreases_with_rank() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let m = DMatrix::from_fn(7, 5, |_, _| rng.gen_range(-1.0..1.0));
        let svd = nalgebra::SVD::new(m.clone(), true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=5 {
            let mut approx_m = DMatrix::zeros(7, 5);
            for i in 0..k {
                approx_m += svd.singular_values[i] * u.column(i) * vt.row(i);
            }
            let err = (&m - &approx_m).norm();
            assert!(err <= last + 1e-12);
            last = err;
        }
        assert!(last <= 1e-8, "full-rank reconstruction error {last}");
    }

    #[test]
    fn gaussian_control_is_not_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        let m = DMatrix::from_fn(24, 10, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let (c, _) = center_columns(&m).unwrap();
        let frag = svd_analysis(&c).unwrap();
        assert!(frag.ce_at(1, false).unwrap() < 0.95);
    }

    #[test]
    fn verdict_rank_semantics() {
        let report = SvdReport {
            x: SvdFragment {
                singular_values: vec![9.0, 1.0],
            },
            j: SvdFragment {
                singular_values: vec![8.0, 2.0],
            },
            x_means: RowDVector::zeros(2),
            j_means: RowDVector::zeros(2),
            t: 2,
        };
        let v = invariance_verdict(&report, 1, 0.8, false).unwrap();
        assert!(v.invariant);
        assert_abs_diff_eq!(v.ce_x, 0.9, epsilon = 1e-12);
        let strict = invariance_verdict(&report, 1, 0.95, false).unwrap();
        assert!(!strict.invariant);
        // Full rank always captures everything.
        let full = invariance_verdict(&report, 2, 1.0, false).unwrap();
        assert!(full.invariant);
        assert!(invariance_verdict(&report, 0, 0.5, false).is_err());
    }

    #[test]
    fn seed_policy_semantics() {
        assert_eq!(SeedPolicy::Shared.seed_for(7, 0), 7);
        assert_eq!(SeedPolicy::Shared.seed_for(7, 5), 7);
        assert_eq!(SeedPolicy::PerCondition.seed_for(7, 0), 7);
        assert_eq!(SeedPolicy::PerCondition.seed_for(7, 5), 12);
    }
}
