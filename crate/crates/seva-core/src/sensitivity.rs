//! First-order sensitivities of the estimation result with respect to
//! measurements and weights, obtained from the bordered KKT system at the
//! solution.
//!
//! The perturbation system is solved by superposition: the bordered matrix is
//! factorized once and reused for every right-hand-side column (one per
//! measurement, one per weight). The objective sensitivities follow from the
//! explicit first-order formulas on top of the variable sensitivities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, EstimationResult, Problem, SolverOptions};
use crate::measurement::MeasurementSet;
use crate::network::Network;

/// A point is treated as a valid KKT point when its residual is below this.
pub const STALE_POINT_LIMIT: f64 = 1e-8;

/// Derivative blocks of the perturbed KKT system at the solution.
#[derive(Debug, Clone)]
pub struct KktBlocks {
    /// Objective gradient w.r.t. the decision variables (length n).
    pub grad_x: DVector<f64>,
    /// Objective gradient w.r.t. the measurements (length p).
    pub grad_z: DVector<f64>,
    /// Objective gradient w.r.t. the weights (length p).
    pub grad_w: DVector<f64>,
    /// Lagrangian Hessian including constraint curvature (n x n).
    pub hess_xx: DMatrix<f64>,
    /// Mixed objective Hessian w.r.t. variables and measurements (n x p).
    pub hess_xz: DMatrix<f64>,
    /// Mixed objective Hessian w.r.t. variables and weights (n x p).
    pub hess_xw: DMatrix<f64>,
    /// Constraint Jacobian (r x n).
    pub con_jac: DMatrix<f64>,
    /// Bordered KKT matrix [[hess_xx, con_jac^T], [con_jac, 0]].
    pub kkt: DMatrix<f64>,
    /// Measurement right-hand sides [hess_xz; 0] ((n+r) x p).
    pub rhs_z: DMatrix<f64>,
    /// Weight right-hand sides [hess_xw; 0]; the constraint block is zero
    /// because the constraints do not involve the weights.
    pub rhs_w: DMatrix<f64>,
    pub n: usize,
    pub r: usize,
    pub p: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityResult {
    /// d(variables)/d(measurements), n x p.
    pub dx_dz: DMatrix<f64>,
    /// d(multipliers)/d(measurements), r x p.
    pub dlambda_dz: DMatrix<f64>,
    /// d(objective)/d(measurements), length p.
    pub dj_dz: DVector<f64>,
    /// Reciprocal condition estimate of the bordered matrix (from the LU
    /// diagonal spread; order of magnitude only).
    pub rcond_estimate: f64,
}

#[derive(Debug, Clone)]
pub struct WeightSensitivities {
    pub dx_dw: DMatrix<f64>,
    pub dlambda_dw: DMatrix<f64>,
    pub dj_dw: DVector<f64>,
}

/// Assembles every derivative block at the estimation result.
pub fn assemble_kkt_blocks(
    net: &Network,
    ms: &MeasurementSet,
    est: &EstimationResult,
) -> Result<KktBlocks> {
    let prob = Problem::new(net, ms)?;
    let n = prob.n();
    let r = prob.r();
    let p = prob.p();
    if est.x.values.len() != n || est.multipliers.len() != r {
        return Err(Error::Shape {
            expected: format!("estimation result with dimensions ({n}, {r})"),
            actual: format!("({}, {})", est.x.values.len(), est.multipliers.len()),
        });
    }
    let x = &est.x.values;
    let lambda = &est.multipliers;

    // Guard against stale or mismatched points by re-evaluating the residual.
    let (stat, feas) = estimator::kkt_residual(net, ms, x, lambda)?;
    let residual = stat.max(feas);
    if residual > STALE_POINT_LIMIT {
        return Err(Error::StalePoint {
            residual,
            limit: STALE_POINT_LIMIT,
        });
    }
    if let Some(err) = estimator::constraint_rank_error(&prob, x) {
        return Err(err);
    }

    let grad_x = prob.objective_gradient(x);
    let mut grad_z = DVector::zeros(p);
    let mut grad_w = DVector::zeros(p);
    let mut hess_xz = DMatrix::zeros(n, p);
    let mut hess_xw = DMatrix::zeros(n, p);
    for l in 0..p {
        let m = prob.matched_var[l];
        let residual_l = prob.z[l] - x[m];
        grad_z[l] = 2.0 * prob.w[l] * residual_l;
        grad_w[l] = residual_l * residual_l;
        hess_xz[(m, l)] = -2.0 * prob.w[l];
        hess_xw[(m, l)] = -2.0 * residual_l;
    }

    let hess_xx = prob.lagrangian_hessian(x, lambda, true);
    let con_jac = prob.constraint_jacobian(x);

    let mut kkt = DMatrix::zeros(n + r, n + r);
    kkt.view_mut((0, 0), (n, n)).copy_from(&hess_xx);
    kkt.view_mut((n, 0), (r, n)).copy_from(&con_jac);
    kkt.view_mut((0, n), (n, r)).copy_from(&con_jac.transpose());

    let mut rhs_z = DMatrix::zeros(n + r, p);
    rhs_z.view_mut((0, 0), (n, p)).copy_from(&hess_xz);
    let mut rhs_w = DMatrix::zeros(n + r, p);
    rhs_w.view_mut((0, 0), (n, p)).copy_from(&hess_xw);

    Ok(KktBlocks {
        grad_x,
        grad_z,
        grad_w,
        hess_xx,
        hess_xz,
        hess_xw,
        con_jac,
        kkt,
        rhs_z,
        rhs_w,
        n,
        r,
        p,
    })
}

/// Factorizes the bordered matrix once and solves for all right-hand sides,
/// with one step of iterative refinement.
fn bordered_solve(blocks: &KktBlocks, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let lu = blocks.kkt.clone().lu();
    let rcond = {
        let u = lu.u();
        let mut min = f64::INFINITY;
        let mut max: f64 = 0.0;
        for i in 0..u.nrows() {
            let d = u[(i, i)].abs();
            min = min.min(d);
            max = max.max(d);
        }
        if max == 0.0 {
            0.0
        } else {
            min / max
        }
    };
    let neg = -rhs;
    let mut m = lu.solve(&neg).ok_or(Error::SingularKkt { rcond })?;
    if rcond < 1e-14 {
        return Err(Error::SingularKkt { rcond });
    }
    // One refinement pass keeps the residual near machine precision even
    // with weight-scaled entries.
    let correction_rhs = &neg - &blocks.kkt * &m;
    if let Some(dm) = lu.solve(&correction_rhs) {
        m += dm;
    }
    Ok((m, rcond))
}

/// Sensitivities with respect to the measurement vector.
pub fn measurement_sensitivities(blocks: &KktBlocks) -> Result<SensitivityResult> {
    let (m, rcond) = bordered_solve(blocks, &blocks.rhs_z)?;
    let dx_dz = m.rows(0, blocks.n).into_owned();
    let dlambda_dz = m.rows(blocks.n, blocks.r).into_owned();
    let mut dj_dz = blocks.grad_z.clone();
    for l in 0..blocks.p {
        dj_dz[l] += blocks.grad_x.dot(&dx_dz.column(l));
    }
    Ok(SensitivityResult {
        dx_dz,
        dlambda_dz,
        dj_dz,
        rcond_estimate: rcond,
    })
}

/// Sensitivities with respect to the measurement weights.
pub fn weight_sensitivities(blocks: &KktBlocks) -> Result<WeightSensitivities> {
    let (m, _) = bordered_solve(blocks, &blocks.rhs_w)?;
    let dx_dw = m.rows(0, blocks.n).into_owned();
    let dlambda_dw = m.rows(blocks.n, blocks.r).into_owned();
    let mut dj_dw = blocks.grad_w.clone();
    for l in 0..blocks.p {
        dj_dw[l] += blocks.grad_x.dot(&dx_dw.column(l));
    }
    Ok(WeightSensitivities {
        dx_dw,
        dlambda_dw,
        dj_dw,
    })
}

/// Per-measurement comparison of the analytic sensitivities against central
/// finite differences of the re-solved estimator.
#[derive(Debug, Clone, Serialize)]
pub struct FdEntry {
    pub index: usize,
    pub label: String,
    /// Worst relative error over variable-sensitivity entries with
    /// |FD| >= small_floor.
    pub dx_rel_err: f64,
    /// Worst absolute error over entries with |FD| < small_floor.
    pub dx_small_abs_err: f64,
    pub dj_rel_err: f64,
    pub dj_small_abs_err: f64,
    pub solve_failed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub step: f64,
    /// Entries with |FD| below this floor are compared absolutely.
    pub small_floor: f64,
    pub entries: Vec<FdEntry>,
    pub max_dx_rel_err: f64,
    pub mean_dx_rel_err: f64,
    pub max_dx_small_abs_err: f64,
    pub max_dj_rel_err: f64,
    pub max_dj_small_abs_err: f64,
    /// Measurement with the worst dx relative error.
    pub worst_measurement: Option<usize>,
    /// Step small enough that the differences are roundoff-dominated.
    pub roundoff_warning: bool,
    pub failed_solves: usize,
}

const FD_SMALL_FLOOR: f64 = 1e-8;

/// Validation oracle: perturbs each sampled measurement by +/- step,
/// re-solves the estimator, and compares the finite-difference sensitivities
/// against the analytic ones.
pub fn finite_difference_check(
    net: &Network,
    ms: &MeasurementSet,
    est: &EstimationResult,
    opts: &SolverOptions,
    step: f64,
    sample: Option<&[usize]>,
) -> Result<FdReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    let blocks = assemble_kkt_blocks(net, ms, est)?;
    let sens = measurement_sensitivities(&blocks)?;

    let all: Vec<usize>;
    let indices: &[usize] = match sample {
        Some(s) => s,
        None => {
            all = (0..ms.p()).collect();
            &all
        }
    };
    for &l in indices {
        if l >= ms.p() {
            return Err(Error::Shape {
                expected: format!("measurement index < {}", ms.p()),
                actual: format!("{l}"),
            });
        }
    }

    let mut resolve_opts = opts.clone();
    resolve_opts.warm_start = Some(estimator::WarmStart {
        x: est.x.values.clone(),
        lambda: est.multipliers.clone(),
    });

    let mut entries = Vec::with_capacity(indices.len());
    let mut failed_solves = 0;
    for &l in indices {
        let z0 = ms.values()[l];
        let plus = estimator::estimate_state(net, &ms.with_value(l, z0 + step), &resolve_opts);
        let minus = estimator::estimate_state(net, &ms.with_value(l, z0 - step), &resolve_opts);
        let (plus, minus) = match (plus, minus) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                failed_solves += 1;
                entries.push(FdEntry {
                    index: l,
                    label: ms.measurements[l].label(),
                    dx_rel_err: f64::NAN,
                    dx_small_abs_err: f64::NAN,
                    dj_rel_err: f64::NAN,
                    dj_small_abs_err: f64::NAN,
                    solve_failed: true,
                });
                continue;
            }
        };
        let fd_x = (&plus.x.values - &minus.x.values) / (2.0 * step);
        let fd_j = (plus.objective - minus.objective) / (2.0 * step);

        let mut dx_rel: f64 = 0.0;
        let mut dx_small: f64 = 0.0;
        for row in 0..blocks.n {
            let analytic = sens.dx_dz[(row, l)];
            let fd = fd_x[row];
            if fd.abs() >= FD_SMALL_FLOOR {
                dx_rel = dx_rel.max((analytic - fd).abs() / fd.abs());
            } else {
                dx_small = dx_small.max((analytic - fd).abs());
            }
        }
        let (mut dj_rel, mut dj_small) = (0.0f64, 0.0f64);
        if fd_j.abs() >= FD_SMALL_FLOOR {
            dj_rel = (sens.dj_dz[l] - fd_j).abs() / fd_j.abs();
        } else {
            dj_small = (sens.dj_dz[l] - fd_j).abs();
        }
        entries.push(FdEntry {
            index: l,
            label: ms.measurements[l].label(),
            dx_rel_err: dx_rel,
            dx_small_abs_err: dx_small,
            dj_rel_err: dj_rel,
            dj_small_abs_err: dj_small,
            solve_failed: false,
        });
    }

    let ok: Vec<&FdEntry> = entries.iter().filter(|e| !e.solve_failed).collect();
    let max_dx_rel_err = ok.iter().map(|e| e.dx_rel_err).fold(0.0, f64::max);
    let mean_dx_rel_err = if ok.is_empty() {
        0.0
    } else {
        ok.iter().map(|e| e.dx_rel_err).sum::<f64>() / ok.len() as f64
    };
    let worst_measurement = ok
        .iter()
        .max_by(|a, b| a.dx_rel_err.total_cmp(&b.dx_rel_err))
        .map(|e| e.index);
    Ok(FdReport {
        step,
        small_floor: FD_SMALL_FLOOR,
        max_dx_rel_err,
        mean_dx_rel_err,
        max_dx_small_abs_err: ok.iter().map(|e| e.dx_small_abs_err).fold(0.0, f64::max),
        max_dj_rel_err: ok.iter().map(|e| e.dj_rel_err).fold(0.0, f64::max),
        max_dj_small_abs_err: ok.iter().map(|e| e.dj_small_abs_err).fold(0.0, f64::max),
        worst_measurement,
        roundoff_warning: step < 1e-8,
        failed_solves,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{
        synthesize_measurements, MeasurementConfig, MeasurementSet, WeightSpec,
    };
    use crate::network::testing::{bus, line};
    use crate::network::{BusKind, Network};
    use approx::assert_abs_diff_eq;

    fn one_bus_setup() -> (Network, MeasurementSet, EstimationResult) {
        let net = Network::new(vec![bus(1, BusKind::Slack)], vec![], 100.0).unwrap();
        let cfg = MeasurementConfig::new(
            vec![1],
            vec![],
            vec![],
            vec![],
            vec![],
            vec![],
            WeightSpec::default(),
        )
        .unwrap();
        let ms = MeasurementSet::from_values(cfg, &[1.02]).unwrap();
        let est = estimator::estimate_state(&net, &ms, &SolverOptions::default()).unwrap();
        (net, ms, est)
    }

    fn noisy_three_bus() -> (Network, MeasurementSet, EstimationResult) {
        let mut b2 = bus(2, BusKind::Pq);
        b2.is_zero_injection = true;
        let mut b3 = bus(3, BusKind::Pq);
        b3.demand_p = 0.9;
        b3.demand_q = 0.25;
        let net = Network::new(
            vec![bus(1, BusKind::Slack), b2, b3],
            vec![line(1, 2, 0.01, 0.06, 0.02), line(2, 3, 0.015, 0.08, 0.03)],
            100.0,
        )
        .unwrap();
        let cfg = MeasurementConfig::new(
            vec![1, 2],
            vec![1],
            vec![1],
            vec![2],
            vec![(1, 2), (3, 2)],
            vec![(1, 2)],
            WeightSpec::default(),
        )
        .unwrap();
        let ms = synthesize_measurements(&net, &cfg, 1.0, 5).unwrap();
        let est = estimator::estimate_state(&net, &ms, &SolverOptions::default()).unwrap();
        (net, ms, est)
    }

    #[test]
    fn scalar_quadratic_blocks() {
        let (net, ms, est) = one_bus_setup();
        let blocks = assemble_kkt_blocks(&net, &ms, &est).unwrap();
        let w = 1e4;
        assert_eq!(blocks.n, 1);
        assert_eq!(blocks.r, 0);
        assert_abs_diff_eq!(blocks.hess_xx[(0, 0)], 2.0 * w, epsilon = 1e-9);
        assert_abs_diff_eq!(blocks.hess_xz[(0, 0)], -2.0 * w, epsilon = 1e-9);
        assert_abs_diff_eq!(blocks.kkt[(0, 0)], 2.0 * w, epsilon = 1e-9);

        let sens = measurement_sensitivities(&blocks).unwrap();
        assert_abs_diff_eq!(sens.dx_dz[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sens.dj_dz[0], 0.0, epsilon = 1e-10);
        assert_eq!(sens.dlambda_dz.nrows(), 0);
    }

    #[test]
    fn kkt_matrix_exactly_symmetric() {
        let (net, ms, est) = noisy_three_bus();
        let blocks = assemble_kkt_blocks(&net, &ms, &est).unwrap();
        let asym = (&blocks.kkt - blocks.kkt.transpose()).abs().max();
        assert!(asym <= 1e-12, "asymmetry {asym}");
    }

    #[test]
    fn blocks_match_finite_differences() {
        let (net, ms, est) = noisy_three_bus();
        let blocks = assemble_kkt_blocks(&net, &ms, &est).unwrap();
        let prob = Problem::new(&net, &ms).unwrap();
        let x = &est.x.values;
        let lam = &est.multipliers;
        let h = 1e-6;

        // Lagrangian Hessian and constraint Jacobian against FD in x.
        for c in 0..blocks.n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let gp = prob.stationarity(&xp, lam);
            let gm = prob.stationarity(&xm, lam);
            for rrow in 0..blocks.n {
                let fd = (gp[rrow] - gm[rrow]) / (2.0 * h);
                let analytic = blocks.hess_xx[(rrow, c)];
                let denom = fd.abs().max(1.0);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-5,
                    "hess_xx ({rrow},{c}): analytic {analytic}, fd {fd}"
                );
            }
            let cp = prob.constraints(&xp);
            let cm = prob.constraints(&xm);
            for rrow in 0..blocks.r {
                let fd = (cp[rrow] - cm[rrow]) / (2.0 * h);
                let analytic = blocks.con_jac[(rrow, c)];
                let denom = fd.abs().max(1.0);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-5,
                    "con_jac ({rrow},{c}): analytic {analytic}, fd {fd}"
                );
            }
        }

        // hess_xz and grad_z against FD in z.
        for l in 0..blocks.p {
            let z0 = ms.values()[l];
            let msp = ms.with_value(l, z0 + h);
            let msm = ms.with_value(l, z0 - h);
            let pp = Problem::new(&net, &msp).unwrap();
            let pm = Problem::new(&net, &msm).unwrap();
            let gp = pp.stationarity(x, lam);
            let gm = pm.stationarity(x, lam);
            for rrow in 0..blocks.n {
                let fd = (gp[rrow] - gm[rrow]) / (2.0 * h);
                assert_abs_diff_eq!(blocks.hess_xz[(rrow, l)], fd, epsilon = 2e-4);
            }
            let fd_j = (pp.objective(x) - pm.objective(x)) / (2.0 * h);
            assert_abs_diff_eq!(blocks.grad_z[l], fd_j, epsilon = 2e-4);
        }
    }

    #[test]
    fn zero_injection_rows_reuse_injection_jacobian() {
        let (net, ms, est) = noisy_three_bus();
        let blocks = assemble_kkt_blocks(&net, &ms, &est).unwrap();
        // Rows of C_x for the zero-injection constraints at bus 2 equal the
        // measurement Jacobian of hypothetical injection measurements there.
        let inj_cfg = MeasurementConfig::new(
            vec![],
            vec![2],
            vec![2],
            vec![],
            vec![],
            vec![],
            WeightSpec::default(),
        )
        .unwrap();
        let jac = crate::measurement::measurement_jacobian(&est.state(), &net, &inj_cfg).unwrap();
        let prob = Problem::new(&net, &ms).unwrap();
        let zero_p_row = blocks.r - 2;
        let zero_q_row = blocks.r - 1;
        let n_bus = net.n_buses();
        for bus_i in 0..n_bus {
            let vcol = prob.layout.v_index(bus_i);
            assert_abs_diff_eq!(
                blocks.con_jac[(zero_p_row, vcol)],
                jac[(0, bus_i)],
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                blocks.con_jac[(zero_q_row, vcol)],
                jac[(1, bus_i)],
                epsilon = 1e-12
            );
            if let Some(tcol) = prob.layout.theta_index(bus_i) {
                assert_abs_diff_eq!(
                    blocks.con_jac[(zero_p_row, tcol)],
                    jac[(0, n_bus + bus_i)],
                    epsilon = 1e-12
                );
                assert_abs_diff_eq!(
                    blocks.con_jac[(zero_q_row, tcol)],
                    jac[(1, n_bus + bus_i)],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn solve_residual_and_dj_identity() {
        let (net, ms, est) = noisy_three_bus();
        let blocks = assemble_kkt_blocks(&net, &ms, &est).unwrap();
        let sens = measurement_sensitivities(&blocks).unwrap();

        let mut m = DMatrix::zeros(blocks.n + blocks.r, blocks.p);
        m.view_mut((0, 0), (blocks.n, blocks.p))
            .copy_from(&sens.dx_dz);
        m.view_mut((blocks.n, 0), (blocks.r, blocks.p))
            .copy_from(&sens.dlambda_dz);
        let residual = (&blocks.kkt * &m + &blocks.rhs_z).abs().max();
        assert!(residual <= 1e-8, "solve residual {residual}");

        // Second assembly path for the objective sensitivities.
        let fresh = assemble_kkt_blocks(&net, &ms, &est).unwrap();
        for l in 0..blocks.p {
            let redo = fresh.grad_z[l] + fresh.grad_x.dot(&sens.dx_dz.column(l));
            assert_abs_diff_eq!(sens.dj_dz[l], redo, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_weight_scaling_behaves() {
        let (net, ms, est) = noisy_three_bus();
        let sens =
            measurement_sensitivities(&assemble_kkt_blocks(&net, &ms, &est).unwrap()).unwrap();

        let kappa = 3.5;
        let mut scaled = ms.clone();
        for m in &mut scaled.measurements {
            m.weight *= kappa;
        }
        let est_scaled =
            estimator::estimate_state(&net, &scaled, &SolverOptions::default()).unwrap();
        let sens_scaled =
            measurement_sensitivities(&assemble_kkt_blocks(&net, &scaled, &est_scaled).unwrap())
                .unwrap();

        assert_abs_diff_eq!(
            (&sens.dx_dz - &sens_scaled.dx_dz).abs().max(),
            0.0,
            epsilon = 1e-8
        );
        assert_abs_diff_eq!(
            (&sens_scaled.dj_dz - kappa * &sens.dj_dz).abs().max(),
            0.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn weight_sensitivities_match_residual_form() {
        let (net, ms, est) = noisy_three_bus();
        let blocks = assemble_kkt_blocks(&net, &ms, &est).unwrap();
        let ws = weight_sensitivities(&blocks).unwrap();
        // dJ/dw is the squared residual of the matched quantity.
        let prob = Problem::new(&net, &ms).unwrap();
        for l in 0..blocks.p {
            let e = ms.values()[l] - est.x.values[prob.matched_var[l]];
            assert_abs_diff_eq!(ws.dj_dw[l], e * e, epsilon = 1e-9);
        }

        // Finite-difference cross-check under a relative weight bump.
        let opts = SolverOptions::default();
        for l in [0usize, 3] {
            let w0 = ms.weights()[l];
            let h = 1e-6 * w0;
            let jp = estimator::estimate_state(&net, &ms.with_weight(l, w0 + h), &opts)
                .unwrap()
                .objective;
            let jm = estimator::estimate_state(&net, &ms.with_weight(l, w0 - h), &opts)
                .unwrap()
                .objective;
            let fd = (jp - jm) / (2.0 * h);
            let analytic = ws.dj_dw[l];
            let denom = fd.abs().max(1e-12);
            assert!(
                (analytic - fd).abs() / denom <= 1e-3,
                "dJ/dw[{l}]: analytic {analytic}, fd {fd}"
            );
        }
    }

    #[test]
    fn noiseless_weight_gradient_vanishes() {
        let (net, ms, _) = noisy_three_bus();
        let exact = synthesize_measurements(&net, &ms.config, 0.0, 1).unwrap();
        let est = estimator::estimate_state(&net, &exact, &SolverOptions::default()).unwrap();
        let ws = weight_sensitivities(&assemble_kkt_blocks(&net, &exact, &est).unwrap()).unwrap();
        assert!(ws.dj_dw.abs().max() <= 1e-12);
    }

    #[test]
    fn fd_check_validates_analytic_sensitivities() {
        let (net, ms, est) = noisy_three_bus();
        let report =
            finite_difference_check(&net, &ms, &est, &SolverOptions::default(), 1e-5, None)
                .unwrap();
        assert_eq!(report.failed_solves, 0);
        assert!(
            report.max_dx_rel_err <= 1e-4,
            "max rel err {}",
            report.max_dx_rel_err
        );
        assert!(report.max_dx_small_abs_err <= 1e-8);
        assert!(!report.roundoff_warning);

        let tiny = finite_difference_check(
            &net,
            &ms,
            &est,
            &SolverOptions::default(),
            1e-12,
            Some(&[0]),
        )
        .unwrap();
        assert!(tiny.roundoff_warning);
    }

    #[test]
    fn stale_point_rejected() {
        let (net, ms, est) = noisy_three_bus();
        let mut stale = est.clone();
        stale.x.values[0] += 0.05;
        match assemble_kkt_blocks(&net, &ms, &stale) {
            Err(Error::StalePoint { .. }) => {}
            other => panic!("expected stale-point error, got {other:?}"),
        }
    }
}
