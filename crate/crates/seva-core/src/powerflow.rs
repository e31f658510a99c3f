//! Newton-Raphson AC power flow.
//!
//! Serves as the ground-truth oracle for measurement synthesis: it solves the
//! standard polar mismatch equations with the slack angle fixed at zero and
//! PV-bus magnitudes held at their setpoints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equations::{self, Coord};
use crate::error::{Error, Result};
use crate::network::{BusKind, Network};

/// Voltage magnitudes (per-unit) and angles (radians) for every bus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateVector {
    pub v: DVector<f64>,
    pub theta: DVector<f64>,
}

impl StateVector {
    pub fn flat(n: usize) -> Self {
        StateVector {
            v: DVector::from_element(n, 1.0),
            theta: DVector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    /// Infinity-norm mismatch tolerance (per-unit power).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol: 1e-10,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub state: StateVector,
    pub iterations: usize,
    pub mismatch: f64,
}

/// Initial state: generator buses at their voltage setpoints, angles zero.
pub fn start_state(net: &Network) -> StateVector {
    let n = net.n_buses();
    let mut v = DVector::from_element(n, 1.0);
    for (i, bus) in net.buses.iter().enumerate() {
        if bus.kind != BusKind::Pq {
            v[i] = bus.v_setpoint;
        }
    }
    StateVector {
        v,
        theta: DVector::zeros(n),
    }
}

/// Full Newton power flow from `start`.
pub fn solve_power_flow(
    net: &Network,
    start: &StateVector,
    opts: PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let n = net.n_buses();
    if start.n() != n {
        return Err(Error::Shape {
            expected: format!("state of dimension {n}"),
            actual: format!("{}", start.n()),
        });
    }
    if start.v.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("start voltages must be positive".into()));
    }

    let slack = net.slack();
    // Unknowns: angles at all non-slack buses, magnitudes at PQ buses.
    let ang_buses: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mag_buses: Vec<usize> = (0..n)
        .filter(|&i| net.buses[i].kind == BusKind::Pq)
        .collect();
    let mut ang_col = vec![usize::MAX; n];
    let mut mag_col = vec![usize::MAX; n];
    for (c, &i) in ang_buses.iter().enumerate() {
        ang_col[i] = c;
    }
    for (c, &i) in mag_buses.iter().enumerate() {
        mag_col[i] = ang_buses.len() + c;
    }
    let dim = ang_buses.len() + mag_buses.len();

    let mut v: Vec<f64> = start.v.iter().copied().collect();
    let mut theta: Vec<f64> = start.theta.iter().copied().collect();
    // Hold regulated magnitudes at their setpoints.
    for (i, bus) in net.buses.iter().enumerate() {
        if bus.kind != BusKind::Pq {
            v[i] = bus.v_setpoint;
        }
    }
    theta[slack] = 0.0;

    let y = net.admittance();
    let mismatch_vec = |v: &[f64], theta: &[f64]| -> DVector<f64> {
        let mut f = DVector::zeros(dim);
        for (row, &i) in ang_buses.iter().enumerate() {
            let (p_sched, _) = net.scheduled_injection(i);
            f[row] = p_sched - equations::injection_p(y, v, theta, i);
        }
        for (row, &i) in mag_buses.iter().enumerate() {
            let (_, q_sched) = net.scheduled_injection(i);
            f[ang_buses.len() + row] = q_sched - equations::injection_q(y, v, theta, i);
        }
        f
    };

    let inf_norm = |f: &DVector<f64>| if dim == 0 { 0.0 } else { f.abs().max() };
    let mut f = mismatch_vec(&v, &theta);
    let mut norm = inf_norm(&f);
    let mut iterations = 0;

    while norm > opts.tol {
        if iterations >= opts.max_iter || !norm.is_finite() {
            return Err(Error::PowerFlowConvergence {
                iterations,
                last_mismatch: norm,
            });
        }
        iterations += 1;

        // Jacobian of calculated injections w.r.t. unknowns.
        let mut jac = DMatrix::zeros(dim, dim);
        for (row, &i) in ang_buses.iter().enumerate() {
            scatter(
                &equations::injection_p_grad(y, &v, &theta, i),
                &ang_col,
                &mag_col,
                row,
                &mut jac,
            );
        }
        for (row, &i) in mag_buses.iter().enumerate() {
            let r = ang_buses.len() + row;
            scatter(
                &equations::injection_q_grad(y, &v, &theta, i),
                &ang_col,
                &mag_col,
                r,
                &mut jac,
            );
        }

        let lu = jac.lu();
        let step = lu.solve(&f).ok_or(Error::PowerFlowSingular {
            iteration: iterations,
        })?;

        for (c, &i) in ang_buses.iter().enumerate() {
            theta[i] += step[c];
        }
        for (c, &i) in mag_buses.iter().enumerate() {
            v[i] += step[ang_buses.len() + c];
        }

        f = mismatch_vec(&v, &theta);
        norm = inf_norm(&f);
    }

    Ok(PowerFlowSolution {
        state: StateVector {
            v: DVector::from_vec(v),
            theta: DVector::from_vec(theta),
        },
        iterations,
        mismatch: norm,
    })
}

fn scatter(
    grad: &equations::LocalGradient,
    ang_col: &[usize],
    mag_col: &[usize],
    row: usize,
    jac: &mut DMatrix<f64>,
) {
    for (coord, val) in grad.coords.iter().zip(&grad.values) {
        let col = match coord {
            Coord::V(j) => mag_col[*j],
            Coord::Theta(j) => ang_col[*j],
        };
        if col != usize::MAX {
            jac[(row, col)] += val;
        }
    }
}
