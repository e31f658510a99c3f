//! AC power-flow expressions and their first/second derivatives with
//! respect to voltage magnitudes and angles.
//!
//! Injections are evaluated from the bus admittance matrix (taps are already
//! folded in), flows from branch parameters with the tap applied on the from
//! side. Both reduce to the familiar textbook forms at tap = 1. Angles enter
//! as theta_ij = theta_i - theta_j.

use nalgebra::DMatrix;

use crate::network::{AdmittanceMatrix, Branch};

/// A voltage-magnitude or angle coordinate, identified by internal bus index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    V(usize),
    Theta(usize),
}

impl Coord {
    /// Flat position in the 2n-dimensional (v..., theta...) coordinate space.
    pub fn flat(self, n_bus: usize) -> usize {
        match self {
            Coord::V(i) => i,
            Coord::Theta(i) => n_bus + i,
        }
    }
}

/// Sparse gradient of one scalar expression.
#[derive(Debug, Clone)]
pub struct LocalGradient {
    pub coords: Vec<Coord>,
    pub values: Vec<f64>,
}

/// Sparse symmetric Hessian of one scalar expression.
#[derive(Debug, Clone)]
pub struct LocalHessian {
    pub coords: Vec<Coord>,
    /// Dense symmetric matrix over `coords`.
    pub matrix: DMatrix<f64>,
}

#[inline]
fn trig(g: f64, b: f64, theta: f64) -> (f64, f64) {
    let (sin, cos) = theta.sin_cos();
    // a = G cos + B sin, b = G sin - B cos
    (g * cos + b * sin, g * sin - b * cos)
}

/// Active power injection at bus `i`: v_i * sum_j v_j (G_ij cos + B_ij sin),
/// the sum running over the whole admittance row including the diagonal.
pub fn injection_p(y: &AdmittanceMatrix, v: &[f64], theta: &[f64], i: usize) -> f64 {
    let mut acc = v[i] * y.g[(i, i)];
    for &j in &y.neighbors[i] {
        let (a, _) = trig(y.g[(i, j)], y.b[(i, j)], theta[i] - theta[j]);
        acc += v[j] * a;
    }
    v[i] * acc
}

/// Reactive power injection at bus `i`: v_i * sum_j v_j (G_ij sin - B_ij cos).
pub fn injection_q(y: &AdmittanceMatrix, v: &[f64], theta: &[f64], i: usize) -> f64 {
    let mut acc = -v[i] * y.b[(i, i)];
    for &j in &y.neighbors[i] {
        let (_, b) = trig(y.g[(i, j)], y.b[(i, j)], theta[i] - theta[j]);
        acc += v[j] * b;
    }
    v[i] * acc
}

pub fn injection_p_grad(y: &AdmittanceMatrix, v: &[f64], theta: &[f64], i: usize) -> LocalGradient {
    let nbr = &y.neighbors[i];
    let mut coords = Vec::with_capacity(2 + 2 * nbr.len());
    let mut values = Vec::with_capacity(2 + 2 * nbr.len());
    let mut sum_a = 0.0; // sum_j v_j a_ij over neighbors
    let mut sum_b = 0.0;
    coords.push(Coord::V(i));
    values.push(0.0); // patched below
    coords.push(Coord::Theta(i));
    values.push(0.0);
    for &j in nbr {
        let (a, b) = trig(y.g[(i, j)], y.b[(i, j)], theta[i] - theta[j]);
        sum_a += v[j] * a;
        sum_b += v[j] * b;
        coords.push(Coord::V(j));
        values.push(v[i] * a);
        coords.push(Coord::Theta(j));
        values.push(v[i] * v[j] * b);
    }
    values[0] = 2.0 * v[i] * y.g[(i, i)] + sum_a;
    values[1] = -v[i] * sum_b;
    LocalGradient { coords, values }
}

pub fn injection_q_grad(y: &AdmittanceMatrix, v: &[f64], theta: &[f64], i: usize) -> LocalGradient {
    let nbr = &y.neighbors[i];
    let mut coords = Vec::with_capacity(2 + 2 * nbr.len());
    let mut values = Vec::with_capacity(2 + 2 * nbr.len());
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    coords.push(Coord::V(i));
    values.push(0.0);
    coords.push(Coord::Theta(i));
    values.push(0.0);
    for &j in nbr {
        let (a, b) = trig(y.g[(i, j)], y.b[(i, j)], theta[i] - theta[j]);
        sum_a += v[j] * a;
        sum_b += v[j] * b;
        coords.push(Coord::V(j));
        values.push(v[i] * b);
        coords.push(Coord::Theta(j));
        values.push(-v[i] * v[j] * a);
    }
    values[0] = -2.0 * v[i] * y.b[(i, i)] + sum_b;
    values[1] = v[i] * sum_a;
    LocalGradient { coords, values }
}

pub fn injection_p_hess(y: &AdmittanceMatrix, v: &[f64], theta: &[f64], i: usize) -> LocalHessian {
    injection_hess(y, v, theta, i, true)
}

pub fn injection_q_hess(y: &AdmittanceMatrix, v: &[f64], theta: &[f64], i: usize) -> LocalHessian {
    injection_hess(y, v, theta, i, false)
}

fn injection_hess(
    y: &AdmittanceMatrix,
    v: &[f64],
    theta: &[f64],
    i: usize,
    active: bool,
) -> LocalHessian {
    let nbr = &y.neighbors[i];
    let d = nbr.len();
    // Coordinate order: V(i), Theta(i), then V(j), Theta(j) per neighbor.
    let mut coords = Vec::with_capacity(2 + 2 * d);
    coords.push(Coord::V(i));
    coords.push(Coord::Theta(i));
    for &j in nbr {
        coords.push(Coord::V(j));
        coords.push(Coord::Theta(j));
    }
    let m = coords.len();
    let mut h = DMatrix::zeros(m, m);
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for (pos, &j) in nbr.iter().enumerate() {
        let (a, b) = trig(y.g[(i, j)], y.b[(i, j)], theta[i] - theta[j]);
        sum_a += v[j] * a;
        sum_b += v[j] * b;
        let (cv, ct) = (2 + 2 * pos, 3 + 2 * pos);
        if active {
            // d2p/dvi dvj, d2p/dvi dthj, d2p/dvj dthi, d2p/dvj dthj
            sym_set(&mut h, 0, cv, a);
            sym_set(&mut h, 0, ct, v[j] * b);
            sym_set(&mut h, 1, cv, -v[i] * b);
            sym_set(&mut h, cv, ct, v[i] * b);
            // theta block
            sym_set(&mut h, 1, ct, v[i] * v[j] * a);
            h[(ct, ct)] = -v[i] * v[j] * a;
        } else {
            sym_set(&mut h, 0, cv, b);
            sym_set(&mut h, 0, ct, -v[j] * a);
            sym_set(&mut h, 1, cv, v[i] * a);
            sym_set(&mut h, cv, ct, -v[i] * a);
            sym_set(&mut h, 1, ct, v[i] * v[j] * b);
            h[(ct, ct)] = -v[i] * v[j] * b;
        }
    }
    if active {
        h[(0, 0)] = 2.0 * y.g[(i, i)];
        sym_set(&mut h, 0, 1, -sum_b);
        h[(1, 1)] = -v[i] * sum_a;
    } else {
        h[(0, 0)] = -2.0 * y.b[(i, i)];
        sym_set(&mut h, 0, 1, sum_a);
        h[(1, 1)] = -v[i] * sum_b;
    }
    LocalHessian { coords, matrix: h }
}

#[inline]
fn sym_set(h: &mut DMatrix<f64>, r: usize, c: usize, val: f64) {
    h[(r, c)] = val;
    h[(c, r)] = val;
}

/// Flow expression coefficients for one metered branch end.
///
/// At the metered bus i with remote bus j:
/// p = alpha v_i^2 - k v_i v_j (gs cos + bs sin),
/// q = -beta v_i^2 - k v_i v_j (gs sin - bs cos).
#[derive(Debug, Clone, Copy)]
pub struct FlowEnd {
    /// Internal index of the metered bus.
    pub at: usize,
    /// Internal index of the remote bus.
    pub other: usize,
    alpha: f64,
    beta: f64,
    k: f64,
    gs: f64,
    bs: f64,
}

impl FlowEnd {
    /// `metered_from` selects the tap side of the branch as the metered end.
    pub fn new(branch: &Branch, endpoints: (usize, usize), metered_from: bool) -> Self {
        let (gs, bs) = branch.series_admittance();
        let a = branch.tap;
        let half = branch.b_sh / 2.0;
        let (at, other) = if metered_from {
            (endpoints.0, endpoints.1)
        } else {
            (endpoints.1, endpoints.0)
        };
        let (alpha, beta) = if metered_from {
            (gs / (a * a), (bs + half) / (a * a))
        } else {
            (gs, bs + half)
        };
        FlowEnd {
            at,
            other,
            alpha,
            beta,
            k: 1.0 / a,
            gs,
            bs,
        }
    }

    fn parts(&self, v: &[f64], theta: &[f64]) -> (f64, f64, f64, f64) {
        let (a, b) = trig(self.gs, self.bs, theta[self.at] - theta[self.other]);
        (v[self.at], v[self.other], a, b)
    }

    pub fn flow_p(&self, v: &[f64], theta: &[f64]) -> f64 {
        let (vi, vj, a, _) = self.parts(v, theta);
        self.alpha * vi * vi - self.k * vi * vj * a
    }

    pub fn flow_q(&self, v: &[f64], theta: &[f64]) -> f64 {
        let (vi, vj, _, b) = self.parts(v, theta);
        -self.beta * vi * vi - self.k * vi * vj * b
    }

    pub fn flow_p_grad(&self, v: &[f64], theta: &[f64]) -> LocalGradient {
        let (vi, vj, a, b) = self.parts(v, theta);
        LocalGradient {
            coords: self.coords(),
            values: vec![
                2.0 * self.alpha * vi - self.k * vj * a,
                -self.k * vi * a,
                self.k * vi * vj * b,
                -self.k * vi * vj * b,
            ],
        }
    }

    pub fn flow_q_grad(&self, v: &[f64], theta: &[f64]) -> LocalGradient {
        let (vi, vj, a, b) = self.parts(v, theta);
        LocalGradient {
            coords: self.coords(),
            values: vec![
                -2.0 * self.beta * vi - self.k * vj * b,
                -self.k * vi * b,
                -self.k * vi * vj * a,
                self.k * vi * vj * a,
            ],
        }
    }

    pub fn flow_p_hess(&self, v: &[f64], theta: &[f64]) -> LocalHessian {
        let (vi, vj, a, b) = self.parts(v, theta);
        let mut h = DMatrix::zeros(4, 4);
        h[(0, 0)] = 2.0 * self.alpha;
        sym_set(&mut h, 0, 1, -self.k * a);
        sym_set(&mut h, 0, 2, self.k * vj * b);
        sym_set(&mut h, 0, 3, -self.k * vj * b);
        sym_set(&mut h, 1, 2, self.k * vi * b);
        sym_set(&mut h, 1, 3, -self.k * vi * b);
        let taa = self.k * vi * vj * a;
        h[(2, 2)] = taa;
        sym_set(&mut h, 2, 3, -taa);
        h[(3, 3)] = taa;
        LocalHessian {
            coords: self.coords(),
            matrix: h,
        }
    }

    pub fn flow_q_hess(&self, v: &[f64], theta: &[f64]) -> LocalHessian {
        let (vi, vj, a, b) = self.parts(v, theta);
        let mut h = DMatrix::zeros(4, 4);
        h[(0, 0)] = -2.0 * self.beta;
        sym_set(&mut h, 0, 1, -self.k * b);
        sym_set(&mut h, 0, 2, -self.k * vj * a);
        sym_set(&mut h, 0, 3, self.k * vj * a);
        sym_set(&mut h, 1, 2, -self.k * vi * a);
        sym_set(&mut h, 1, 3, self.k * vi * a);
        let tbb = self.k * vi * vj * b;
        h[(2, 2)] = tbb;
        sym_set(&mut h, 2, 3, -tbb);
        h[(3, 3)] = tbb;
        LocalHessian {
            coords: self.coords(),
            matrix: h,
        }
    }

    fn coords(&self) -> Vec<Coord> {
        vec![
            Coord::V(self.at),
            Coord::V(self.other),
            Coord::Theta(self.at),
            Coord::Theta(self.other),
        ]
    }
}
