//! Equality-constrained weighted-least-squares state estimation.
//!
//! The decision vector stacks, in canonical order: voltage magnitudes for
//! every bus, angles for every bus except the slack (the reference angle is
//! eliminated), then one variable per measured active injection, reactive
//! injection, active flow, and reactive flow. Each measured quantity is
//! defined by an equality constraint tying its variable to the trigonometric
//! expression in (v, theta); zero-injection buses contribute two constraints
//! directly on (v, theta) and no variables.
//!
//! The solver runs full Newton on the KKT system with Levenberg-style
//! diagonal damping on step rejection and a Gauss-Newton fallback (constraint
//! curvature dropped from the Hessian) if Newton fails outright.

use nalgebra::{DMatrix, DVector};

use crate::equations::Coord;
use crate::error::{Error, Result};
use crate::measurement::{self, MeasurementSet, StateVector, Target};
use crate::network::Network;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Infinity-norm tolerance on the KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial Levenberg damping added to the primal diagonal; grows on step
    /// rejection, decays on acceptance.
    pub damping: f64,
    pub warm_start: Option<WarmStart>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iter: 50,
            damping: 0.0,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// Placement of every decision variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableLayout {
    pub n_bus: usize,
    pub slack: usize,
    /// Internal indices of buses with an active-injection variable.
    pub p_inj_buses: Vec<usize>,
    /// Internal indices of buses with a reactive-injection variable.
    pub q_inj_buses: Vec<usize>,
    /// External id pairs of metered active flows, canonical order.
    pub p_flows: Vec<(i64, i64)>,
    /// External id pairs of metered reactive flows, canonical order.
    pub q_flows: Vec<(i64, i64)>,
}

impl VariableLayout {
    pub fn n(&self) -> usize {
        2 * self.n_bus - 1
            + self.p_inj_buses.len()
            + self.q_inj_buses.len()
            + self.p_flows.len()
            + self.q_flows.len()
    }

    pub fn v_index(&self, bus: usize) -> usize {
        bus
    }

    /// Angle column for a bus; `None` for the slack (reference) bus.
    pub fn theta_index(&self, bus: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match bus.cmp(&self.slack) {
            Less => Some(self.n_bus + bus),
            Equal => None,
            Greater => Some(self.n_bus + bus - 1),
        }
    }

    pub fn p_inj_offset(&self) -> usize {
        2 * self.n_bus - 1
    }

    pub fn q_inj_offset(&self) -> usize {
        self.p_inj_offset() + self.p_inj_buses.len()
    }

    pub fn p_flow_offset(&self) -> usize {
        self.q_inj_offset() + self.q_inj_buses.len()
    }

    pub fn q_flow_offset(&self) -> usize {
        self.p_flow_offset() + self.p_flows.len()
    }

    /// Column of a (v, theta) coordinate; `None` for the reference angle.
    pub fn coord_index(&self, c: Coord) -> Option<usize> {
        match c {
            Coord::V(i) => Some(self.v_index(i)),
            Coord::Theta(i) => self.theta_index(i),
        }
    }

    /// Human-readable variable names, canonical order, external bus ids.
    pub fn labels(&self, net: &Network) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n());
        for i in 0..self.n_bus {
            out.push(format!("v@{}", net.bus_id(i)));
        }
        for i in 0..self.n_bus {
            if i != self.slack {
                out.push(format!("theta@{}", net.bus_id(i)));
            }
        }
        for &i in &self.p_inj_buses {
            out.push(format!("P@{}", net.bus_id(i)));
        }
        for &i in &self.q_inj_buses {
            out.push(format!("Q@{}", net.bus_id(i)));
        }
        for &(i, j) in &self.p_flows {
            out.push(format!("Pf@{i}-{j}"));
        }
        for &(i, j) in &self.q_flows {
            out.push(format!("Qf@{i}-{j}"));
        }
        out
    }
}

/// Estimated decision vector with its layout.
#[derive(Debug, Clone)]
pub struct DecisionVector {
    pub values: DVector<f64>,
    pub layout: VariableLayout,
}

impl DecisionVector {
    /// Voltage magnitude estimate at internal bus `i`.
    pub fn v(&self, i: usize) -> f64 {
        self.values[self.layout.v_index(i)]
    }

    /// Angle estimate at internal bus `i` (0 at the slack).
    pub fn theta(&self, i: usize) -> f64 {
        match self.layout.theta_index(i) {
            Some(c) => self.values[c],
            None => 0.0,
        }
    }

    /// The (v, theta) part as a full state vector.
    pub fn state(&self) -> StateVector {
        let n = self.layout.n_bus;
        StateVector {
            v: DVector::from_fn(n, |i, _| self.v(i)),
            theta: DVector::from_fn(n, |i, _| self.theta(i)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub x: DecisionVector,
    /// One multiplier per constraint, canonical constraint order.
    pub multipliers: DVector<f64>,
    /// Weighted sum of squared errors at the solution.
    pub objective: f64,
    pub iterations: usize,
    /// Infinity norm of the stationarity and feasibility residuals.
    pub kkt_residual: f64,
}

impl EstimationResult {
    pub fn state(&self) -> StateVector {
        self.x.state()
    }
}

/// The assembled estimation problem: measurement targets, variable layout,
/// and constraint structure. Shared by the solver and the sensitivity
/// assembly.
pub(crate) struct Problem<'a> {
    pub net: &'a Network,
    pub layout: VariableLayout,
    /// Resolved target per measurement, canonical order.
    pub targets: Vec<Target>,
    /// Decision-variable column matched to each measurement.
    pub matched_var: Vec<usize>,
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    /// Targets of the measurement-defining constraints, canonical constraint
    /// order (Pinj, Qinj, Pflow, Qflow), paired with the defined variable.
    pub def_constraints: Vec<(usize, Target)>,
    /// Internal bus indices with zero-injection constraints.
    pub zero_inj: Vec<usize>,
    pub con_labels: Vec<String>,
}

impl<'a> Problem<'a> {
    pub fn new(net: &'a Network, ms: &MeasurementSet) -> Result<Self> {
        let cfg = &ms.config;
        cfg.validate(net)?;

        let p_inj_buses: Vec<usize> = cfg
            .p_inj_buses()
            .iter()
            .map(|&b| net.bus_index(b))
            .collect::<Result<_>>()?;
        let q_inj_buses: Vec<usize> = cfg
            .q_inj_buses()
            .iter()
            .map(|&b| net.bus_index(b))
            .collect::<Result<_>>()?;
        let layout = VariableLayout {
            n_bus: net.n_buses(),
            slack: net.slack(),
            p_inj_buses,
            q_inj_buses,
            p_flows: cfg.p_flow_branches().to_vec(),
            q_flows: cfg.q_flow_branches().to_vec(),
        };

        let mut targets = Vec::with_capacity(ms.p());
        let mut matched_var = Vec::with_capacity(ms.p());
        for m in &ms.measurements {
            let target = measurement::resolve_target(net, m.kind, m.location)?;
            let var = matched_variable(&layout, cfg, m.kind, m.location, net)?;
            targets.push(target);
            matched_var.push(var);
        }

        // Measurement-defining constraints reuse the same targets, one per
        // configured quantity (duplicated measurements share a definition).
        let mut def_constraints = Vec::new();
        let mut con_labels = Vec::new();
        for (pos, &b) in cfg.p_inj_buses().iter().enumerate() {
            let t = measurement::resolve_target(
                net,
                measurement::MeasurementKind::Pinj,
                measurement::Location::Bus(b),
            )?;
            def_constraints.push((layout.p_inj_offset() + pos, t));
            con_labels.push(format!("def_P@{b}"));
        }
        for (pos, &b) in cfg.q_inj_buses().iter().enumerate() {
            let t = measurement::resolve_target(
                net,
                measurement::MeasurementKind::Qinj,
                measurement::Location::Bus(b),
            )?;
            def_constraints.push((layout.q_inj_offset() + pos, t));
            con_labels.push(format!("def_Q@{b}"));
        }
        for (pos, &(i, j)) in cfg.p_flow_branches().iter().enumerate() {
            let t = measurement::resolve_target(
                net,
                measurement::MeasurementKind::Pflow,
                measurement::Location::Branch(i, j),
            )?;
            def_constraints.push((layout.p_flow_offset() + pos, t));
            con_labels.push(format!("def_Pf@{i}-{j}"));
        }
        for (pos, &(i, j)) in cfg.q_flow_branches().iter().enumerate() {
            let t = measurement::resolve_target(
                net,
                measurement::MeasurementKind::Qflow,
                measurement::Location::Branch(i, j),
            )?;
            def_constraints.push((layout.q_flow_offset() + pos, t));
            con_labels.push(format!("def_Qf@{i}-{j}"));
        }
        let zero_inj: Vec<usize> = cfg
            .zero_inj_buses()
            .iter()
            .map(|&b| net.bus_index(b))
            .collect::<Result<_>>()?;
        for &b in cfg.zero_inj_buses() {
            con_labels.push(format!("zero_P@{b}"));
        }
        for &b in cfg.zero_inj_buses() {
            con_labels.push(format!("zero_Q@{b}"));
        }

        Ok(Problem {
            net,
            layout,
            targets,
            matched_var,
            z: ms.values(),
            w: ms.weights(),
            def_constraints,
            zero_inj,
            con_labels,
        })
    }

    pub fn n(&self) -> usize {
        self.layout.n()
    }

    pub fn r(&self) -> usize {
        self.def_constraints.len() + 2 * self.zero_inj.len()
    }

    pub fn p(&self) -> usize {
        self.targets.len()
    }

    /// Extracts (v, theta) slices from a decision vector (slack angle 0).
    pub fn split_state(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = self.layout.n_bus;
        let mut v = vec![0.0; n];
        let mut theta = vec![0.0; n];
        for i in 0..n {
            v[i] = x[self.layout.v_index(i)];
            if let Some(c) = self.layout.theta_index(i) {
                theta[i] = x[c];
            }
        }
        (v, theta)
    }

    /// Flat start: unit magnitudes, zero angles, measured values for the
    /// defined injection/flow variables.
    pub fn initial_x(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.n());
        for i in 0..self.layout.n_bus {
            x[self.layout.v_index(i)] = 1.0;
        }
        let def_start = self.layout.p_inj_offset();
        for (l, &m) in self.matched_var.iter().enumerate() {
            if m >= def_start {
                x[m] = self.z[l];
            }
        }
        x
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (0..self.p())
            .map(|l| {
                let e = self.z[l] - x[self.matched_var[l]];
                self.w[l] * e * e
            })
            .sum()
    }

    pub fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n());
        for l in 0..self.p() {
            let m = self.matched_var[l];
            g[m] += 2.0 * self.w[l] * (x[m] - self.z[l]);
        }
        g
    }

    pub fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        let (v, theta) = self.split_state(x);
        let mut c = DVector::zeros(self.r());
        let mut row = 0;
        for (var, target) in &self.def_constraints {
            c[row] = x[*var] - measurement::eval_target(target, &v, &theta, self.net);
            row += 1;
        }
        let y = self.net.admittance();
        for &zb in &self.zero_inj {
            c[row] = crate::equations::injection_p(y, &v, &theta, zb);
            row += 1;
        }
        for &zb in &self.zero_inj {
            c[row] = crate::equations::injection_q(y, &v, &theta, zb);
            row += 1;
        }
        c
    }

    pub fn constraint_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (v, theta) = self.split_state(x);
        let mut jac = DMatrix::zeros(self.r(), self.n());
        let mut row = 0;
        for (var, target) in &self.def_constraints {
            jac[(row, *var)] = 1.0;
            let grad = measurement::target_grad(target, &v, &theta, self.net);
            for (coord, val) in grad.coords.iter().zip(&grad.values) {
                if let Some(col) = self.layout.coord_index(*coord) {
                    jac[(row, col)] -= val;
                }
            }
            row += 1;
        }
        let y = self.net.admittance();
        for reactive in [false, true] {
            for &zb in &self.zero_inj {
                let grad = if reactive {
                    crate::equations::injection_q_grad(y, &v, &theta, zb)
                } else {
                    crate::equations::injection_p_grad(y, &v, &theta, zb)
                };
                for (coord, val) in grad.coords.iter().zip(&grad.values) {
                    if let Some(col) = self.layout.coord_index(*coord) {
                        jac[(row, col)] += val;
                    }
                }
                row += 1;
            }
        }
        jac
    }

    /// Hessian of the Lagrangian: the diagonal objective block plus, when
    /// `with_curvature`, the multiplier-weighted constraint Hessians.
    pub fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        with_curvature: bool,
    ) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n(), self.n());
        for l in 0..self.p() {
            let m = self.matched_var[l];
            h[(m, m)] += 2.0 * self.w[l];
        }
        if !with_curvature {
            return h;
        }
        let (v, theta) = self.split_state(x);
        let y = self.net.admittance();
        let mut row = 0;
        for (_, target) in &self.def_constraints {
            // Defining constraints are variable - expression, so their
            // curvature enters with a negative sign.
            let local = target_hessian(target, &v, &theta, y);
            if let Some(local) = local {
                scatter_hessian(&local, -lambda[row], &self.layout, &mut h);
            }
            row += 1;
        }
        for reactive in [false, true] {
            for &zb in &self.zero_inj {
                let local = if reactive {
                    crate::equations::injection_q_hess(y, &v, &theta, zb)
                } else {
                    crate::equations::injection_p_hess(y, &v, &theta, zb)
                };
                scatter_hessian(&local, lambda[row], &self.layout, &mut h);
                row += 1;
            }
        }
        h
    }

    /// Gradient of the Lagrangian.
    pub fn stationarity(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
        self.objective_gradient(x) + self.constraint_jacobian(x).transpose() * lambda
    }

    /// Bordered KKT matrix [[hess + damp I, C^T], [C, 0]].
    pub fn kkt_matrix(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        damp: f64,
        with_curvature: bool,
    ) -> DMatrix<f64> {
        let n = self.n();
        let r = self.r();
        let mut kkt = DMatrix::zeros(n + r, n + r);
        let mut hess = self.lagrangian_hessian(x, lambda, with_curvature);
        for i in 0..n {
            hess[(i, i)] += damp;
        }
        kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
        let con_jac = self.constraint_jacobian(x);
        kkt.view_mut((n, 0), (r, n)).copy_from(&con_jac);
        kkt.view_mut((0, n), (n, r)).copy_from(&con_jac.transpose());
        kkt
    }
}

fn target_hessian(
    target: &Target,
    v: &[f64],
    theta: &[f64],
    y: &crate::network::AdmittanceMatrix,
) -> Option<crate::equations::LocalHessian> {
    match target {
        Target::V(_) => None, // linear
        Target::InjP(i) => Some(crate::equations::injection_p_hess(y, v, theta, *i)),
        Target::InjQ(i) => Some(crate::equations::injection_q_hess(y, v, theta, *i)),
        Target::Flow {
            end,
            reactive: false,
        } => Some(end.flow_p_hess(v, theta)),
        Target::Flow {
            end,
            reactive: true,
        } => Some(end.flow_q_hess(v, theta)),
    }
}

fn scatter_hessian(
    local: &crate::equations::LocalHessian,
    scale: f64,
    layout: &VariableLayout,
    h: &mut DMatrix<f64>,
) {
    if scale == 0.0 {
        return;
    }
    let cols: Vec<Option<usize>> = local
        .coords
        .iter()
        .map(|&c| layout.coord_index(c))
        .collect();
    for (a, &ca) in cols.iter().enumerate() {
        let Some(ca) = ca else { continue };
        for (b, &cb) in cols.iter().enumerate() {
            let Some(cb) = cb else { continue };
            h[(ca, cb)] += scale * local.matrix[(a, b)];
        }
    }
}

fn matched_variable(
    layout: &VariableLayout,
    cfg: &crate::measurement::MeasurementConfig,
    kind: measurement::MeasurementKind,
    location: measurement::Location,
    net: &Network,
) -> Result<usize> {
    use measurement::{Location as L, MeasurementKind as K};
    let missing = || {
        Error::Lookup(format!(
            "measurement {kind}@{location} has no matching variable"
        ))
    };
    match (kind, location) {
        (K::V, L::Bus(b)) => Ok(layout.v_index(net.bus_index(b)?)),
        (K::Pinj, L::Bus(b)) => cfg
            .p_inj_buses()
            .binary_search(&b)
            .map(|pos| layout.p_inj_offset() + pos)
            .map_err(|_| missing()),
        (K::Qinj, L::Bus(b)) => cfg
            .q_inj_buses()
            .binary_search(&b)
            .map(|pos| layout.q_inj_offset() + pos)
            .map_err(|_| missing()),
        (K::Pflow, L::Branch(i, j)) => cfg
            .p_flow_branches()
            .binary_search(&(i, j))
            .map(|pos| layout.p_flow_offset() + pos)
            .map_err(|_| missing()),
        (K::Qflow, L::Branch(i, j)) => cfg
            .q_flow_branches()
            .binary_search(&(i, j))
            .map(|pos| layout.q_flow_offset() + pos)
            .map_err(|_| missing()),
        _ => Err(missing()),
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.abs().max()
    }
}

struct NewtonOutcome {
    x: DVector<f64>,
    lambda: DVector<f64>,
    iterations: usize,
    residual: f64,
}

fn solve_newton(
    prob: &Problem,
    mut x: DVector<f64>,
    mut lambda: DVector<f64>,
    opts: &SolverOptions,
    with_curvature: bool,
) -> std::result::Result<NewtonOutcome, Error> {
    let n = prob.n();
    let r = prob.r();
    let mut damp = opts.damping;
    let mut history = Vec::new();

    let residual_norm = |x: &DVector<f64>, l: &DVector<f64>| {
        inf_norm(&prob.stationarity(x, l)).max(inf_norm(&prob.constraints(x)))
    };

    let mut res = residual_norm(&x, &lambda);
    history.push(res);
    let mut iterations = 0;

    loop {
        if res <= opts.tol {
            return Ok(NewtonOutcome {
                x,
                lambda,
                iterations,
                residual: res,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::EstimationConvergence {
                iterations,
                residual_history: history,
            });
        }
        iterations += 1;

        let mut f = DVector::zeros(n + r);
        f.rows_mut(0, n).copy_from(&prob.stationarity(&x, &lambda));
        f.rows_mut(n, r).copy_from(&prob.constraints(&x));

        let mut solve_failures = 0;
        loop {
            let kkt = prob.kkt_matrix(&x, &lambda, damp, with_curvature);
            let step = kkt.lu().solve(&(-&f));
            let accepted = match step {
                None => {
                    solve_failures += 1;
                    if solve_failures >= 2 {
                        // Persistent singularity is structural, not a damping
                        // issue; let the caller classify it.
                        return Err(Error::EstimationConvergence {
                            iterations,
                            residual_history: history,
                        });
                    }
                    None
                }
                Some(d) => {
                    let dx = d.rows(0, n).into_owned();
                    let dl = d.rows(n, r).into_owned();
                    let mut found = None;
                    let mut alpha = 1.0;
                    for _ in 0..8 {
                        let xt = &x + alpha * &dx;
                        let lt = &lambda + alpha * &dl;
                        let rt = residual_norm(&xt, &lt);
                        if rt.is_finite() && (rt <= (1.0 - 1e-4 * alpha) * res || rt <= opts.tol) {
                            found = Some((xt, lt, rt));
                            break;
                        }
                        alpha *= 0.5;
                    }
                    found
                }
            };
            match accepted {
                Some((xt, lt, rt)) => {
                    x = xt;
                    lambda = lt;
                    res = rt;
                    history.push(res);
                    damp = if damp > 1e-10 { damp * 0.25 } else { 0.0 };
                    break;
                }
                None => {
                    damp = if damp == 0.0 { 1e-8 } else { damp * 10.0 };
                    if damp > 1e8 {
                        return Err(Error::EstimationConvergence {
                            iterations,
                            residual_history: history,
                        });
                    }
                }
            }
        }
    }
}

/// Reciprocal condition estimate from the LU factor's diagonal spread.
/// Order-of-magnitude only; enough to flag structural singularity.
pub(crate) fn rcond_from_lu(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    for i in 0..u.nrows().min(u.ncols()) {
        let d = u[(i, i)].abs();
        min = min.min(d);
        max = max.max(d);
    }
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Regularity check: `Some(error)` when the constraint gradients are
/// linearly dependent at `x`, naming the dependent rows.
pub(crate) fn constraint_rank_error(prob: &Problem, x: &DVector<f64>) -> Option<Error> {
    let r = prob.r();
    if r == 0 {
        return None;
    }
    let qr = prob.constraint_jacobian(x).transpose().col_piv_qr();
    let rank = {
        let tri = qr.r();
        let m = tri.nrows().min(tri.ncols());
        let largest = (0..m).map(|i| tri[(i, i)].abs()).fold(0.0f64, f64::max);
        (0..m)
            .take_while(|&i| tri[(i, i)].abs() > 1e-10 * largest.max(1.0))
            .count()
    };
    if rank >= r {
        return None;
    }
    // Pivot order lists the most independent constraints first; the
    // trailing ones form a dependent set.
    let mut idx = nalgebra::RowDVector::from_iterator(r, (0..r).map(|i| i as f64));
    qr.p().permute_columns(&mut idx);
    let dependent = idx
        .iter()
        .skip(rank)
        .map(|&c| prob.con_labels[c as usize].clone())
        .collect();
    Some(Error::Regularity {
        rank,
        expected: r,
        dependent,
    })
}

fn classify_failure(prob: &Problem, x: &DVector<f64>, original: Error) -> Error {
    if let Some(err) = constraint_rank_error(prob, x) {
        return err;
    }
    let r = prob.r();
    let rcond = rcond_from_lu(&prob.kkt_matrix(x, &DVector::zeros(r), 0.0, false));
    if rcond < 1e-13 {
        return Error::Observability {
            detail: format!("reciprocal condition estimate {rcond:.3e}"),
        };
    }
    original
}

/// Solves the constrained WLS estimation problem for the given measurement
/// set, returning the KKT point.
pub fn estimate_state(
    net: &Network,
    ms: &MeasurementSet,
    opts: &SolverOptions,
) -> Result<EstimationResult> {
    let prob = Problem::new(net, ms)?;
    let n = prob.n();
    let r = prob.r();

    let (x0, l0) = match &opts.warm_start {
        Some(ws) => {
            if ws.x.len() != n || ws.lambda.len() != r {
                return Err(Error::Shape {
                    expected: format!("warm start of dimensions ({n}, {r})"),
                    actual: format!("({}, {})", ws.x.len(), ws.lambda.len()),
                });
            }
            (ws.x.clone(), ws.lambda.clone())
        }
        None => (prob.initial_x(), DVector::zeros(r)),
    };

    let outcome = match solve_newton(&prob, x0.clone(), l0.clone(), opts, true) {
        Ok(o) => o,
        Err(newton_err) => match solve_newton(&prob, x0.clone(), l0, opts, false) {
            Ok(o) => o,
            Err(_) => return Err(classify_failure(&prob, &x0, newton_err)),
        },
    };

    // A convergent iterate with a singular undamped KKT matrix means the
    // solution is not locally unique (unobservable configuration).
    let kkt = prob.kkt_matrix(&outcome.x, &outcome.lambda, 0.0, true);
    if rcond_from_lu(&kkt) < 1e-13 {
        return Err(classify_failure(
            &prob,
            &outcome.x,
            Error::Observability {
                detail: "singular KKT matrix at the solution".into(),
            },
        ));
    }

    Ok(EstimationResult {
        objective: prob.objective(&outcome.x),
        x: DecisionVector {
            values: outcome.x,
            layout: prob.layout.clone(),
        },
        multipliers: outcome.lambda,
        iterations: outcome.iterations,
        kkt_residual: outcome.residual,
    })
}

/// Constraint names in canonical order (defining constraints, then the
/// zero-injection blocks); matches the multiplier ordering.
pub fn constraint_labels(net: &Network, ms: &MeasurementSet) -> Result<Vec<String>> {
    Ok(Problem::new(net, ms)?.con_labels)
}

/// Pure evaluation of the KKT residuals at a candidate point:
/// (stationarity infinity-norm, feasibility infinity-norm).
pub fn kkt_residual(
    net: &Network,
    ms: &MeasurementSet,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<(f64, f64)> {
    let prob = Problem::new(net, ms)?;
    if x.len() != prob.n() || lambda.len() != prob.r() {
        return Err(Error::Shape {
            expected: format!("dimensions ({}, {})", prob.n(), prob.r()),
            actual: format!("({}, {})", x.len(), lambda.len()),
        });
    }
    Ok((
        inf_norm(&prob.stationarity(x, lambda)),
        inf_norm(&prob.constraints(x)),
    ))
}
