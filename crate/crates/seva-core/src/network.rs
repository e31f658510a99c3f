//! Network model: buses, branches, bus admittance matrix, operating-condition
//! scaling.
//!
//! All electrical quantities are per-unit on the system base; angles are
//! radians internally. Buses are renumbered to contiguous internal indices
//! `0..n`; the original case ids are kept for reporting.

use nalgebra::DMatrix;
use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone)]
pub struct Bus {
    /// External id from the case file.
    pub id: i64,
    /// Active demand (per-unit).
    pub demand_p: f64,
    /// Reactive demand (per-unit).
    pub demand_q: f64,
    /// Scheduled active generation (per-unit).
    pub gen_p: f64,
    /// Scheduled reactive generation (per-unit).
    pub gen_q: f64,
    /// Exact zero net injection (no load, no generation).
    pub is_zero_injection: bool,
    /// Voltage magnitude setpoint for generator buses (per-unit).
    pub v_setpoint: f64,
    pub kind: BusKind,
}

#[derive(Debug, Clone)]
pub struct Branch {
    /// External id of the from (tap-side) bus.
    pub from_bus: i64,
    /// External id of the to bus.
    pub to_bus: i64,
    /// Series resistance (per-unit).
    pub r: f64,
    /// Series reactance (per-unit).
    pub x: f64,
    /// Total line-charging susceptance (per-unit), split half per end.
    pub b_sh: f64,
    /// Off-nominal turns ratio on the from side; 1.0 when absent.
    pub tap: f64,
    pub in_service: bool,
}

impl Branch {
    /// Series admittance g + jb of the branch.
    pub fn series_admittance(&self) -> (f64, f64) {
        let d = self.r * self.r + self.x * self.x;
        (self.r / d, -self.x / d)
    }
}

/// Real and imaginary parts of the bus admittance matrix.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Off-diagonal adjacency: buses j with a nonzero (i, j) entry, sorted.
    pub neighbors: Vec<Vec<usize>>,
}

impl AdmittanceMatrix {
    pub fn dimension(&self) -> usize {
        self.g.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    /// Buses sorted by external id; position = internal index.
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    /// Internal endpoint indices aligned with `branches`.
    endpoints: Vec<(usize, usize)>,
    /// System power base (MVA).
    pub base_mva: f64,
    admittance: AdmittanceMatrix,
    ext2int: HashMap<i64, usize>,
    slack: usize,
}

impl Network {
    /// Validates the raw tables, renumbers buses, and caches the admittance
    /// matrix. Branch endpoints reference external bus ids.
    pub fn new(mut buses: Vec<Bus>, branches: Vec<Branch>, base_mva: f64) -> Result<Self> {
        if buses.is_empty() {
            return Err(Error::Validation("network has no buses".into()));
        }
        if base_mva <= 0.0 {
            return Err(Error::Validation(format!(
                "base MVA must be positive, got {base_mva}"
            )));
        }
        buses.sort_by_key(|b| b.id);

        let mut ext2int = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if ext2int.insert(bus.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            if bus.is_zero_injection
                && (bus.demand_p != 0.0
                    || bus.demand_q != 0.0
                    || bus.gen_p != 0.0
                    || bus.gen_q != 0.0)
            {
                return Err(Error::Validation(format!(
                    "bus {} flagged zero-injection but has nonzero demand or generation",
                    bus.id
                )));
            }
        }

        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [s] => *s,
            [] => return Err(Error::Validation("network has no slack bus".into())),
            _ => {
                return Err(Error::Validation(format!(
                    "network has {} slack buses, expected exactly one",
                    slacks.len()
                )))
            }
        };

        let mut endpoints = Vec::with_capacity(branches.len());
        for br in &branches {
            let f = *ext2int.get(&br.from_bus).ok_or_else(|| {
                Error::Validation(format!("branch references nonexistent bus {}", br.from_bus))
            })?;
            let t = *ext2int.get(&br.to_bus).ok_or_else(|| {
                Error::Validation(format!("branch references nonexistent bus {}", br.to_bus))
            })?;
            if f == t {
                return Err(Error::Validation(format!(
                    "branch {}-{} is a self-loop",
                    br.from_bus, br.to_bus
                )));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::Validation(format!(
                    "branch {}-{} has zero series impedance",
                    br.from_bus, br.to_bus
                )));
            }
            if br.tap <= 0.0 {
                return Err(Error::Validation(format!(
                    "branch {}-{} has non-positive tap {}",
                    br.from_bus, br.to_bus, br.tap
                )));
            }
            endpoints.push((f, t));
        }

        if !connected(buses.len(), &branches, &endpoints) {
            return Err(Error::Validation(
                "network graph is disconnected over in-service branches".into(),
            ));
        }

        let admittance = build_admittance_from(buses.len(), &branches, &endpoints)?;
        Ok(Self {
            buses,
            branches,
            endpoints,
            base_mva,
            admittance,
            ext2int,
            slack,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.admittance
    }

    /// Internal endpoint indices (from, to) of branch `k`.
    pub fn endpoints(&self, k: usize) -> (usize, usize) {
        self.endpoints[k]
    }

    /// Internal index of an external bus id.
    pub fn bus_index(&self, ext_id: i64) -> Result<usize> {
        self.ext2int
            .get(&ext_id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("unknown bus id {ext_id}")))
    }

    /// External id of an internal bus index.
    pub fn bus_id(&self, index: usize) -> i64 {
        self.buses[index].id
    }

    /// Net scheduled injection (gen - demand) at internal bus `i`.
    pub fn scheduled_injection(&self, i: usize) -> (f64, f64) {
        let b = &self.buses[i];
        (b.gen_p - b.demand_p, b.gen_q - b.demand_q)
    }

    /// In-service branch metered at `from_id` toward `to_id`, in either
    /// orientation. Returns the branch index and whether `from_id` is the
    /// branch's from (tap) side.
    pub fn find_branch(&self, from_id: i64, to_id: i64) -> Result<(usize, bool)> {
        let mut hit = None;
        for (k, br) in self.branches.iter().enumerate() {
            if !br.in_service {
                continue;
            }
            let fwd = br.from_bus == from_id && br.to_bus == to_id;
            let rev = br.from_bus == to_id && br.to_bus == from_id;
            if fwd || rev {
                if hit.is_some() {
                    return Err(Error::Validation(format!(
                        "ambiguous flow location {from_id}-{to_id}: parallel branches"
                    )));
                }
                hit = Some((k, fwd));
            }
        }
        hit.ok_or_else(|| {
            Error::Lookup(format!(
                "no in-service branch between buses {from_id} and {to_id}"
            ))
        })
    }

    /// Returns a copy with all demands multiplied by `factor`. Non-slack
    /// generation is scaled by the same factor; the slack absorbs the
    /// mismatch when the operating point is re-solved.
    pub fn scale_demands(&self, factor: f64) -> Result<Network> {
        if factor.is_nan() || factor <= 0.0 {
            return Err(Error::Domain(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let mut net = self.clone();
        for bus in &mut net.buses {
            bus.demand_p *= factor;
            bus.demand_q *= factor;
            if bus.kind != BusKind::Slack {
                bus.gen_p *= factor;
                bus.gen_q *= factor;
            }
        }
        Ok(net)
    }
}

fn connected(n: usize, branches: &[Branch], endpoints: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for (br, &(f, t)) in branches.iter().zip(endpoints) {
        if br.in_service {
            adj[f].push(t);
            adj[t].push(f);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

/// Standard pi-model assembly. Taps are applied on the from side: the
/// from-end series and charging terms are divided by tap^2 and the
/// off-diagonal entries by tap, which reduces to the symmetric textbook
/// matrix at tap = 1.
pub fn build_admittance(net: &Network) -> Result<AdmittanceMatrix> {
    build_admittance_from(net.buses.len(), &net.branches, &net.endpoints)
}

fn build_admittance_from(
    n: usize,
    branches: &[Branch],
    endpoints: &[(usize, usize)],
) -> Result<AdmittanceMatrix> {
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for (br, &(f, t)) in branches.iter().zip(endpoints) {
        if !br.in_service {
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::Validation(format!(
                "branch {}-{} has zero series impedance",
                br.from_bus, br.to_bus
            )));
        }
        let (gs, bs) = br.series_admittance();
        let a = br.tap;
        let half_charge = br.b_sh / 2.0;
        // Off-diagonals are equal in both orientations (no phase shifters).
        let g_off = -gs / a;
        let b_off = -bs / a;
        g[(f, t)] += g_off;
        g[(t, f)] += g_off;
        b[(f, t)] += b_off;
        b[(t, f)] += b_off;
        g[(f, f)] += gs / (a * a);
        b[(f, f)] += (bs + half_charge) / (a * a);
        g[(t, t)] += gs;
        b[(t, t)] += bs + half_charge;
    }
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (g[(i, j)] != 0.0 || b[(i, j)] != 0.0) {
                neighbors[i].push(j);
            }
        }
    }
    Ok(AdmittanceMatrix { g, b, neighbors })
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Plain PQ bus with no load or generation.
    pub fn bus(id: i64, kind: BusKind) -> Bus {
        Bus {
            id,
            demand_p: 0.0,
            demand_q: 0.0,
            gen_p: 0.0,
            gen_q: 0.0,
            is_zero_injection: false,
            v_setpoint: 1.0,
            kind,
        }
    }

    pub fn line(from: i64, to: i64, r: f64, x: f64, b_sh: f64) -> Branch {
        Branch {
            from_bus: from,
            to_bus: to,
            r,
            x,
            b_sh,
            tap: 1.0,
            in_service: true,
        }
    }

    /// Two buses joined by a single line; bus 1 is the slack.
    pub fn two_bus(r: f64, x: f64, b_sh: f64) -> Network {
        Network::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![line(1, 2, r, x, b_sh)],
            100.0,
        )
        .unwrap()
    }
}
