//! Measurement configuration, measurement functions, and synthesis of
//! measurement sets from a power-flow ground truth.
//!
//! Measurements live in a fixed canonical order: the V block, then Pinj,
//! Qinj, Pflow, Qflow, each sorted by location (bus id, or lexicographic
//! branch pair). Zero-injection buses carry no measurements; they enter the
//! estimator as exact constraints.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::equations::{self, Coord, FlowEnd};
use crate::error::{Error, Result};
use crate::network::Network;
pub use crate::powerflow::StateVector;
use crate::powerflow::{self, PowerFlowOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementKind {
    V,
    Pinj,
    Qinj,
    Pflow,
    Qflow,
}

impl std::fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MeasurementKind::V => "V",
            MeasurementKind::Pinj => "Pinj",
            MeasurementKind::Qinj => "Qinj",
            MeasurementKind::Pflow => "Pflow",
            MeasurementKind::Qflow => "Qflow",
        };
        f.write_str(s)
    }
}

/// Where a measurement is taken: a bus, or a directed branch pair (i, j)
/// metered at the i end. External bus ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    Bus(i64),
    Branch(i64, i64),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Bus(i) => write!(f, "{i}"),
            Location::Branch(i, j) => write!(f, "{i}-{j}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightOverride {
    pub kind: MeasurementKind,
    pub at: Location,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSpec {
    #[serde(default = "default_v_weight")]
    pub default_v: f64,
    #[serde(default = "default_other_weight")]
    pub default_other: f64,
    #[serde(default)]
    pub overrides: Vec<WeightOverride>,
}

fn default_v_weight() -> f64 {
    1e4
}

fn default_other_weight() -> f64 {
    2.5e3
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec {
            default_v: default_v_weight(),
            default_other: default_other_weight(),
            overrides: Vec::new(),
        }
    }
}

/// Measurement placement and weights. Constructing or deserializing a config
/// normalizes it to canonical form (sorted, deduplicated).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct MeasurementConfig {
    v_buses: Vec<i64>,
    p_inj_buses: Vec<i64>,
    q_inj_buses: Vec<i64>,
    zero_inj_buses: Vec<i64>,
    p_flow_branches: Vec<(i64, i64)>,
    q_flow_branches: Vec<(i64, i64)>,
    weights: WeightSpec,
}

#[derive(Serialize, Deserialize)]
struct RawConfig {
    #[serde(default)]
    v: Vec<i64>,
    #[serde(default)]
    p_inj: Vec<i64>,
    #[serde(default)]
    q_inj: Vec<i64>,
    #[serde(default)]
    zero_inj: Vec<i64>,
    #[serde(default)]
    p_flow: Vec<(i64, i64)>,
    #[serde(default)]
    q_flow: Vec<(i64, i64)>,
    #[serde(default)]
    weights: WeightSpec,
}

impl TryFrom<RawConfig> for MeasurementConfig {
    type Error = Error;
    fn try_from(raw: RawConfig) -> Result<Self> {
        MeasurementConfig::new(
            raw.v,
            raw.p_inj,
            raw.q_inj,
            raw.zero_inj,
            raw.p_flow,
            raw.q_flow,
            raw.weights,
        )
    }
}

impl From<MeasurementConfig> for RawConfig {
    fn from(cfg: MeasurementConfig) -> RawConfig {
        RawConfig {
            v: cfg.v_buses,
            p_inj: cfg.p_inj_buses,
            q_inj: cfg.q_inj_buses,
            zero_inj: cfg.zero_inj_buses,
            p_flow: cfg.p_flow_branches,
            q_flow: cfg.q_flow_branches,
            weights: cfg.weights,
        }
    }
}

impl MeasurementConfig {
    pub fn new(
        mut v: Vec<i64>,
        mut p_inj: Vec<i64>,
        mut q_inj: Vec<i64>,
        mut zero_inj: Vec<i64>,
        mut p_flow: Vec<(i64, i64)>,
        mut q_flow: Vec<(i64, i64)>,
        weights: WeightSpec,
    ) -> Result<Self> {
        for list in [&mut v, &mut p_inj, &mut q_inj, &mut zero_inj] {
            list.sort_unstable();
            list.dedup();
        }
        for list in [&mut p_flow, &mut q_flow] {
            list.sort_unstable();
            list.dedup();
        }
        for z in &zero_inj {
            if p_inj.binary_search(z).is_ok() || q_inj.binary_search(z).is_ok() {
                return Err(Error::Validation(format!(
                    "bus {z} is declared zero-injection and also carries an injection measurement"
                )));
            }
        }
        if weights.default_v <= 0.0 || weights.default_other <= 0.0 {
            return Err(Error::Validation("default weights must be positive".into()));
        }
        for o in &weights.overrides {
            if o.weight <= 0.0 {
                return Err(Error::Validation(format!(
                    "override weight for {} {} must be positive",
                    o.kind, o.at
                )));
            }
        }
        Ok(MeasurementConfig {
            v_buses: v,
            p_inj_buses: p_inj,
            q_inj_buses: q_inj,
            zero_inj_buses: zero_inj,
            p_flow_branches: p_flow,
            q_flow_branches: q_flow,
            weights,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn v_buses(&self) -> &[i64] {
        &self.v_buses
    }
    pub fn p_inj_buses(&self) -> &[i64] {
        &self.p_inj_buses
    }
    pub fn q_inj_buses(&self) -> &[i64] {
        &self.q_inj_buses
    }
    pub fn zero_inj_buses(&self) -> &[i64] {
        &self.zero_inj_buses
    }
    pub fn p_flow_branches(&self) -> &[(i64, i64)] {
        &self.p_flow_branches
    }
    pub fn q_flow_branches(&self) -> &[(i64, i64)] {
        &self.q_flow_branches
    }

    /// Number of measurements.
    pub fn p(&self) -> usize {
        self.v_buses.len()
            + self.p_inj_buses.len()
            + self.q_inj_buses.len()
            + self.p_flow_branches.len()
            + self.q_flow_branches.len()
    }

    /// Measurement identities in canonical order.
    pub fn locations(&self) -> Vec<(MeasurementKind, Location)> {
        let mut out = Vec::with_capacity(self.p());
        out.extend(
            self.v_buses
                .iter()
                .map(|&b| (MeasurementKind::V, Location::Bus(b))),
        );
        out.extend(
            self.p_inj_buses
                .iter()
                .map(|&b| (MeasurementKind::Pinj, Location::Bus(b))),
        );
        out.extend(
            self.q_inj_buses
                .iter()
                .map(|&b| (MeasurementKind::Qinj, Location::Bus(b))),
        );
        out.extend(
            self.p_flow_branches
                .iter()
                .map(|&(i, j)| (MeasurementKind::Pflow, Location::Branch(i, j))),
        );
        out.extend(
            self.q_flow_branches
                .iter()
                .map(|&(i, j)| (MeasurementKind::Qflow, Location::Branch(i, j))),
        );
        out
    }

    pub fn weight_for(&self, kind: MeasurementKind, at: Location) -> f64 {
        for o in &self.weights.overrides {
            if o.kind == kind && o.at == at {
                return o.weight;
            }
        }
        match kind {
            MeasurementKind::V => self.weights.default_v,
            _ => self.weights.default_other,
        }
    }

    /// Checks the configuration against a concrete network: referenced buses
    /// and branches must exist, flow branches must be in service, and
    /// declared zero-injection buses must actually have zero injection.
    pub fn validate(&self, net: &Network) -> Result<()> {
        for &b in self
            .v_buses
            .iter()
            .chain(&self.p_inj_buses)
            .chain(&self.q_inj_buses)
        {
            net.bus_index(b)?;
        }
        for &z in &self.zero_inj_buses {
            let i = net.bus_index(z)?;
            if !net.buses[i].is_zero_injection {
                return Err(Error::Validation(format!(
                    "bus {z} is declared zero-injection but the case has load or generation there"
                )));
            }
        }
        for &(i, j) in self.p_flow_branches.iter().chain(&self.q_flow_branches) {
            net.find_branch(i, j)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub location: Location,
    /// Measured value z (per-unit).
    pub value: f64,
    /// Weight w (1/sigma^2 semantics).
    pub weight: f64,
}

impl Measurement {
    pub fn label(&self) -> String {
        format!("{}@{}", self.kind, self.location)
    }
}

/// An ordered measurement list (canonical index = position) plus the
/// configuration it was built from and, when synthesized, the ground truth.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
    pub config: MeasurementConfig,
    pub truth: Option<StateVector>,
}

impl MeasurementSet {
    /// Builds a set with explicit values, in canonical order.
    pub fn from_values(config: MeasurementConfig, values: &[f64]) -> Result<Self> {
        if values.len() != config.p() {
            return Err(Error::Shape {
                expected: format!("{} measurement values", config.p()),
                actual: format!("{}", values.len()),
            });
        }
        let measurements = config
            .locations()
            .into_iter()
            .zip(values)
            .map(|((kind, location), &value)| Measurement {
                kind,
                location,
                value,
                weight: config.weight_for(kind, location),
            })
            .collect();
        Ok(MeasurementSet {
            measurements,
            config,
            truth: None,
        })
    }

    pub fn p(&self) -> usize {
        self.measurements.len()
    }

    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.measurements.iter().map(|m| m.value))
    }

    pub fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.measurements.iter().map(|m| m.weight))
    }

    pub fn labels(&self) -> Vec<String> {
        self.measurements.iter().map(|m| m.label()).collect()
    }

    /// Canonical index of a measurement identity.
    pub fn index_of(&self, kind: MeasurementKind, location: Location) -> Option<usize> {
        self.measurements
            .iter()
            .position(|m| m.kind == kind && m.location == location)
    }

    /// Copy with measurement `idx` replaced by `value`.
    pub fn with_value(&self, idx: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.measurements[idx].value = value;
        out
    }

    /// Copy with the weight of measurement `idx` replaced.
    pub fn with_weight(&self, idx: usize, weight: f64) -> Self {
        let mut out = self.clone();
        out.measurements[idx].weight = weight;
        out
    }

    /// Copy with an exact duplicate of measurement `idx` inserted next to it
    /// (a consistent redundant meter).
    pub fn duplicate_measurement(&self, idx: usize) -> Self {
        let mut out = self.clone();
        let dup = out.measurements[idx].clone();
        out.measurements.insert(idx + 1, dup);
        out
    }
}

/// One resolved measurement target with internal indices.
#[derive(Debug, Clone)]
pub(crate) enum Target {
    V(usize),
    InjP(usize),
    InjQ(usize),
    Flow { end: FlowEnd, reactive: bool },
}

pub(crate) fn resolve_target(
    net: &Network,
    kind: MeasurementKind,
    location: Location,
) -> Result<Target> {
    match (kind, location) {
        (MeasurementKind::V, Location::Bus(b)) => Ok(Target::V(net.bus_index(b)?)),
        (MeasurementKind::Pinj, Location::Bus(b)) => Ok(Target::InjP(net.bus_index(b)?)),
        (MeasurementKind::Qinj, Location::Bus(b)) => Ok(Target::InjQ(net.bus_index(b)?)),
        (MeasurementKind::Pflow, Location::Branch(i, j))
        | (MeasurementKind::Qflow, Location::Branch(i, j)) => {
            let (k, metered_from) = net.find_branch(i, j)?;
            let end = FlowEnd::new(&net.branches[k], net.endpoints(k), metered_from);
            Ok(Target::Flow {
                end,
                reactive: kind == MeasurementKind::Qflow,
            })
        }
        (k, l) => Err(Error::Lookup(format!(
            "measurement kind {k} cannot be located at {l}"
        ))),
    }
}

pub(crate) fn eval_target(target: &Target, v: &[f64], theta: &[f64], net: &Network) -> f64 {
    let y = net.admittance();
    match target {
        Target::V(i) => v[*i],
        Target::InjP(i) => equations::injection_p(y, v, theta, *i),
        Target::InjQ(i) => equations::injection_q(y, v, theta, *i),
        Target::Flow {
            end,
            reactive: false,
        } => end.flow_p(v, theta),
        Target::Flow {
            end,
            reactive: true,
        } => end.flow_q(v, theta),
    }
}

pub(crate) fn target_grad(
    target: &Target,
    v: &[f64],
    theta: &[f64],
    net: &Network,
) -> equations::LocalGradient {
    let y = net.admittance();
    match target {
        Target::V(i) => equations::LocalGradient {
            coords: vec![Coord::V(*i)],
            values: vec![1.0],
        },
        Target::InjP(i) => equations::injection_p_grad(y, v, theta, *i),
        Target::InjQ(i) => equations::injection_q_grad(y, v, theta, *i),
        Target::Flow {
            end,
            reactive: false,
        } => end.flow_p_grad(v, theta),
        Target::Flow {
            end,
            reactive: true,
        } => end.flow_q_grad(v, theta),
    }
}

fn state_slices(state: &StateVector) -> (Vec<f64>, Vec<f64>) {
    (
        state.v.iter().copied().collect(),
        state.theta.iter().copied().collect(),
    )
}

/// Evaluates the measurement functions h(state) in canonical order.
pub fn measurement_function(
    state: &StateVector,
    net: &Network,
    cfg: &MeasurementConfig,
) -> Result<DVector<f64>> {
    if state.n() != net.n_buses() {
        return Err(Error::Shape {
            expected: format!("state of dimension {}", net.n_buses()),
            actual: format!("{}", state.n()),
        });
    }
    let (v, theta) = state_slices(state);
    let mut h = DVector::zeros(cfg.p());
    for (row, (kind, location)) in cfg.locations().into_iter().enumerate() {
        let target = resolve_target(net, kind, location)?;
        h[row] = eval_target(&target, &v, &theta, net);
    }
    Ok(h)
}

/// Jacobian of h with respect to all (v, theta) coordinates, p x 2n.
/// Column order: v_0..v_{n-1}, theta_0..theta_{n-1}.
pub fn measurement_jacobian(
    state: &StateVector,
    net: &Network,
    cfg: &MeasurementConfig,
) -> Result<DMatrix<f64>> {
    let n = net.n_buses();
    let (v, theta) = state_slices(state);
    let mut jac = DMatrix::zeros(cfg.p(), 2 * n);
    for (row, (kind, location)) in cfg.locations().into_iter().enumerate() {
        let target = resolve_target(net, kind, location)?;
        let grad = target_grad(&target, &v, &theta, net);
        for (coord, val) in grad.coords.iter().zip(&grad.values) {
            jac[(row, coord.flat(n))] += val;
        }
    }
    Ok(jac)
}

/// Solves the power flow for `net` and synthesizes measurements
/// z = h(truth) + eps, with eps ~ Normal(0, noise_sigma_scale / sqrt(w))
/// drawn from a deterministic seeded generator in canonical order.
/// `noise_sigma_scale = 0` yields exact, consistent measurements.
pub fn synthesize_measurements(
    net: &Network,
    cfg: &MeasurementConfig,
    noise_sigma_scale: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if noise_sigma_scale < 0.0 {
        return Err(Error::Domain(format!(
            "noise_sigma_scale must be non-negative, got {noise_sigma_scale}"
        )));
    }
    cfg.validate(net)?;
    let sol = powerflow::solve_power_flow(
        net,
        &powerflow::start_state(net),
        PowerFlowOptions::default(),
    )?;
    let h = measurement_function(&sol.state, net, cfg)?;
    let mut ms = MeasurementSet::from_values(cfg.clone(), h.as_slice())?;
    if noise_sigma_scale > 0.0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for m in &mut ms.measurements {
            let sigma = noise_sigma_scale / m.weight.sqrt();
            m.value += sigma * normal.sample(&mut rng);
        }
    }
    ms.truth = Some(sol.state);
    Ok(ms)
}

/// Redundancy bookkeeping for a configuration on a network.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RedundancySummary {
    /// Number of measurements p.
    pub p: usize,
    /// Number of states 2|N| - 1.
    pub n_states: usize,
    /// Zero-injection constraint count (2 per declared bus).
    pub n_zero_constraints: usize,
    /// Measurement-defining constraint count (p minus the V block).
    pub n_defining_constraints: usize,
    /// (p + zero constraints) / states.
    pub redundancy_ratio: f64,
    /// Chi-square degrees of freedom: p + zero constraints - states.
    pub dof: i64,
}

pub fn redundancy_summary(net: &Network, cfg: &MeasurementConfig) -> Result<RedundancySummary> {
    cfg.validate(net)?;
    let p = cfg.p();
    let n_states = 2 * net.n_buses() - 1;
    let n_zero = 2 * cfg.zero_inj_buses().len();
    Ok(RedundancySummary {
        p,
        n_states,
        n_zero_constraints: n_zero,
        n_defining_constraints: p - cfg.v_buses().len(),
        redundancy_ratio: (p + n_zero) as f64 / n_states as f64,
        dof: (p + n_zero) as i64 - n_states as i64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::testing::{bus, line, two_bus};
    use crate::network::{BusKind, Network};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;

    fn simple_cfg() -> MeasurementConfig {
        MeasurementConfig::new(
            vec![2, 1],
            vec![2],
            vec![2],
            vec![],
            vec![(1, 2)],
            vec![(1, 2), (2, 1)],
            WeightSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn canonical_order_and_bijection() {
        let cfg = simple_cfg();
        let locs = cfg.locations();
        assert_eq!(locs[0], (MeasurementKind::V, Location::Bus(1)));
        assert_eq!(locs[1], (MeasurementKind::V, Location::Bus(2)));
        assert_eq!(locs[4], (MeasurementKind::Pflow, Location::Branch(1, 2)));
        let ms = MeasurementSet::from_values(cfg, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        for (idx, m) in ms.measurements.iter().enumerate() {
            assert_eq!(ms.index_of(m.kind, m.location), Some(idx));
        }
    }

    #[test]
    fn zero_injection_overlap_rejected() {
        let err = MeasurementConfig::new(
            vec![1],
            vec![2],
            vec![],
            vec![2],
            vec![],
            vec![],
            WeightSpec::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("zero-injection"), "{err}");
    }

    #[test]
    fn weight_overrides_apply() {
        let mut weights = WeightSpec::default();
        weights.overrides.push(WeightOverride {
            kind: MeasurementKind::Pflow,
            at: Location::Branch(1, 2),
            weight: 123.0,
        });
        let cfg =
            MeasurementConfig::new(vec![1], vec![], vec![], vec![], vec![(1, 2)], vec![], weights)
                .unwrap();
        assert_eq!(cfg.weight_for(MeasurementKind::V, Location::Bus(1)), 1e4);
        assert_eq!(
            cfg.weight_for(MeasurementKind::Pflow, Location::Branch(1, 2)),
            123.0
        );
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "v": [1, 2],
            "p_inj": [1],
            "q_inj": [1],
            "zero_inj": [],
            "p_flow": [[1, 2]],
            "q_flow": [],
            "weights": {"default_v": 10000.0, "default_other": 2500.0, "overrides": []}
        }"#;
        let cfg = MeasurementConfig::from_json(text).unwrap();
        assert_eq!(cfg.p(), 5);
        let round = serde_json::to_string(&cfg).unwrap();
        let cfg2 = MeasurementConfig::from_json(&round).unwrap();
        assert_eq!(cfg2.p(), 5);
        assert_eq!(cfg2.locations(), cfg.locations());
    }

    #[test]
    fn flat_state_yields_trivial_measurements() {
        let net = two_bus(0.01, 0.08, 0.0);
        let cfg = simple_cfg();
        let h = measurement_function(&StateVector::flat(2), &net, &cfg).unwrap();
        assert_abs_diff_eq!(h[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[1], 1.0, epsilon = 1e-12);
        for k in 2..h.len() {
            assert_abs_diff_eq!(h[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lossless_flow_measurement_value() {
        let net = two_bus(0.0, 0.1, 0.0);
        let cfg = MeasurementConfig::new(
            vec![],
            vec![],
            vec![],
            vec![],
            vec![(1, 2)],
            vec![],
            WeightSpec::default(),
        )
        .unwrap();
        let state = StateVector {
            v: nalgebra::dvector![1.0, 1.0],
            theta: nalgebra::dvector![0.0, -0.1],
        };
        let h = measurement_function(&state, &net, &cfg).unwrap();
        assert_relative_eq!(h[0], 10.0 * 0.1f64.sin(), epsilon = 1e-10);
    }

    #[test]
    fn unknown_location_is_lookup_error() {
        let net = two_bus(0.0, 0.1, 0.0);
        let cfg = MeasurementConfig::new(
            vec![9],
            vec![],
            vec![],
            vec![],
            vec![],
            vec![],
            WeightSpec::default(),
        )
        .unwrap();
        match measurement_function(&StateVector::flat(2), &net, &cfg) {
            Err(Error::Lookup(msg)) => assert!(msg.contains('9')),
            other => panic!("expected lookup error, got {other:?}"),
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_on_random_states() {
        let net = Network::new(
            vec![
                bus(1, BusKind::Slack),
                bus(2, BusKind::Pq),
                bus(3, BusKind::Pq),
            ],
            vec![
                line(1, 2, 0.01, 0.06, 0.03),
                line(2, 3, 0.02, 0.09, 0.02),
                line(1, 3, 0.015, 0.08, 0.04),
            ],
            100.0,
        )
        .unwrap();
        let cfg = MeasurementConfig::new(
            vec![1, 2, 3],
            vec![1, 2],
            vec![2, 3],
            vec![],
            vec![(1, 2), (3, 2)],
            vec![(2, 3), (3, 1)],
            WeightSpec::default(),
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let state = StateVector {
                v: DVector::from_fn(3, |_, _| rng.gen_range(0.9..1.1)),
                theta: DVector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5)),
            };
            let jac = measurement_jacobian(&state, &net, &cfg).unwrap();
            let h0 = measurement_function(&state, &net, &cfg).unwrap();
            let step = 1e-6;
            for c in 0..6 {
                let mut plus = state.clone();
                let mut minus = state.clone();
                if c < 3 {
                    plus.v[c] += step;
                    minus.v[c] -= step;
                } else {
                    plus.theta[c - 3] += step;
                    minus.theta[c - 3] -= step;
                }
                let hp = measurement_function(&plus, &net, &cfg).unwrap();
                let hm = measurement_function(&minus, &net, &cfg).unwrap();
                for row in 0..h0.len() {
                    let fd = (hp[row] - hm[row]) / (2.0 * step);
                    assert_relative_eq!(jac[(row, c)], fd, max_relative = 1e-6, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_noiseless_exact() {
        let mut b2 = bus(2, BusKind::Pq);
        b2.demand_p = 0.6;
        b2.demand_q = 0.15;
        let net = Network::new(
            vec![bus(1, BusKind::Slack), b2],
            vec![line(1, 2, 0.01, 0.08, 0.02)],
            100.0,
        )
        .unwrap();
        let cfg = simple_cfg();

        let exact = synthesize_measurements(&net, &cfg, 0.0, 1).unwrap();
        let truth = exact.truth.as_ref().unwrap();
        let h = measurement_function(truth, &net, &cfg).unwrap();
        assert_abs_diff_eq!((exact.values() - h).abs().max(), 0.0, epsilon = 0.0);

        let a = synthesize_measurements(&net, &cfg, 1.0, 42).unwrap();
        let b = synthesize_measurements(&net, &cfg, 1.0, 42).unwrap();
        assert_eq!(a.values(), b.values());
        let c = synthesize_measurements(&net, &cfg, 1.0, 43).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn noise_standard_deviation_tracks_weight() {
        // sigma = noise_sigma_scale / sqrt(w) = 1 / sqrt(1e4) = 0.01.
        let net = two_bus(0.0, 0.1, 0.0);
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
        let truth =
            powerflow::solve_power_flow(&net, &powerflow::start_state(&net), Default::default())
                .unwrap()
                .state;
        let h = measurement_function(&truth, &net, &cfg).unwrap();
        let n = 10_000;
        let mut sum_sq = 0.0;
        for seed in 0..n {
            let ms = synthesize_measurements(&net, &cfg, 1.0, seed).unwrap();
            let e = ms.values()[0] - h[0];
            sum_sq += e * e;
        }
        let sample_std = (sum_sq / n as f64).sqrt();
        assert!(
            (sample_std - 0.01).abs() / 0.01 < 0.05,
            "sample std {sample_std} deviates more than 5% from 0.01"
        );
    }

    #[test]
    fn injections_equal_sum_of_metered_flows() {
        // Cross-check of the two evaluation paths: bus injection via the
        // admittance matrix vs the sum of branch flows metered at the bus.
        let mut b2 = bus(2, BusKind::Pq);
        b2.demand_p = 0.5;
        b2.demand_q = 0.1;
        let mut b3 = bus(3, BusKind::Pq);
        b3.demand_p = 0.4;
        b3.demand_q = 0.05;
        let mut tapped = line(1, 3, 0.012, 0.07, 0.03);
        tapped.tap = 1.04;
        let net = Network::new(
            vec![bus(1, BusKind::Slack), b2, b3],
            vec![
                line(1, 2, 0.01, 0.06, 0.02),
                line(2, 3, 0.02, 0.09, 0.04),
                tapped,
            ],
            100.0,
        )
        .unwrap();
        let state =
            powerflow::solve_power_flow(&net, &powerflow::start_state(&net), Default::default())
                .unwrap()
                .state;
        let cfg = MeasurementConfig::new(
            vec![],
            vec![1, 2, 3],
            vec![1, 2, 3],
            vec![],
            vec![(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)],
            vec![(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)],
            WeightSpec::default(),
        )
        .unwrap();
        let ms = MeasurementSet::from_values(
            cfg.clone(),
            measurement_function(&state, &net, &cfg).unwrap().as_slice(),
        )
        .unwrap();
        for (bus_id, incident) in [
            (1i64, vec![(1, 2), (1, 3)]),
            (2, vec![(2, 1), (2, 3)]),
            (3, vec![(3, 1), (3, 2)]),
        ] {
            let p_inj = ms.values()[ms
                .index_of(MeasurementKind::Pinj, Location::Bus(bus_id))
                .unwrap()];
            let q_inj = ms.values()[ms
                .index_of(MeasurementKind::Qinj, Location::Bus(bus_id))
                .unwrap()];
            let p_sum: f64 = incident
                .iter()
                .map(|&(i, j)| {
                    ms.values()[ms
                        .index_of(MeasurementKind::Pflow, Location::Branch(i, j))
                        .unwrap()]
                })
                .sum();
            let q_sum: f64 = incident
                .iter()
                .map(|&(i, j)| {
                    ms.values()[ms
                        .index_of(MeasurementKind::Qflow, Location::Branch(i, j))
                        .unwrap()]
                })
                .sum();
            assert_abs_diff_eq!(p_inj, p_sum, epsilon = 1e-9);
            assert_abs_diff_eq!(q_inj, q_sum, epsilon = 1e-9);
        }
    }

    #[test]
    fn redundancy_arithmetic() {
        let mut b2 = bus(2, BusKind::Pq);
        b2.is_zero_injection = true;
        let mut b3 = bus(3, BusKind::Pq);
        b3.demand_p = 0.4;
        let net = Network::new(
            vec![bus(1, BusKind::Slack), b2, b3],
            vec![line(1, 2, 0.01, 0.06, 0.0), line(2, 3, 0.02, 0.09, 0.0)],
            100.0,
        )
        .unwrap();
        let cfg = MeasurementConfig::new(
            vec![1],
            vec![1],
            vec![1],
            vec![2],
            vec![(2, 3)],
            vec![],
            WeightSpec::default(),
        )
        .unwrap();
        let s = redundancy_summary(&net, &cfg).unwrap();
        assert_eq!(s.p, 4);
        assert_eq!(s.n_states, 5);
        assert_eq!(s.n_zero_constraints, 2);
        assert_eq!(s.dof, 1);
        assert_abs_diff_eq!(s.redundancy_ratio, 6.0 / 5.0, epsilon = 1e-12);
    }
}
