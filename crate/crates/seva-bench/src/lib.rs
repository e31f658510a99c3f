//! Fixture loading shared by the benchmarks.

use seva_core::matpower::parse_case;
use seva_core::measurement::MeasurementConfig;
use seva_core::network::Network;
use std::path::PathBuf;

pub fn load(case: &str, meas: &str) -> (Network, MeasurementConfig) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases");
    let net = parse_case(&std::fs::read_to_string(dir.join(case)).unwrap()).unwrap();
    let cfg =
        MeasurementConfig::from_json(&std::fs::read_to_string(dir.join(meas)).unwrap()).unwrap();
    (net, cfg)
}
