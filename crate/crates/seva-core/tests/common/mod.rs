//! Shared fixtures: the bundled 4-bus and 39-bus cases.

use seva_core::matpower::parse_case;
use seva_core::measurement::MeasurementConfig;
use seva_core::network::Network;
use std::path::PathBuf;

pub fn case_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .canonicalize()
        .expect("cases directory")
}

pub fn read_case(name: &str) -> String {
    std::fs::read_to_string(case_dir().join(name)).expect(name)
}

pub fn four_bus() -> (Network, MeasurementConfig) {
    let net = parse_case(&read_case("case4.m")).expect("case4 parses");
    let cfg = MeasurementConfig::from_json(&read_case("meas4.json")).expect("meas4 parses");
    (net, cfg)
}

pub fn thirty_nine_bus() -> (Network, MeasurementConfig) {
    let net = parse_case(&read_case("case39.m")).expect("case39 parses");
    let cfg = MeasurementConfig::from_json(&read_case("meas39.json")).expect("meas39 parses");
    (net, cfg)
}
