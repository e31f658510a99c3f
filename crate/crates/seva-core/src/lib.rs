//! State-estimation vulnerability analysis for electric power grids.
//!
//! This crate quantifies how exposed each measurement of a power-system
//! state estimator is to false data injection: it solves the
//! equality-constrained weighted-least-squares estimation problem, computes
//! first-order sensitivities of the objective and of every estimate with
//! respect to every measurement through the KKT system, converts those
//! sensitivities into stealthiness/leverage/vulnerability scores, and checks
//! whether the scores persist across operating conditions via an SVD of the
//! stacked sensitivity rows.
//!
//! Pipeline: [`network`] (case parsing, admittance) → [`powerflow`]
//! (ground-truth operating point) → [`measurement`] (measurement functions
//! and synthesis) → [`estimator`] (constrained WLS / KKT point) →
//! [`sensitivity`] (KKT perturbation solves) → [`scoring`] (per-measurement
//! scores) → [`robustness`] (condition sweep + SVD) → [`report`]
//! (manifests, CSV/JSON emitters, on-disk caches).

pub mod bdd;
pub mod equations;
pub mod error;
pub mod estimator;
pub mod matpower;
pub mod measurement;
pub mod network;
pub mod powerflow;
pub mod report;
pub mod robustness;
pub mod scoring;
pub mod sensitivity;

pub use error::{Error, Result};
pub use estimator::{EstimationResult, SolverOptions};
pub use measurement::{
    Measurement, MeasurementConfig, MeasurementKind, MeasurementSet, StateVector,
};
pub use network::{AdmittanceMatrix, Branch, Bus, BusKind, Network};
pub use scoring::{ScoreParams, ScoreTable};
pub use sensitivity::{KktBlocks, SensitivityResult};
