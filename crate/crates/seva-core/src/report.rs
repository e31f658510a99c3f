//! Report emission: run manifests, CSV/JSON bodies, and binary caches.
//!
//! Report bodies are plain strings built with deterministic float formatting,
//! so equal manifests reproduce byte-identical files. The manifest hash
//! covers the inputs and parameters but not the timestamp; `manifest.json`
//! additionally records the SHA-256 of every emitted body.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::robustness::{InvarianceVerdict, SvdReport};
use crate::scoring::ScoreTable;
use crate::sensitivity::FdReport;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything that determines the numeric content of a run's reports.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub case_path: String,
    pub case_sha256: String,
    pub meas_path: String,
    pub meas_sha256: String,
    /// Flat map of every parameter the run depends on.
    pub params: serde_json::Value,
    /// Hash over inputs and parameters (timestamp excluded): equal hashes
    /// mean byte-identical report bodies.
    pub manifest_hash: String,
    pub created_utc: String,
    /// SHA-256 of each emitted report body, keyed by file name.
    pub outputs: std::collections::BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        case_path: &str,
        case_text: &str,
        meas_path: &str,
        meas_text: &str,
        params: serde_json::Value,
        created_utc: String,
    ) -> Self {
        let case_sha256 = sha256_hex(case_text.as_bytes());
        let meas_sha256 = sha256_hex(meas_text.as_bytes());
        let tool_version = env!("CARGO_PKG_VERSION").to_string();
        let key = serde_json::json!({
            "tool_version": tool_version,
            "command": command,
            "case_sha256": case_sha256,
            "meas_sha256": meas_sha256,
            "params": params,
        });
        let manifest_hash = sha256_hex(key.to_string().as_bytes());
        RunManifest {
            tool_version,
            command: command.to_string(),
            case_path: case_path.to_string(),
            case_sha256,
            meas_path: meas_path.to_string(),
            meas_sha256,
            params,
            manifest_hash,
            created_utc,
            outputs: Default::default(),
        }
    }

    pub fn record_output(&mut self, name: &str, body: &str) {
        self.outputs
            .insert(name.to_string(), sha256_hex(body.as_bytes()));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Shortest round-trip float formatting; deterministic across runs.
fn fmt(v: f64) -> String {
    if v == 0.0 {
        // Avoid the -0.0 / 0.0 split.
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// scores.csv body: one row per measurement in canonical order.
pub fn score_table_csv(table: &ScoreTable) -> String {
    let mut out = String::from(
        "measurement_id,kind,location,stealth_input,raw_djdz,raw_colnorm,s_score,l_score,v_score,rank\n",
    );
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.label,
            row.kind,
            row.location,
            fmt(row.stealth_input),
            fmt(row.raw_dj_dz),
            fmt(row.raw_col_norm),
            fmt(row.s_score),
            fmt(row.l_score),
            fmt(row.v_score),
            row.rank
        ));
    }
    out
}

/// JSON mirror of the score table.
pub fn score_table_json(table: &ScoreTable) -> Result<String> {
    Ok(serde_json::to_string_pretty(table)?)
}

/// svd_report.csv body: rank, singular values and cumulative energies for
/// both matrices; blank cells where one spectrum is shorter.
pub fn svd_report_csv(report: &SvdReport, squared: bool) -> Result<String> {
    let ce_x = report.x.cumulative_energy(squared)?;
    let ce_j = report.j.cumulative_energy(squared)?;
    let rows = report
        .x
        .singular_values
        .len()
        .max(report.j.singular_values.len());
    let mut out = String::from("r,sigma_x,ce_x,sigma_j,ce_j\n");
    for r in 0..rows {
        let sx = report
            .x
            .singular_values
            .get(r)
            .map(|&v| fmt(v))
            .unwrap_or_default();
        let cx = ce_x.get(r).map(|&v| fmt(v)).unwrap_or_default();
        let sj = report
            .j
            .singular_values
            .get(r)
            .map(|&v| fmt(v))
            .unwrap_or_default();
        let cj = ce_j.get(r).map(|&v| fmt(v)).unwrap_or_default();
        out.push_str(&format!("{},{sx},{cx},{sj},{cj}\n", r + 1));
    }
    Ok(out)
}

pub fn verdict_json(verdict: &InvarianceVerdict) -> Result<String> {
    Ok(serde_json::to_string_pretty(verdict)?)
}

/// Matrix body with row labels and one column per measurement.
pub fn matrix_csv(matrix: &DMatrix<f64>, row_labels: &[String], col_labels: &[String]) -> String {
    let mut out = String::from("row");
    for c in col_labels {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (r, label) in row_labels.iter().enumerate() {
        out.push_str(label);
        for c in 0..matrix.ncols() {
            out.push(',');
            out.push_str(&fmt(matrix[(r, c)]));
        }
        out.push('\n');
    }
    out
}

/// Single-row vector body (objective sensitivities).
pub fn row_csv(values: &DVector<f64>, col_labels: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&col_labels.join(","));
    out.push('\n');
    out.push_str(&values.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(","));
    out.push('\n');
    out
}

/// Validation table for the finite-difference oracle.
pub fn fd_report_csv(report: &FdReport) -> String {
    let mut out = String::from(
        "measurement_id,dx_rel_err,dx_small_abs_err,dj_rel_err,dj_small_abs_err,solve_failed\n",
    );
    for e in &report.entries {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.label,
            fmt(e.dx_rel_err),
            fmt(e.dx_small_abs_err),
            fmt(e.dj_rel_err),
            fmt(e.dj_small_abs_err),
            e.solve_failed
        ));
    }
    out
}

/// On-disk binary cache keyed by content hashes. One file per key under the
/// cache directory; absent entries simply miss.
#[derive(Debug, Clone, Serialize)]
pub struct CacheKey {
    /// Artifact kind (e.g. "ensemble", "sensitivity").
    pub kind: String,
    pub case_sha256: String,
    pub config_sha256: String,
    /// Remaining discriminators (factors hash, seed, scale factor).
    pub extra: String,
}

impl CacheKey {
    fn file_name(&self) -> String {
        let digest = sha256_hex(
            format!(
                "{}|{}|{}|{}",
                self.kind, self.case_sha256, self.config_sha256, self.extra
            )
            .as_bytes(),
        );
        format!("{}-{digest}.bin", self.kind)
    }
}

pub fn cache_path(dir: &Path, key: &CacheKey) -> PathBuf {
    dir.join(key.file_name())
}

pub fn cache_store<T: Serialize>(dir: &Path, key: &CacheKey, value: &T) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let bytes = bincode::serialize(value)
        .map_err(|e| Error::Numeric(format!("cache serialization failed: {e}")))?;
    std::fs::write(cache_path(dir, key), bytes)?;
    Ok(())
}

pub fn cache_load<T: DeserializeOwned>(dir: &Path, key: &CacheKey) -> Result<Option<T>> {
    let path = cache_path(dir, key);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(path)?;
    match bincode::deserialize(&bytes) {
        Ok(v) => Ok(Some(v)),
        // A stale or truncated cache entry is a miss, not a failure.
        Err(_) => Ok(None),
    }
}
