//! Per-measurement vulnerability scores.
//!
//! The stealth score maps the normalized objective sensitivity |z dJ/dz|
//! through a decaying exponential and an S-shaped transfer, so measurements
//! that barely move the detection statistic score near 1. The leverage score
//! applies the same transfer to the normalized column norms of dx/dz. The
//! vulnerability score is their convex combination.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, EstimationResult, SolverOptions};
use crate::measurement::{MeasurementKind, MeasurementSet};
use crate::network::Network;
use crate::sensitivity::{self, SensitivityResult};

/// Norm applied to the dx/dz columns for the leverage score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L2,
    LInf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Base of the stealth decay, > 0. At the most sensitive measurement the
    /// stealth transfer argument is 1/gamma.
    pub gamma: f64,
    /// Convex weight of the stealth score in the vulnerability score.
    pub alpha: f64,
    /// S-shape exponent of the stealth transfer.
    pub beta_s: f64,
    /// S-shape exponent of the leverage transfer.
    pub beta_l: f64,
    pub norm_kind: NormKind,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams {
            gamma: 10.0,
            alpha: 0.3,
            beta_s: 1.0,
            beta_l: 1.5,
            norm_kind: NormKind::L2,
        }
    }
}

impl ScoreParams {
    fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::Domain(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if [self.beta_s, self.beta_l]
            .iter()
            .any(|b| b.is_nan() || *b <= 0.0)
        {
            return Err(Error::Domain("beta exponents must be positive".into()));
        }
        Ok(())
    }
}

/// Objective sensitivities this small in |z dJ/dz| terms are roundoff from
/// consistent data, not signal; the stealth score is undefined there.
pub const DEGENERATE_STEALTH_LIMIT: f64 = 1e-6;

/// Default measurement perturbation for the second-order stealth surrogate.
pub const SURROGATE_STEP: f64 = 1e-4;

/// S-shaped transfer on [0, 1]: 0 below 0, 1 above 1, and
/// xi^beta / (xi^beta + (1 - xi)^beta) in between. beta = 1 is the identity
/// on [0, 1]; the midpoint is always 1/2.
pub fn s_shape(xi: f64, beta: f64) -> Result<f64> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    if xi.is_nan() {
        return Err(Error::Domain("s_shape input is NaN".into()));
    }
    if xi <= 0.0 {
        return Ok(0.0);
    }
    if xi >= 1.0 {
        return Ok(1.0);
    }
    let a = xi.powf(beta);
    let b = (1.0 - xi).powf(beta);
    Ok(a / (a + b))
}

/// Stealth scores from precomputed inputs (|z dJ/dz| or a surrogate).
pub fn s_score_from_inputs(inputs: &[f64], params: &ScoreParams) -> Result<Vec<f64>> {
    params.validate()?;
    if inputs.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("stealth input is NaN".into()));
    }
    let max = inputs.iter().fold(0.0f64, |a, &b| a.max(b));
    if max <= DEGENERATE_STEALTH_LIMIT {
        return Err(Error::DegenerateResiduals);
    }
    inputs
        .iter()
        .map(|&u| s_shape(params.gamma.powf(-u / max), params.beta_s))
        .collect()
}

/// Stealth scores from the first-order objective sensitivities.
pub fn s_score(dj_dz: &DVector<f64>, z: &DVector<f64>, params: &ScoreParams) -> Result<Vec<f64>> {
    if dj_dz.len() != z.len() {
        return Err(Error::Shape {
            expected: format!("{} objective sensitivities", z.len()),
            actual: format!("{}", dj_dz.len()),
        });
    }
    let inputs: Vec<f64> = dj_dz
        .iter()
        .zip(z.iter())
        .map(|(d, z)| (z * d).abs())
        .collect();
    s_score_from_inputs(&inputs, params)
}

/// Leverage scores from the variable-sensitivity columns, normalized by the
/// largest column norm so the transfer's [0, 1] domain is honored.
pub fn l_score(dx_dz: &DMatrix<f64>, params: &ScoreParams) -> Result<Vec<f64>> {
    params.validate()?;
    let norms: Vec<f64> = (0..dx_dz.ncols())
        .map(|c| {
            let col = dx_dz.column(c);
            match params.norm_kind {
                NormKind::L2 => col.norm(),
                NormKind::LInf => col.abs().max(),
            }
        })
        .collect();
    if norms.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(
            "variable sensitivities are not finite".into(),
        ));
    }
    let max = norms.iter().fold(0.0f64, |a, &b| a.max(b));
    if max == 0.0 {
        return Err(Error::Domain(
            "every column of dx/dz is zero; leverage scores undefined".into(),
        ));
    }
    norms
        .iter()
        .map(|&n| s_shape(n / max, params.beta_l))
        .collect()
}

/// Elementwise convex combination alpha*s + (1-alpha)*l.
pub fn v_score(s: &[f64], l: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if s.len() != l.len() {
        return Err(Error::Shape {
            expected: format!("{} leverage scores", s.len()),
            actual: format!("{}", l.len()),
        });
    }
    Ok(s.iter()
        .zip(l)
        .map(|(&s, &l)| alpha * s + (1.0 - alpha) * l)
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    /// Canonical measurement index.
    pub index: usize,
    pub label: String,
    pub kind: MeasurementKind,
    pub location: String,
    /// |z dJ/dz|, or the second-order surrogate in surrogate mode.
    pub stealth_input: f64,
    pub raw_dj_dz: f64,
    /// Column norm of dx/dz for this measurement.
    pub raw_col_norm: f64,
    pub s_score: f64,
    pub l_score: f64,
    pub v_score: f64,
    /// 1-based position in descending v-score order.
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreTable {
    /// Rows in canonical measurement order.
    pub rows: Vec<ScoreRow>,
    /// Stealth inputs came from the second-order surrogate (consistent data).
    pub surrogate_mode: bool,
    pub params: ScoreParams,
}

impl ScoreTable {
    /// Measurement indices in descending v-score order, ties broken by
    /// canonical index.
    pub fn ranked_indices(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| {
            self.rows[b]
                .v_score
                .total_cmp(&self.rows[a].v_score)
                .then(a.cmp(&b))
        });
        order
    }
}

/// Descending ranking and the vulnerable set {l : v_l >= threshold}.
pub fn rank_measurements(table: &ScoreTable, threshold: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let ranked = table.ranked_indices();
    let vulnerable = ranked
        .iter()
        .copied()
        .filter(|&i| table.rows[i].v_score >= threshold)
        .collect();
    Ok((ranked, vulnerable))
}

/// Second-order stealth surrogate for consistent data: z^2 d2J/dz2 per
/// measurement, with the curvature taken by central second differences of
/// the re-solved objective.
pub fn stealth_surrogate_inputs(
    net: &Network,
    ms: &MeasurementSet,
    est: &EstimationResult,
    opts: &SolverOptions,
    step: f64,
) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Domain(format!(
            "surrogate step must be positive, got {step}"
        )));
    }
    let mut resolve_opts = opts.clone();
    resolve_opts.warm_start = Some(estimator::WarmStart {
        x: est.x.values.clone(),
        lambda: est.multipliers.clone(),
    });
    let mut inputs = Vec::with_capacity(ms.p());
    for l in 0..ms.p() {
        let z0 = ms.values()[l];
        let jp =
            estimator::estimate_state(net, &ms.with_value(l, z0 + step), &resolve_opts)?.objective;
        let jm =
            estimator::estimate_state(net, &ms.with_value(l, z0 - step), &resolve_opts)?.objective;
        let curvature = ((jp - 2.0 * est.objective + jm) / (step * step)).max(0.0);
        inputs.push(z0 * z0 * curvature);
    }
    Ok(inputs)
}

/// Full per-measurement scoring pass: assemble the KKT blocks, solve for the
/// sensitivities, and evaluate the three scores for every measurement.
///
/// With consistent data the first-order stealth inputs vanish;
/// `surrogate_on_degenerate` switches to the second-order surrogate in that
/// case instead of failing.
pub fn run_algorithm_1(
    net: &Network,
    ms: &MeasurementSet,
    est: &EstimationResult,
    params: &ScoreParams,
    opts: &SolverOptions,
    surrogate_on_degenerate: bool,
) -> Result<(SensitivityResult, ScoreTable)> {
    let blocks = sensitivity::assemble_kkt_blocks(net, ms, est)?;
    let sens = sensitivity::measurement_sensitivities(&blocks)?;
    let table =
        score_table_from_sensitivities(net, ms, est, &sens, params, opts, surrogate_on_degenerate)?;
    Ok((sens, table))
}

/// Scoring stage of the per-measurement pass, reusing already-computed
/// sensitivities (e.g. loaded from a cache).
pub fn score_table_from_sensitivities(
    net: &Network,
    ms: &MeasurementSet,
    est: &EstimationResult,
    sens: &SensitivityResult,
    params: &ScoreParams,
    opts: &SolverOptions,
    surrogate_on_degenerate: bool,
) -> Result<ScoreTable> {
    params.validate()?;
    if sens.dx_dz.ncols() != ms.p() {
        return Err(Error::Shape {
            expected: format!("sensitivities for {} measurements", ms.p()),
            actual: format!("{}", sens.dx_dz.ncols()),
        });
    }

    let z = ms.values();
    let first_order: Vec<f64> = sens
        .dj_dz
        .iter()
        .zip(z.iter())
        .map(|(d, z)| (z * d).abs())
        .collect();
    let max_first = first_order.iter().fold(0.0f64, |a, &b| a.max(b));

    let (inputs, surrogate_mode) = if max_first <= DEGENERATE_STEALTH_LIMIT {
        if !surrogate_on_degenerate {
            return Err(Error::DegenerateResiduals);
        }
        (
            stealth_surrogate_inputs(net, ms, est, opts, SURROGATE_STEP)?,
            true,
        )
    } else {
        (first_order, false)
    };

    let s = s_score_from_inputs(&inputs, params)?;
    let l = l_score(&sens.dx_dz, params)?;
    let v = v_score(&s, &l, params.alpha)?;

    let mut rows: Vec<ScoreRow> = (0..ms.p())
        .map(|i| {
            let m = &ms.measurements[i];
            ScoreRow {
                index: i,
                label: m.label(),
                kind: m.kind,
                location: m.location.to_string(),
                stealth_input: inputs[i],
                raw_dj_dz: sens.dj_dz[i],
                raw_col_norm: match params.norm_kind {
                    NormKind::L2 => sens.dx_dz.column(i).norm(),
                    NormKind::LInf => sens.dx_dz.column(i).abs().max(),
                },
                s_score: s[i],
                l_score: l[i],
                v_score: v[i],
                rank: 0,
            }
        })
        .collect();
    let mut table = ScoreTable {
        rows: rows.clone(),
        surrogate_mode,
        params: *params,
    };
    for (pos, idx) in table.ranked_indices().into_iter().enumerate() {
        rows[idx].rank = pos + 1;
    }
    table.rows = rows;
    Ok(table)
}
