//! `seva`: measurement vulnerability assessment for power-system state
//! estimation.
//!
//! Three subcommands cover the pipeline: `assess` scores every measurement at
//! one operating condition, `sweep` repeats the analysis across demand scale
//! factors and runs the SVD invariance analysis, and `validate` checks the
//! analytic sensitivities against re-solve finite differences.
//!
//! Exit codes: 0 success, 2 input/parse/validation, 3 observability or
//! regularity, 4 convergence or numeric failure, 5 degenerate residuals
//! (consistent data without `--consistent`), 6 validation tolerance breach.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seva_core::bdd::bdd_chi_square;
use seva_core::error::Error;
use seva_core::estimator::{estimate_state, SolverOptions};
use seva_core::matpower::parse_case;
use seva_core::measurement::{redundancy_summary, synthesize_measurements, MeasurementConfig};
use seva_core::network::Network;
use seva_core::report::{
    cache_load, cache_store, fd_report_csv, matrix_csv, row_csv, score_table_csv, score_table_json,
    sha256_hex, svd_report_csv, verdict_json, CacheKey, RunManifest,
};
use seva_core::robustness::{
    analyze_ensemble, default_factors, invariance_verdict, sweep_operating_conditions, SeedPolicy,
    SweepOutput, SweepSettings,
};
use seva_core::scoring::{
    rank_measurements, run_algorithm_1, score_table_from_sensitivities, NormKind, ScoreParams,
    ScoreTable,
};
use seva_core::sensitivity::{finite_difference_check, SensitivityResult};

#[derive(Parser)]
#[command(
    name = "seva",
    version,
    about = "State-estimation vulnerability analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every measurement at a single operating condition.
    Assess(AssessArgs),
    /// Sweep operating conditions and test sensitivity invariance via SVD.
    Sweep(SweepArgs),
    /// Validate analytic sensitivities and noiseless consistency.
    Validate(ValidateArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    /// MATPOWER-style case file.
    #[arg(long)]
    case: PathBuf,
    /// Measurement configuration (JSON).
    #[arg(long)]
    meas: PathBuf,
    /// Base seed for the measurement-noise generator.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Noise scale: per-measurement sigma is noise/sqrt(w).
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// KKT residual tolerance of the estimator.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Maximum Newton iterations.
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Initial Levenberg damping on the primal diagonal.
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    /// Output directory for report files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Binary cache directory (no caching when absent).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ScoreArgs {
    /// Stealth decay base of the S-score.
    #[arg(long, default_value_t = 10.0)]
    gamma: f64,
    /// Convex weight of the S-score in the V-score.
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    /// S-shape exponent of the stealth transfer.
    #[arg(long, default_value_t = 1.0)]
    beta_s: f64,
    /// S-shape exponent of the leverage transfer.
    #[arg(long, default_value_t = 1.5)]
    beta_l: f64,
    /// Norm over dx/dz columns for the L-score.
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    L2,
    Linf,
}

impl ScoreArgs {
    fn params(&self) -> ScoreParams {
        ScoreParams {
            gamma: self.gamma,
            alpha: self.alpha,
            beta_s: self.beta_s,
            beta_l: self.beta_l,
            norm_kind: match self.norm {
                NormArg::L2 => NormKind::L2,
                NormArg::Linf => NormKind::LInf,
            },
        }
    }

    fn json(&self) -> serde_json::Value {
        serde_json::json!({
            "gamma": self.gamma,
            "alpha": self.alpha,
            "beta_s": self.beta_s,
            "beta_l": self.beta_l,
            "norm": match self.norm { NormArg::L2 => "l2", NormArg::Linf => "linf" },
        })
    }
}

#[derive(Args)]
struct AssessArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    score: ScoreArgs,
    /// Evaluate at the noiseless (consistent) solution; stealth inputs use
    /// the second-order surrogate.
    #[arg(long)]
    consistent: bool,
    /// Vulnerability threshold: report the set with V-score >= threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Chi-square significance for the bad-data line.
    #[arg(long, default_value_t = 0.05)]
    significance: f64,
    /// Also write the sensitivity matrices as CSV.
    #[arg(long)]
    emit_matrices: bool,
    /// Rows of the ranked table printed to stdout.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    score: ScoreArgs,
    /// Comma-separated demand scale factors (at least two).
    #[arg(long, conflicts_with = "factors_default", value_delimiter = ',')]
    factors: Option<Vec<f64>>,
    /// Use the 24 built-in factors spanning [0.55, 1.15].
    #[arg(long)]
    factors_default: bool,
    /// Noise realization policy across conditions.
    #[arg(long, value_enum, default_value_t = SeedPolicyArg::Shared)]
    seed_policy: SeedPolicyArg,
    /// Cumulative energy on squared singular values instead of first powers.
    #[arg(long)]
    ce_squared: bool,
    /// Leading singular values the invariance verdict considers.
    #[arg(long, default_value_t = 1)]
    rank: usize,
    /// Cumulative-energy threshold for the invariance verdict.
    #[arg(long, default_value_t = 0.8)]
    energy_threshold: f64,
    /// Worker threads for the per-condition runs (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SeedPolicyArg {
    /// One noise realization shared by all conditions.
    Shared,
    /// Seed = base + condition index.
    PerCondition,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Central-difference step applied to each measurement.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Validate only this many evenly spaced measurements (0 = all).
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Tolerance on the finite-difference relative error.
    #[arg(long, default_value_t = 1e-4)]
    fd_tol: f64,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::Domain(_)
        | Error::Shape { .. }
        | Error::Lookup(_)
        | Error::InsufficientRedundancy { .. }
        | Error::Io(_)
        | Error::Json(_) => 2,
        Error::Regularity { .. } | Error::Observability { .. } => 3,
        Error::PowerFlowConvergence { .. }
        | Error::PowerFlowSingular { .. }
        | Error::EstimationConvergence { .. }
        | Error::StalePoint { .. }
        | Error::SingularKkt { .. }
        | Error::Numeric(_) => 4,
        Error::DegenerateResiduals => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Assess(args) => cmd_assess(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::DegenerateResiduals) {
                eprintln!("hint: consistent data has no first-order stealth signal; rerun with --consistent to use the second-order surrogate");
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}

struct Inputs {
    net: Network,
    cfg: MeasurementConfig,
    case_text: String,
    meas_text: String,
    solver: SolverOptions,
}

fn load_inputs(args: &InputArgs) -> Result<Inputs, Error> {
    let case_text = std::fs::read_to_string(&args.case)?;
    let meas_text = std::fs::read_to_string(&args.meas)?;
    let net = parse_case(&case_text)?;
    let cfg = MeasurementConfig::from_json(&meas_text)?;
    cfg.validate(&net)?;
    Ok(Inputs {
        net,
        cfg,
        case_text,
        meas_text,
        solver: SolverOptions {
            tol: args.tol,
            max_iter: args.max_iter,
            damping: args.damping,
            warm_start: None,
        },
    })
}

fn write_reports(
    out_dir: &Path,
    manifest: &mut RunManifest,
    files: &[(String, String)],
) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    for (name, body) in files {
        manifest.record_output(name, body);
    }
    for (name, body) in files {
        let path = out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, body)?;
    }
    std::fs::write(out_dir.join("manifest.json"), manifest.to_json()?)?;
    Ok(())
}

fn print_score_table(table: &ScoreTable, top: usize) {
    println!(
        "{:<12} {:>10} {:>8} {:>8} {:>8}  rank",
        "measurement", "|z dJ/dz|", "S", "L", "V"
    );
    for &idx in table.ranked_indices().iter().take(top) {
        let row = &table.rows[idx];
        println!(
            "{:<12} {:>10.4} {:>8.4} {:>8.4} {:>8.4}  {:>4}",
            row.label, row.stealth_input, row.s_score, row.l_score, row.v_score, row.rank
        );
    }
    if table.surrogate_mode {
        println!("(stealth inputs from the second-order surrogate: consistent data)");
    }
}

fn cmd_assess(args: AssessArgs) -> Result<u8, Error> {
    let inputs = load_inputs(&args.input)?;
    let noise = if args.consistent {
        0.0
    } else {
        args.input.noise
    };
    let params = args.score.params();

    let ms = synthesize_measurements(&inputs.net, &inputs.cfg, noise, args.input.seed)?;
    let est = estimate_state(&inputs.net, &ms, &inputs.solver)?;

    let cache_key = CacheKey {
        kind: "sensitivity".into(),
        case_sha256: sha256_hex(inputs.case_text.as_bytes()),
        config_sha256: sha256_hex(inputs.meas_text.as_bytes()),
        extra: format!("factor=1;seed={};noise={noise}", args.input.seed),
    };
    let cached: Option<SensitivityResult> = match &args.input.cache_dir {
        Some(dir) => cache_load(dir, &cache_key)?,
        None => None,
    };
    let (sens, table) = match cached {
        Some(sens) => {
            let table = score_table_from_sensitivities(
                &inputs.net,
                &ms,
                &est,
                &sens,
                &params,
                &inputs.solver,
                args.consistent,
            )?;
            (sens, table)
        }
        None => {
            let (sens, table) = run_algorithm_1(
                &inputs.net,
                &ms,
                &est,
                &params,
                &inputs.solver,
                args.consistent,
            )?;
            if let Some(dir) = &args.input.cache_dir {
                cache_store(dir, &cache_key, &sens)?;
            }
            (sens, table)
        }
    };

    println!(
        "estimated {} variables from {} measurements: J* = {:.6e}, {} iterations, KKT residual {:.2e}",
        est.x.values.len(),
        ms.p(),
        est.objective,
        est.iterations,
        est.kkt_residual
    );
    let summary = redundancy_summary(&inputs.net, &inputs.cfg)?;
    match bdd_chi_square(
        est.objective,
        summary.p,
        summary.n_states,
        summary.n_zero_constraints,
        args.significance,
    ) {
        Ok(bdd) => println!(
            "bad-data check: J* = {:.4} vs chi-square threshold {:.4} (dof {}) -> {}",
            est.objective,
            bdd.threshold,
            bdd.dof,
            if bdd.detected { "DETECTED" } else { "clean" }
        ),
        Err(Error::InsufficientRedundancy { dof }) => {
            println!("bad-data check skipped: dof = {dof} < 1");
        }
        Err(e) => return Err(e),
    }
    println!();
    print_score_table(&table, args.top);

    if let Some(threshold) = args.threshold {
        let (_, vulnerable) = rank_measurements(&table, threshold)?;
        let labels: Vec<&str> = vulnerable
            .iter()
            .map(|&i| table.rows[i].label.as_str())
            .collect();
        println!(
            "\nvulnerable set (V-score >= {threshold}): {} measurements {labels:?}",
            labels.len()
        );
    }

    let params_json = serde_json::json!({
        "seed": args.input.seed,
        "noise": noise,
        "consistent": args.consistent,
        "tol": args.input.tol,
        "max_iter": args.input.max_iter,
        "damping": args.input.damping,
        "significance": args.significance,
        "threshold": args.threshold,
        "score": args.score.json(),
    });
    let mut manifest = RunManifest::new(
        "assess",
        &args.input.case.display().to_string(),
        &inputs.case_text,
        &args.input.meas.display().to_string(),
        &inputs.meas_text,
        params_json,
        chrono::Utc::now().to_rfc3339(),
    );

    let mut files = vec![
        ("scores.csv".to_string(), score_table_csv(&table)),
        ("scores.json".to_string(), score_table_json(&table)?),
    ];
    if args.emit_matrices {
        let var_labels = est.x.layout.labels(&inputs.net);
        let con_labels = seva_core::estimator::constraint_labels(&inputs.net, &ms)?;
        let meas_labels = ms.labels();
        files.push((
            "dx_dz.csv".into(),
            matrix_csv(&sens.dx_dz, &var_labels, &meas_labels),
        ));
        files.push((
            "dlambda_dz.csv".into(),
            matrix_csv(&sens.dlambda_dz, &con_labels, &meas_labels),
        ));
        files.push(("dj_dz.csv".into(), row_csv(&sens.dj_dz, &meas_labels)));
    }
    write_reports(&args.input.out, &mut manifest, &files)?;
    println!("\nreports written to {}", args.input.out.display());
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, Error> {
    let inputs = load_inputs(&args.input)?;
    let factors = match (&args.factors, args.factors_default) {
        (Some(f), false) => f.clone(),
        (None, _) => default_factors(),
        (Some(_), true) => unreachable!("clap conflicts_with"),
    };
    if factors.len() < 2 {
        return Err(Error::Domain(format!(
            "sweep needs at least 2 scale factors, got {}",
            factors.len()
        )));
    }
    if args.input.noise <= 0.0 {
        return Err(Error::Domain(
            "sweep needs noise > 0: consistent data has identically zero objective sensitivities"
                .into(),
        ));
    }

    let settings = SweepSettings {
        factors: factors.clone(),
        noise_sigma_scale: args.input.noise,
        base_seed: args.input.seed,
        seed_policy: match args.seed_policy {
            SeedPolicyArg::Shared => SeedPolicy::Shared,
            SeedPolicyArg::PerCondition => SeedPolicy::PerCondition,
        },
        solver: inputs.solver.clone(),
        score_params: args.score.params(),
        surrogate_on_degenerate: false,
    };

    let factors_csv = factors
        .iter()
        .map(|f| format!("{f}"))
        .collect::<Vec<_>>()
        .join(",");
    let cache_key = CacheKey {
        kind: "ensemble".into(),
        case_sha256: sha256_hex(inputs.case_text.as_bytes()),
        config_sha256: sha256_hex(inputs.meas_text.as_bytes()),
        extra: format!(
            "factors={};seed={};noise={};policy={:?}",
            sha256_hex(factors_csv.as_bytes()),
            args.input.seed,
            args.input.noise,
            settings.seed_policy,
        ),
    };

    let cached: Option<SweepOutput> = match &args.input.cache_dir {
        Some(dir) => cache_load(dir, &cache_key)?,
        None => None,
    };
    let output = match cached {
        Some(out) => {
            println!("loaded sweep from cache");
            out
        }
        None => {
            let run = || sweep_operating_conditions(&inputs.net, &inputs.cfg, &settings);
            let out = if args.jobs > 0 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(args.jobs)
                    .build()
                    .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
                pool.install(run)?
            } else {
                run()?
            };
            if let Some(dir) = &args.input.cache_dir {
                cache_store(dir, &cache_key, &out)?;
            }
            out
        }
    };

    let report = analyze_ensemble(&output.ensemble)?;
    let verdict = invariance_verdict(&report, args.rank, args.energy_threshold, args.ce_squared)?;

    println!(
        "swept {} conditions ({} failed) over factors [{:.3}, {:.3}]",
        output.ensemble.t(),
        output.failures.len(),
        factors.first().unwrap(),
        factors.last().unwrap()
    );
    for f in &output.failures {
        eprintln!(
            "  condition {} (factor {:.4}) failed: {}",
            f.index, f.factor, f.message
        );
    }
    println!(
        "CE_X({}) = {:.4}, CE_J({}) = {:.4} -> {}",
        verdict.rank,
        verdict.ce_x,
        verdict.rank,
        verdict.ce_j,
        if verdict.invariant {
            "INVARIANT"
        } else {
            "condition-dependent"
        }
    );
    println!("{}", verdict.note);

    let params_json = serde_json::json!({
        "seed": args.input.seed,
        "noise": args.input.noise,
        "factors": factors,
        "seed_policy": match args.seed_policy { SeedPolicyArg::Shared => "shared", SeedPolicyArg::PerCondition => "per-condition" },
        "ce_squared": args.ce_squared,
        "rank": args.rank,
        "energy_threshold": args.energy_threshold,
        "tol": args.input.tol,
        "max_iter": args.input.max_iter,
        "damping": args.input.damping,
        "score": args.score.json(),
    });
    let mut manifest = RunManifest::new(
        "sweep",
        &args.input.case.display().to_string(),
        &inputs.case_text,
        &args.input.meas.display().to_string(),
        &inputs.meas_text,
        params_json,
        chrono::Utc::now().to_rfc3339(),
    );

    let mut files = vec![
        (
            "svd_report.csv".to_string(),
            svd_report_csv(&report, args.ce_squared)?,
        ),
        ("verdict.json".to_string(), verdict_json(&verdict)?),
    ];
    for run in &output.runs {
        files.push((
            format!("conditions/scores_{:02}.csv", run.index),
            score_table_csv(&run.scores),
        ));
    }
    write_reports(&args.input.out, &mut manifest, &files)?;
    println!("reports written to {}", args.input.out.display());
    Ok(0)
}

fn cmd_validate(args: ValidateArgs) -> Result<u8, Error> {
    let inputs = load_inputs(&args.input)?;

    // Noiseless consistency: the estimator must interpolate synthetic data.
    let exact = synthesize_measurements(&inputs.net, &inputs.cfg, 0.0, args.input.seed)?;
    let est0 = estimate_state(&inputs.net, &exact, &inputs.solver)?;
    let truth = exact.truth.as_ref().expect("synthesized truth");
    let state = est0.state();
    let mut state_err: f64 = 0.0;
    for i in 0..inputs.net.n_buses() {
        state_err = state_err
            .max((state.v[i] - truth.v[i]).abs())
            .max((state.theta[i] - truth.theta[i]).abs());
    }
    let consistency_ok = est0.objective <= 1e-10 && state_err <= 1e-8;
    println!(
        "noiseless consistency: J* = {:.3e} (limit 1e-10), state error {:.3e} (limit 1e-8) -> {}",
        est0.objective,
        state_err,
        if consistency_ok { "ok" } else { "FAIL" }
    );

    // Finite-difference oracle on a noisy solution.
    let ms = synthesize_measurements(
        &inputs.net,
        &inputs.cfg,
        args.input.noise.max(1e-12),
        args.input.seed,
    )?;
    let est = estimate_state(&inputs.net, &ms, &inputs.solver)?;
    let sample_vec: Option<Vec<usize>> = if args.sample > 0 && args.sample < ms.p() {
        Some((0..args.sample).map(|k| k * ms.p() / args.sample).collect())
    } else {
        None
    };
    let fd = finite_difference_check(
        &inputs.net,
        &ms,
        &est,
        &inputs.solver,
        args.step,
        sample_vec.as_deref(),
    )?;
    if fd.roundoff_warning {
        println!(
            "warning: step {:.1e} is below 1e-8; differences are roundoff-dominated",
            fd.step
        );
    }
    let fd_ok = fd.max_dx_rel_err <= args.fd_tol
        && fd.max_dj_rel_err <= args.fd_tol
        && fd.max_dx_small_abs_err <= fd.small_floor
        && fd.max_dj_small_abs_err <= fd.small_floor
        && fd.failed_solves == 0;
    println!(
        "finite differences over {} measurements (step {:.1e}): max dx rel {:.3e}, mean {:.3e}, max dJ rel {:.3e} (limit {:.1e}) -> {}",
        fd.entries.len(),
        fd.step,
        fd.max_dx_rel_err,
        fd.mean_dx_rel_err,
        fd.max_dj_rel_err,
        args.fd_tol,
        if fd_ok { "ok" } else { "FAIL" }
    );
    if let Some(worst) = fd.worst_measurement {
        println!("worst measurement: {}", ms.measurements[worst].label());
    }
    if !fd_ok {
        // Table of offenders to stdout for diagnosis.
        let mut entries: Vec<_> = fd.entries.iter().collect();
        entries.sort_by(|a, b| b.dx_rel_err.total_cmp(&a.dx_rel_err));
        for e in entries.iter().take(5) {
            println!(
                "  {:<12} dx rel {:.3e}, dJ rel {:.3e}{}",
                e.label,
                e.dx_rel_err,
                e.dj_rel_err,
                if e.solve_failed {
                    " (re-solve failed)"
                } else {
                    ""
                }
            );
        }
    }

    let params_json = serde_json::json!({
        "seed": args.input.seed,
        "noise": args.input.noise,
        "step": args.step,
        "sample": args.sample,
        "fd_tol": args.fd_tol,
        "tol": args.input.tol,
        "max_iter": args.input.max_iter,
        "damping": args.input.damping,
    });
    let mut manifest = RunManifest::new(
        "validate",
        &args.input.case.display().to_string(),
        &inputs.case_text,
        &args.input.meas.display().to_string(),
        &inputs.meas_text,
        params_json,
        chrono::Utc::now().to_rfc3339(),
    );
    let files = vec![("fd_report.csv".to_string(), fd_report_csv(&fd))];
    write_reports(&args.input.out, &mut manifest, &files)?;

    if consistency_ok && fd_ok {
        println!("validation passed");
        Ok(0)
    } else {
        println!("validation FAILED");
        Ok(6)
    }
}
