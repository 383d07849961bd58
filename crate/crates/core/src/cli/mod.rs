//! The `ldp` command line front end.
//!
//! Every subcommand writes one JSON report to standard output (sorted keys,
//! 17 significant digits) unless `--format csv` is requested. Exit codes:
//! 0 success, 1 self-check failure, 2 validation or usage error,
//! 3 non-convergence, 4 I/O error.

pub mod model;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::Error;
use crate::instances::{
    instance_rng, random_interior_measure, random_positive, random_q, random_symmetric_q,
};
use crate::nlsolver::{balance, matrix_form_residual, SolveOptions};
use crate::qcore::{condition_violations, principal_eigenvalue, PositiveVector, ProbabilityMeasure};
use crate::rate::{rate_balanced, rate_direct, rate_legendre, survival_rate_variational, RateOptions, Route};
use crate::selfcheck::{self, Mutation, SelfcheckConfig};
use crate::simulate::{estimate_ldp_cell, survival_probability_exact, survival_rate_empirical, Sampling};

use model::{Model, ModelError, ModelFile};
use report::{fmt_f64, to_canonical_json, Csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "ldp",
    version,
    about = "Occupation-time large deviations for killed Markov chains"
)]
struct Cli {
    /// Include wall-clock time in the report (breaks byte-for-byte reproducibility).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and report each generator condition.
    Validate {
        model: PathBuf,
        /// Also write the model in canonical form to this path.
        #[arg(long)]
        canonical: Option<PathBuf>,
    },
    /// Solve the balancing equations for the model's beta (default all ones).
    Balance {
        model: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Evaluate the rate function at the model's mu.
    Rate {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = RouteArg::All)]
        route: RouteArg,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Exact survival exponents on a time grid.
    Survival {
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        t_grid: Vec<f64>,
        /// Starting state (0-based); all states when omitted.
        #[arg(long)]
        state: Option<usize>,
        /// Also compute the variational survival rate.
        #[arg(long)]
        variational: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte Carlo estimates of occupation-ball probabilities.
    Simulate {
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10")]
        t: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `mu`, `argmin`, or comma-separated weights; defaults to `mu` when
        /// the model has one and `argmin` otherwise.
        #[arg(long)]
        center: Option<String>,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Sample the tilted chain and reweight.
        #[arg(long)]
        tilted: bool,
        /// Starting state (0-based).
        #[arg(long, default_value_t = 0)]
        state: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the seeded acceptance matrix.
    Selfcheck {
        /// Reduced sizes for a fast smoke run.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, hide = true)]
        mutate: Option<Mutation>,
    },
    /// Write a seeded random model file.
    Generate {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Upper end of the uniform killing rates; 0 gives a conservative chain.
        #[arg(long, default_value_t = 0.5)]
        killing: f64,
        #[arg(long)]
        symmetric: bool,
        /// Include a random full-support mu.
        #[arg(long)]
        mu: bool,
        /// Include a random beta.
        #[arg(long)]
        beta: bool,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
}

impl SolveArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            restarts: self.restarts,
            seed: self.seed,
        }
    }

    fn to_json(&self) -> Value {
        json!({"tol": self.tol, "seed": self.seed, "restarts": self.restarts, "max_iters": self.max_iters})
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the CSV table to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RouteArg {
    Direct,
    Balanced,
    Legendre,
    All,
}

/// A command that could not produce its normal results.
#[derive(Debug)]
struct Failure {
    code: i32,
    kind: String,
    message: String,
    partial: Option<Value>,
}

impl Failure {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            kind: "Io".into(),
            message: format!("{}: {e}", path.display()),
            partial: None,
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            kind: "InvalidArgument".into(),
            message: message.into(),
            partial: None,
        }
    }
}

fn error_kind(e: &Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("Error")
        .to_string()
}

fn exit_code(e: &Error) -> i32 {
    if e.is_convergence() {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_VALIDATION
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let partial = match &e {
            Error::SolverNotConverged(r) => serde_json::to_value(r).ok(),
            _ => None,
        };
        Self {
            code: exit_code(&e),
            kind: error_kind(&e),
            message: e.to_string(),
            partial,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            ModelError::Syntax(_) => "Parse".to_string(),
            ModelError::Field { .. } => "Field".to_string(),
            ModelError::Invalid { source, .. } => error_kind(source),
        };
        Self {
            code: EXIT_VALIDATION,
            kind,
            message: e.to_string(),
            partial: None,
        }
    }
}

/// Normal results of a subcommand.
struct Output {
    options: Value,
    results: Value,
    diagnostics: Value,
    csv: Option<(Csv, OutputTarget)>,
    /// Raw text replacing the JSON report (the `generate` command).
    raw: Option<String>,
    code: i32,
}

struct OutputTarget {
    format: Format,
    path: Option<PathBuf>,
}

impl Output {
    fn new(options: Value, results: Value, diagnostics: Value) -> Self {
        Self {
            options,
            results,
            diagnostics,
            csv: None,
            raw: None,
            code: EXIT_OK,
        }
    }
}

/// Runs the command line `args` (program name first), writing the report to
/// `out` and human-oriented messages to `err`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_VALIDATION
                }
            };
        }
    };
    let argv: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let name = command_name(&cli.command);
    let start = Instant::now();
    let result = dispatch(&cli.command, err);
    let elapsed = start.elapsed().as_secs_f64();

    let mut report = serde_json::Map::new();
    report.insert("command".into(), json!(name));
    report.insert("argv".into(), json!(argv));
    if cli.timing {
        report.insert("wall_time_s".into(), json!(elapsed));
    }
    let code = match result {
        Ok(o) => {
            if let Some(text) = o.raw {
                if write!(out, "{text}").is_err() {
                    return EXIT_IO;
                }
                return o.code;
            }
            let mut csv_to_stdout = None;
            if let Some((csv, target)) = &o.csv {
                if let Some(path) = &target.path {
                    if let Err(e) = std::fs::write(path, csv.render()) {
                        let f = Failure::io(path, e);
                        let _ = writeln!(err, "error: {}", f.message);
                        return emit_failure(out, report, f);
                    }
                }
                if target.format == Format::Csv {
                    csv_to_stdout = Some(csv.render());
                }
            }
            if let Some(text) = csv_to_stdout {
                return if write!(out, "{text}").is_ok() {
                    o.code
                } else {
                    EXIT_IO
                };
            }
            report.insert("options".into(), o.options);
            report.insert("results".into(), o.results);
            report.insert("diagnostics".into(), o.diagnostics);
            report.insert("status".into(), json!(status_name(o.code)));
            report.insert("exit_code".into(), json!(o.code));
            if write!(out, "{}", to_canonical_json(&Value::Object(report))).is_err() {
                return EXIT_IO;
            }
            o.code
        }
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            emit_failure(out, report, f)
        }
    };
    code
}

fn emit_failure(out: &mut dyn Write, mut report: serde_json::Map<String, Value>, f: Failure) -> i32 {
    report.insert("status".into(), json!(status_name(f.code)));
    report.insert("exit_code".into(), json!(f.code));
    let mut error = json!({"kind": f.kind, "message": f.message});
    if let Some(p) = f.partial {
        error["partial"] = p;
    }
    report.insert("error".into(), error);
    let _ = write!(out, "{}", to_canonical_json(&Value::Object(report)));
    f.code
}

fn status_name(code: i32) -> &'static str {
    match code {
        EXIT_OK => "ok",
        EXIT_CHECK_FAILED => "check_failed",
        EXIT_VALIDATION => "validation_error",
        EXIT_NOT_CONVERGED => "not_converged",
        _ => "io_error",
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Validate { .. } => "validate",
        Command::Balance { .. } => "balance",
        Command::Rate { .. } => "rate",
        Command::Survival { .. } => "survival",
        Command::Simulate { .. } => "simulate",
        Command::Selfcheck { .. } => "selfcheck",
        Command::Generate { .. } => "generate",
    }
}

fn dispatch(c: &Command, err: &mut dyn Write) -> Result<Output, Failure> {
    match c {
        Command::Validate { model, canonical } => cmd_validate(model, canonical.as_deref()),
        Command::Balance { model, solve } => cmd_balance(model, solve),
        Command::Rate { model, route, solve } => cmd_rate(model, *route, solve),
        Command::Survival {
            model,
            t_grid,
            state,
            variational,
            output,
        } => cmd_survival(model, t_grid, *state, *variational, output),
        Command::Simulate {
            model,
            t,
            samples,
            seed,
            center,
            eps,
            tilted,
            state,
            output,
        } => cmd_simulate(
            model,
            &SimulateArgs {
                t,
                samples: *samples,
                seed: *seed,
                center: center.as_deref(),
                eps: *eps,
                tilted: *tilted,
                state: *state,
            },
            output,
        ),
        Command::Selfcheck { quick, seed, mutate } => cmd_selfcheck(*quick, *seed, *mutate, err),
        Command::Generate {
            n,
            seed,
            killing,
            symmetric,
            mu,
            beta,
            name,
            out,
        } => cmd_generate(
            &GenerateArgs {
                n: *n,
                seed: *seed,
                killing: *killing,
                symmetric: *symmetric,
                mu: *mu,
                beta: *beta,
                name: name.clone(),
            },
            out.as_deref(),
        ),
    }
}

fn read_model_file(path: &Path) -> Result<ModelFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    Ok(ModelFile::parse(&text)?)
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    Ok(read_model_file(path)?.validate()?)
}

fn floats(v: &[f64]) -> Value {
    json!(v)
}

fn cmd_validate(path: &Path, canonical: Option<&Path>) -> Result<Output, Failure> {
    let file = read_model_file(path)?;
    let options = json!({"model": path.display().to_string()});
    let n = file.n;
    if n >= 2 && file.q.len() == n * n {
        let checks = condition_violations(n, &file.q);
        let labels = [
            "diagonal_negative",
            "off_diagonal_positive",
            "row_sums_nonpositive",
        ];
        let mut conditions = serde_json::Map::new();
        for (label, violation) in labels.iter().zip(&checks) {
            let entry = match violation {
                None => json!({"ok": true}),
                Some(e) => json!({"ok": false, "kind": error_kind(e), "message": e.to_string()}),
            };
            conditions.insert(label.to_string(), entry);
        }
        if checks.iter().any(Option::is_some) {
            // report the first failed condition as the error and keep the detail
            let first = checks.into_iter().flatten().next().expect("a violation");
            let mut f = Failure::from(ModelError::Invalid {
                field: "q",
                source: first,
            });
            f.partial = Some(json!({"valid": false, "conditions": conditions}));
            return Err(f);
        }
        let model = file.validate()?;
        if let Some(p) = canonical {
            std::fs::write(p, model.to_file().to_json()).map_err(|e| Failure::io(p, e))?;
        }
        let q = &model.q;
        let results = json!({
            "valid": true,
            "name": model.name,
            "n": n,
            "conditions": conditions,
            "killing": floats(q.killing()),
            "conservative": q.is_conservative(),
            "symmetric": q.is_symmetric(),
            "has_beta": model.beta.is_some(),
            "has_mu": model.mu.is_some(),
            "has_phi": model.phi.is_some(),
        });
        return Ok(Output::new(options, results, json!({})));
    }
    // size errors surface through the regular validation path
    file.validate()?;
    unreachable!("a mis-sized model never validates")
}

fn cmd_balance(path: &Path, args: &SolveArgs) -> Result<Output, Failure> {
    let model = load_model(path)?;
    let q = &model.q;
    let beta = model.beta.clone().unwrap_or_else(|| PositiveVector::ones(q.n()));
    let opts = args.options();
    let mut options = args.to_json();
    options["model"] = json!(path.display().to_string());
    options["beta_source"] = json!(if model.beta.is_some() {
        "model"
    } else {
        "default_ones"
    });
    let bal = balance(q, &beta, &opts)?;
    let mf = matrix_form_residual(q, &bal.alpha, &beta)?;
    let results = json!({
        "alpha": floats(bal.alpha.as_slice()),
        "beta": floats(beta.as_slice()),
        "residuals": floats(&bal.residuals),
        "residual_inf": bal.residual_inf,
        "matrix_form_residual": mf,
    });
    let diagnostics = json!({
        "iterations": bal.report.iterations,
        "restarts_used": bal.report.restarts_used,
        "converged": bal.report.converged,
        "system_residual_inf": bal.report.residual_inf,
    });
    Ok(Output::new(options, results, diagnostics))
}

fn rate_options(args: &SolveArgs) -> RateOptions {
    RateOptions {
        direct_tol: args.tol,
        legendre_tol: (10.0 * args.tol).max(1e-12),
        max_iters: args.max_iters,
        seed: args.seed,
        solve: args.options(),
        ..RateOptions::default()
    }
}

fn cmd_rate(path: &Path, route: RouteArg, args: &SolveArgs) -> Result<Output, Failure> {
    let model = load_model(path)?;
    let mu = model.mu.clone().ok_or_else(|| {
        Failure::from(ModelError::Field {
            field: "mu".into(),
            message: "required by the rate command".into(),
        })
    })?;
    let q = &model.q;
    let opts = rate_options(args);
    let mut options = args.to_json();
    options["model"] = json!(path.display().to_string());
    options["route"] = json!(format!("{route:?}").to_lowercase());
    options["direct_tol"] = json!(opts.direct_tol);
    options["legendre_tol"] = json!(opts.legendre_tol);

    let routes: Vec<Route> = match route {
        RouteArg::Direct => vec![Route::Direct],
        RouteArg::Balanced => vec![Route::Balanced],
        RouteArg::Legendre => vec![Route::Legendre],
        RouteArg::All => vec![Route::Direct, Route::Balanced, Route::Legendre],
    };
    let mut per_route = serde_json::Map::new();
    let mut values: Vec<(Route, f64)> = Vec::new();
    let mut code = EXIT_OK;
    let mut errors = Vec::new();
    for r in routes {
        let outcome = match r {
            Route::Direct => rate_direct(q, &mu, &opts).map(|res| (res, None)),
            Route::Balanced => rate_balanced(q, &mu, &opts).map(|b| {
                let extra = json!({
                    "phi": floats(b.phi.as_slice()),
                    "equation_residual": b.equation_residual,
                    "invariant_tv": b.invariant_tv,
                });
                (b.result, Some(extra))
            }),
            Route::Legendre => rate_legendre(q, &mu, &opts).map(|res| (res, None)),
        };
        match outcome {
            Ok((res, extra)) => {
                let mut entry = json!({
                    "value": res.value,
                    "converged": res.converged,
                    "witness": floats(res.witness.as_slice()),
                    "iterations": res.diagnostics.iterations,
                    "stationarity_residual": res.diagnostics.stationarity_residual,
                    "diverging": res.diagnostics.diverging,
                });
                if let Some(Value::Object(m)) = extra {
                    for (k, v) in m {
                        entry[k] = v;
                    }
                }
                if !res.converged && code == EXIT_OK {
                    code = EXIT_NOT_CONVERGED;
                }
                values.push((r, res.value));
                per_route.insert(r.name().into(), entry);
            }
            Err(e) => {
                if code == EXIT_OK {
                    code = exit_code(&e);
                }
                errors.push(r.name());
                per_route.insert(
                    r.name().into(),
                    json!({"error": {"kind": error_kind(&e), "message": e.to_string()}}),
                );
            }
        }
    }
    if route != RouteArg::All {
        if let (Some(name), true) = (errors.first(), values.is_empty()) {
            let entry = &per_route[*name]["error"];
            return Err(Failure {
                code,
                kind: entry["kind"].as_str().unwrap_or("Error").into(),
                message: entry["message"].as_str().unwrap_or_default().into(),
                partial: None,
            });
        }
    }
    let mut results = json!({"mu": floats(mu.as_slice()), "routes": per_route});
    if route == RouteArg::All {
        let mut deltas = serde_json::Map::new();
        let mut max_delta: Option<f64> = None;
        for a in 0..values.len() {
            for b in a + 1..values.len() {
                let d = (values[a].1 - values[b].1).abs();
                deltas.insert(format!("{}-{}", values[a].0.name(), values[b].0.name()), json!(d));
                max_delta = Some(max_delta.map_or(d, |m: f64| m.max(d)));
            }
        }
        results["deltas"] = Value::Object(deltas);
        results["max_delta"] = json!(max_delta);
    }
    let mut out = Output::new(options, results, json!({"failed_routes": errors}));
    out.code = code;
    Ok(out)
}

fn check_grid(name: &str, grid: &[f64]) -> Result<(), Failure> {
    if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Failure::usage(format!("--{name} needs positive finite times")));
    }
    Ok(())
}

fn cmd_survival(
    path: &Path,
    grid: &[f64],
    state: Option<usize>,
    variational: bool,
    output: &OutputArgs,
) -> Result<Output, Failure> {
    let model = load_model(path)?;
    let q = &model.q;
    check_grid("t-grid", grid)?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let states: Vec<usize> = match state {
        Some(i) if i >= q.n() => return Err(Error::StateOutOfRange { index: i, n: q.n() }.into()),
        Some(i) => vec![i],
        None => (0..q.n()).collect(),
    };
    let perron = principal_eigenvalue(q.matrix())?;
    let lambda = perron.lambda;
    let mut rows = Vec::new();
    let mut csv = Csv::new(&["t", "state", "rate", "delta_to_lambda_max", "asymptotic"]);
    for &i in &states {
        for p in survival_rate_empirical(q, i, &sorted)? {
            csv.push(vec![
                fmt_f64(p.t),
                i.to_string(),
                fmt_f64(p.rate),
                fmt_f64(p.rate - lambda),
                p.asymptotic.to_string(),
            ]);
            rows.push(json!({
                "t": p.t, "state": i, "rate": p.rate,
                "delta_to_lambda_max": p.rate - lambda, "asymptotic": p.asymptotic,
            }));
        }
    }
    let mut results = json!({
        "lambda_max": lambda,
        "perron_vector": floats(perron.vector.as_slice()),
        "grid": rows,
    });
    let mut code = EXIT_OK;
    if variational {
        let v = survival_rate_variational(q, &RateOptions::default())?;
        if !v.converged {
            code = EXIT_NOT_CONVERGED;
        }
        results["variational"] = json!({
            "value": v.value,
            "delta_to_lambda_max": (v.value - lambda).abs(),
            "argmin": floats(v.argmin.as_slice()),
            "converged": v.converged,
            "iterations": v.iterations,
            "gradient_residual": v.gradient_residual,
        });
    }
    let options = json!({
        "model": path.display().to_string(),
        "t_grid": floats(&sorted),
        "states": states,
        "variational": variational,
    });
    let mut out = Output::new(options, results, json!({"perron_iterations": perron.iterations}));
    out.code = code;
    out.csv = Some((
        csv,
        OutputTarget {
            format: output.format,
            path: output.out.clone(),
        },
    ));
    Ok(out)
}

struct SimulateArgs<'a> {
    t: &'a [f64],
    samples: usize,
    seed: u64,
    center: Option<&'a str>,
    eps: f64,
    tilted: bool,
    state: usize,
}

fn cmd_simulate(path: &Path, a: &SimulateArgs<'_>, output: &OutputArgs) -> Result<Output, Failure> {
    let model = load_model(path)?;
    let q = &model.q;
    check_grid("t", a.t)?;
    if a.samples == 0 {
        return Err(Failure::usage("--samples must be positive"));
    }
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Failure::usage("--eps must be positive"));
    }
    let ropts = RateOptions::default();
    let spec = a
        .center
        .unwrap_or(if model.mu.is_some() { "mu" } else { "argmin" });
    let center = match spec {
        "mu" => model
            .mu
            .clone()
            .ok_or_else(|| Failure::usage("--center mu needs a model with mu"))?,
        "argmin" => survival_rate_variational(q, &ropts)?.argmin,
        list => {
            let w = list
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::usage(format!("--center: {e}")))?;
            if w.len() != q.n() {
                return Err(Error::DimensionMismatch {
                    expected: q.n(),
                    found: w.len(),
                }
                .into());
            }
            ProbabilityMeasure::new(w)?
        }
    };
    let (sampling, phi_source) = if a.tilted {
        match &model.phi {
            Some(phi) => (Sampling::Tilted(phi.clone()), "model"),
            None => (
                Sampling::Tilted(rate_balanced(q, &center, &ropts)?.phi),
                "balanced",
            ),
        }
    } else {
        (Sampling::Plain, "none")
    };
    let rate_at_center = rate_direct(q, &center, &ropts)?;
    let mut csv = Csv::new(&["t", "p_hat", "stderr", "n", "minus_log_p_over_t"]);
    let mut rows = Vec::new();
    let mut zero_hit = Vec::new();
    for &t in a.t {
        let est = estimate_ldp_cell(q, a.state, t, &center, a.eps, a.samples, a.seed, &sampling)?;
        let mlp = est.minus_log_p_over_t();
        csv.push(vec![
            fmt_f64(t),
            fmt_f64(est.probability),
            fmt_f64(est.std_error),
            est.n_samples.to_string(),
            mlp.map(fmt_f64).unwrap_or_default(),
        ]);
        if est.hits == 0 {
            zero_hit.push(t);
        }
        rows.push(json!({
            "t": t,
            "p_hat": est.probability,
            "stderr": est.std_error,
            "n": est.n_samples,
            "hits": est.hits,
            "minus_log_p_over_t": mlp,
            "zero_hit": est.hits == 0,
            "upper_bound": est.upper_bound,
            "survival_exact": survival_probability_exact(q, a.state, t)?,
        }));
    }
    let options = json!({
        "model": path.display().to_string(),
        "t": floats(a.t),
        "samples": a.samples,
        "seed": a.seed,
        "center": spec,
        "eps": a.eps,
        "tilted": a.tilted,
        "phi_source": phi_source,
        "state": a.state,
    });
    let results = json!({
        "center": floats(center.as_slice()),
        "rate_at_center": rate_at_center.value,
        "estimates": rows,
    });
    let diagnostics =
        json!({"zero_hit_times": floats(&zero_hit), "rate_converged": rate_at_center.converged});
    let mut out = Output::new(options, results, diagnostics);
    out.csv = Some((
        csv,
        OutputTarget {
            format: output.format,
            path: output.out.clone(),
        },
    ));
    Ok(out)
}

fn cmd_selfcheck(
    quick: bool,
    seed: u64,
    mutation: Option<Mutation>,
    err: &mut dyn Write,
) -> Result<Output, Failure> {
    let cfg = SelfcheckConfig {
        quick,
        seed,
        mutation,
    };
    let mut entries = Vec::new();
    let mut all = true;
    for id in selfcheck::CRITERIA {
        let o = selfcheck::run_criterion(id, &cfg);
        let _ = writeln!(err, "{}", o.line());
        all &= o.passed;
        entries.push(json!({"id": o.id, "name": o.name, "passed": o.passed, "detail": o.detail}));
    }
    let options = json!({"quick": quick, "seed": seed, "mutation": mutation.map(|m| format!("{m:?}"))});
    let results = json!({"criteria": entries, "all_passed": all});
    let mut out = Output::new(options, results, json!({}));
    out.code = if all { EXIT_OK } else { EXIT_CHECK_FAILED };
    Ok(out)
}

struct GenerateArgs {
    n: usize,
    seed: u64,
    killing: f64,
    symmetric: bool,
    mu: bool,
    beta: bool,
    name: Option<String>,
}

fn cmd_generate(a: &GenerateArgs, out: Option<&Path>) -> Result<Output, Failure> {
    if a.n < 2 {
        return Err(Failure::usage("--n must be at least 2"));
    }
    if !(a.killing >= 0.0 && a.killing.is_finite()) {
        return Err(Failure::usage("--killing must be non-negative"));
    }
    let mut rng = instance_rng(a.seed, a.n as u64);
    let q = if a.symmetric {
        random_symmetric_q(&mut rng, a.n)
    } else {
        random_q(&mut rng, a.n, (0.2, 3.0), (0.0, a.killing))
    };
    let beta = a.beta.then(|| random_positive(&mut rng, a.n, 0.2, 5.0));
    let mu = a.mu.then(|| random_interior_measure(&mut rng, a.n));
    let model = Model {
        name: a
            .name
            .clone()
            .unwrap_or_else(|| format!("random-n{}-seed{}", a.n, a.seed)),
        q,
        beta,
        mu,
        phi: None,
    };
    let text = model.to_file().to_json();
    let mut o = Output::new(json!({}), json!({}), json!({}));
    match out {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| Failure::io(p, e))?;
            o.options = json!({"n": a.n, "seed": a.seed, "killing": a.killing, "symmetric": a.symmetric});
            o.results = json!({"written": p.display().to_string(), "name": model.name});
        }
        None => o.raw = Some(text),
    }
    Ok(o)
}

/// Runs a command line and captures its report; used by the determinism check.
pub fn run_captured<I, T>(args: I) -> (i32, Vec<u8>)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = Vec::new();
    let mut sink = std::io::sink();
    let code = run(args, &mut out, &mut sink);
    (code, out)
}
