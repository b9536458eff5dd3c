//! Command-line front end: bound certification, quantum values, the
//! noncontextual-to-Bell conversion, robustness, and shot-level
//! simulation, with text/JSON/CSV reports.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use qctx::bell::{
    bell_expression, convert_pipeline, entangled_state, kappa_prime_expression, noisy_state,
    quantum_endpoints_rational, quantum_value_bipartite, BipartiteState,
};
use qctx::inequality::{
    classical_bound_with_jobs, kappa_expression, opt_rat, quantum_value, quantum_value_rational,
    rat_serde, ratio_f64, robustness, robustness_rational, yu_oh_expression, Assignment,
    InequalityExpression, Rational,
};
use qctx::photonics::{report_to_csv, run_experiment, ExperimentDescriptor};
use qctx::qmath::{CMat, CVec3, C64};
use qctx::rays::{OrthogonalityGraph, RayCatalog, RayJson};
use qctx::{Error, Result};

#[derive(Parser)]
#[command(
    name = "qctx",
    version,
    about = "Qutrit contextuality and two-qutrit Bell inequality toolkit"
)]
struct Cli {
    /// Output format; csv applies to `simulate` only.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the report to a file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for enumeration and shot batches (default: cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Custom ray catalog (JSON array of {index, re, im}).
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the classical/LHV bound of an expression by exhaustive
    /// enumeration (exit 2 when the certified bound differs from the
    /// claimed one).
    Certify {
        /// kappa | kappa-prime | bell | yu-oh | path to an expression JSON
        expr: String,
    },
    /// Exact quantum value of an expression on a chosen state.
    Quantum {
        expr: String,
        /// maximally-mixed | ray:K | pure:re0,im0,re1,im1,re2,im2 |
        /// entangled | noisy:V | file:PATH
        #[arg(long)]
        state: String,
    },
    /// Run the two-step conversion kappa -> kappa' -> beta with
    /// recertified bounds and the visibility threshold.
    Convert,
    /// Robustness (violation gap over total weight) of an expression.
    Robustness {
        expr: String,
        /// Quantum value; defaults to the exact state-independent value.
        #[arg(long)]
        quantum: Option<f64>,
    },
    /// Run a shot-level experiment from a JSON descriptor.
    Simulate {
        descriptor: PathBuf,
        /// Override the descriptor's shot count.
        #[arg(long)]
        shots: Option<u64>,
        /// Override the descriptor's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override detector efficiency.
        #[arg(long = "noise-eta")]
        eta: Option<f64>,
        /// Override wedge phase jitter sigma (radians).
        #[arg(long = "noise-phase-sigma")]
        phase_sigma: Option<f64>,
        /// Override beam-splitter transmittance jitter sigma.
        #[arg(long = "noise-bs-sigma")]
        bs_sigma: Option<f64>,
        /// Override source visibility.
        #[arg(long = "noise-visibility")]
        visibility: Option<f64>,
    },
    /// Print the ray catalog and its orthogonality graph edge list.
    Catalog,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 1 usage, 2 certification mismatch (handled in certify), 3 numerical
/// validity failure.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Json(_)
        | Error::InvalidDescriptor { .. }
        | Error::InvalidCatalog { .. }
        | Error::EnumerationGuard { .. }
        | Error::EmptyCounts(_) => 1,
        _ => 3,
    }
}

fn io_err(e: std::io::Error, path: &PathBuf) -> Error {
    Error::InvalidDescriptor {
        reason: format!("{}: {e}", path.display()),
    }
}

struct Context {
    catalog: RayCatalog,
    graph: OrthogonalityGraph,
    jobs: usize,
}

fn run(cli: Cli) -> Result<ExitCode> {
    let catalog = match &cli.catalog {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(e, path))?;
            let entries: Vec<RayJson> = serde_json::from_str(&text)?;
            RayCatalog::from_json(&entries)?
        }
        None => RayCatalog::builtin(),
    };
    let graph = OrthogonalityGraph::build(&catalog);
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let ctx = Context {
        catalog,
        graph,
        jobs,
    };

    if cli.format == Format::Csv && !matches!(cli.command, Command::Simulate { .. }) {
        return Err(Error::InvalidDescriptor {
            reason: "csv output is only available for simulate".into(),
        });
    }

    match &cli.command {
        Command::Certify { expr } => cmd_certify(&cli, &ctx, expr),
        Command::Quantum { expr, state } => cmd_quantum(&cli, &ctx, expr, state),
        Command::Convert => cmd_convert(&cli, &ctx),
        Command::Robustness { expr, quantum } => cmd_robustness(&cli, &ctx, expr, *quantum),
        Command::Simulate {
            descriptor,
            shots,
            seed,
            eta,
            phase_sigma,
            bs_sigma,
            visibility,
        } => {
            let overrides = SimOverrides {
                shots: *shots,
                seed: *seed,
                eta: *eta,
                phase_sigma: *phase_sigma,
                bs_sigma: *bs_sigma,
                visibility: *visibility,
            };
            cmd_simulate(&cli, &ctx, descriptor, &overrides)
        }
        Command::Catalog => cmd_catalog(&cli, &ctx),
    }
}

fn resolve_expression(ctx: &Context, name: &str) -> Result<InequalityExpression> {
    match name {
        "kappa" => kappa_expression(&ctx.graph),
        "kappa-prime" => kappa_prime_expression(&ctx.graph),
        "bell" => bell_expression(&ctx.graph),
        "yu-oh" => yu_oh_expression(&ctx.graph),
        path => {
            let path = PathBuf::from(path);
            let text = fs::read_to_string(&path).map_err(|e| io_err(e, &path))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn emit(cli: &Cli, text: String) -> Result<()> {
    match &cli.out {
        Some(path) => fs::write(path, text).map_err(|e| io_err(e, path)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CertifyReport {
    expression: String,
    #[serde(with = "rat_serde")]
    claimed_bound: Rational,
    #[serde(with = "rat_serde")]
    bound: Rational,
    maximizer: Assignment,
    evaluations: u64,
    wall_time_ms: u128,
    certified: bool,
}

fn cmd_certify(cli: &Cli, ctx: &Context, expr_name: &str) -> Result<ExitCode> {
    let expr = resolve_expression(ctx, expr_name)?;
    let cert = classical_bound_with_jobs(&expr, ctx.jobs)?;
    let certified = cert.bound == expr.claimed_bound;
    let report = CertifyReport {
        expression: expr.name.clone(),
        claimed_bound: expr.claimed_bound,
        bound: cert.bound,
        maximizer: cert.maximizer.clone(),
        evaluations: cert.evaluations,
        wall_time_ms: cert.wall_time_ms,
        certified,
    };
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&report)?,
        _ => {
            let assignments: Vec<String> = cert
                .maximizer
                .values
                .iter()
                .map(|(o, v)| format!("{o}={v:+}"))
                .collect();
            format!(
                "expression: {}\nclaimed_bound: {}\nbound: {}\nevaluations: {}\nwall_time_ms: {}\nmaximizer: {}\ncertified: {}",
                expr.name,
                expr.claimed_bound,
                cert.bound,
                cert.evaluations,
                cert.wall_time_ms,
                assignments.join(" "),
                certified
            )
        }
    };
    emit(cli, text)?;
    if certified {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "certification mismatch: enumerated bound {} differs from claimed {}",
            cert.bound, expr.claimed_bound
        );
        Ok(ExitCode::from(2))
    }
}

enum StateArg {
    Qutrit(CMat),
    Bipartite(BipartiteState),
}

fn parse_state(ctx: &Context, spec: &str) -> Result<StateArg> {
    if spec == "maximally-mixed" {
        return Ok(StateArg::Qutrit(CMat::identity(3).scaled_re(1.0 / 3.0)));
    }
    if spec == "entangled" {
        return Ok(StateArg::Bipartite(entangled_state()));
    }
    if let Some(v) = spec.strip_prefix("noisy:") {
        let v: f64 = v.parse().map_err(|_| Error::InvalidDescriptor {
            reason: format!("bad visibility in {spec}"),
        })?;
        return Ok(StateArg::Bipartite(noisy_state(v)?));
    }
    if let Some(k) = spec.strip_prefix("ray:") {
        let k: u32 = k.parse().map_err(|_| Error::InvalidDescriptor {
            reason: format!("bad ray index in {spec}"),
        })?;
        return Ok(StateArg::Qutrit(ctx.catalog.ray(k)?.outer()));
    }
    if let Some(list) = spec.strip_prefix("pure:") {
        let parts: Vec<f64> = list
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidDescriptor {
                reason: format!("bad amplitudes in {spec}"),
            })?;
        if parts.len() != 6 {
            return Err(Error::InvalidDescriptor {
                reason: "pure state needs 6 floats: re0,im0,re1,im1,re2,im2".into(),
            });
        }
        let v = CVec3([
            C64::new(parts[0], parts[1]),
            C64::new(parts[2], parts[3]),
            C64::new(parts[4], parts[5]),
        ]);
        if !v.is_normalized(1e-9) {
            return Err(Error::NotNormalized {
                norm_sq: v.norm_sq(),
            });
        }
        return Ok(StateArg::Qutrit(v.outer()));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        #[derive(Deserialize)]
        struct DensityJson {
            re: Vec<Vec<f64>>,
            im: Vec<Vec<f64>>,
        }
        let path = PathBuf::from(path);
        let text = fs::read_to_string(&path).map_err(|e| io_err(e, &path))?;
        let d: DensityJson = serde_json::from_str(&text)?;
        let dim = d.re.len();
        if (dim != 3 && dim != 9)
            || d.im.len() != dim
            || d.re.iter().any(|r| r.len() != dim)
            || d.im.iter().any(|r| r.len() != dim)
        {
            return Err(Error::InvalidDescriptor {
                reason: "density file must be a square 3x3 or 9x9 re/im matrix".into(),
            });
        }
        let m = CMat::from_fn(dim, |i, j| C64::new(d.re[i][j], d.im[i][j]));
        return Ok(if dim == 3 {
            StateArg::Qutrit(m)
        } else {
            StateArg::Bipartite(BipartiteState::new(m)?)
        });
    }
    Err(Error::InvalidDescriptor {
        reason: format!("unknown state spec {spec}"),
    })
}

#[derive(Serialize, Deserialize)]
struct QuantumReport {
    expression: String,
    state: String,
    value: f64,
    #[serde(with = "rat_serde")]
    claimed_bound: Rational,
    gap: f64,
    violates: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    robustness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", with = "opt_rat", default)]
    robustness_rational: Option<Rational>,
}

fn quantum_name(expr: &InequalityExpression) -> String {
    match expr.name.as_str() {
        "kappa" => "kappa_qm".into(),
        "bell" => "beta_qm".into(),
        other => format!("{other}_qm"),
    }
}

fn cmd_quantum(cli: &Cli, ctx: &Context, expr_name: &str, state_spec: &str) -> Result<ExitCode> {
    let expr = resolve_expression(ctx, expr_name)?;
    let state = parse_state(ctx, state_spec)?;
    let value = match &state {
        StateArg::Qutrit(rho) => quantum_value(&expr, &ctx.catalog, rho)?,
        StateArg::Bipartite(s) => quantum_value_bipartite(&expr, &ctx.catalog, s)?,
    };
    let bound = ratio_f64(expr.claimed_bound);
    let violates = value > bound + 1e-12;
    let rob = if violates {
        Some(robustness(&expr, value)?)
    } else {
        None
    };
    let rob_rational = if violates {
        exact_quantum(&expr, ctx, &state)
            .and_then(|q| robustness_rational(&expr, q).ok())
            .filter(|r| (ratio_f64(*r) - rob.unwrap_or(f64::NAN)).abs() <= 1e-9)
    } else {
        None
    };
    let report = QuantumReport {
        expression: expr.name.clone(),
        state: state_spec.into(),
        value,
        claimed_bound: expr.claimed_bound,
        gap: value - bound,
        violates,
        robustness: rob,
        robustness_rational: rob_rational,
    };
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&report)?,
        _ => {
            let mut lines = vec![
                format!("expression: {}", expr.name),
                format!("state: {state_spec}"),
                format!("{}: {}", quantum_name(&expr), value),
                format!("claimed_bound: {}", expr.claimed_bound),
                format!("gap: {}", report.gap),
                format!("violates: {violates}"),
            ];
            if let Some(r) = rob {
                lines.push(format!("robustness: {r}"));
            }
            if let Some(r) = report.robustness_rational {
                lines.push(format!("robustness_exact: {r}"));
            }
            lines.join("\n")
        }
    };
    emit(cli, text)?;
    Ok(ExitCode::SUCCESS)
}

/// Exact rational quantum value when the state admits one.
fn exact_quantum(
    expr: &InequalityExpression,
    ctx: &Context,
    state: &StateArg,
) -> Option<Rational> {
    match state {
        StateArg::Qutrit(_) => quantum_value_rational(expr, &ctx.catalog).ok(),
        StateArg::Bipartite(_) => quantum_endpoints_rational(expr, &ctx.catalog)
            .ok()
            .map(|(ent, _)| ent),
    }
}

fn cmd_convert(cli: &Cli, ctx: &Context) -> Result<ExitCode> {
    let report = convert_pipeline(&ctx.catalog, &ctx.graph, ctx.jobs)?;
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&report)?,
        _ => format!(
            "input: {} (bound {})\nstep1: {} (bound {})\nstep2: {} (lhv_bound {}, {} assignments)\nbeta_qm: {}\nvisibility_threshold: {} = {}",
            report.input_expr.name,
            report.input_expr.claimed_bound,
            report.step1_expr.name,
            report.step1_bound,
            report.step2_expr.name,
            report.lhv_bound,
            report.lhv_evaluations,
            report.quantum_value,
            report.visibility_threshold_rational,
            report.visibility_threshold,
        ),
    };
    emit(cli, text)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
struct RobustnessReport {
    expression: String,
    quantum: f64,
    #[serde(with = "rat_serde")]
    claimed_bound: Rational,
    #[serde(with = "rat_serde")]
    weight_total: Rational,
    robustness: f64,
    #[serde(skip_serializing_if = "Option::is_none", with = "opt_rat", default)]
    robustness_rational: Option<Rational>,
}

fn cmd_robustness(
    cli: &Cli,
    ctx: &Context,
    expr_name: &str,
    quantum: Option<f64>,
) -> Result<ExitCode> {
    let expr = resolve_expression(ctx, expr_name)?;
    let exact = if expr.is_single_system() {
        quantum_value_rational(&expr, &ctx.catalog).ok()
    } else {
        quantum_endpoints_rational(&expr, &ctx.catalog)
            .ok()
            .map(|(ent, _)| ent)
    };
    let quantum = match (quantum, exact) {
        (Some(q), _) => q,
        (None, Some(q)) => ratio_f64(q),
        (None, None) => {
            return Err(Error::InvalidExpression {
                reason: "no exact quantum value available; pass --quantum".into(),
            })
        }
    };
    let rob = robustness(&expr, quantum)?;
    let rob_rational = exact
        .filter(|q| (ratio_f64(*q) - quantum).abs() <= 1e-9)
        .and_then(|q| robustness_rational(&expr, q).ok());
    let report = RobustnessReport {
        expression: expr.name.clone(),
        quantum,
        claimed_bound: expr.claimed_bound,
        weight_total: expr.weight_total(),
        robustness: rob,
        robustness_rational: rob_rational,
    };
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&report)?,
        _ => {
            let mut lines = vec![
                format!("expression: {}", expr.name),
                format!("quantum: {quantum}"),
                format!("claimed_bound: {}", expr.claimed_bound),
                format!("weight_total: {}", expr.weight_total()),
                format!("robustness: {rob}"),
            ];
            if let Some(r) = report.robustness_rational {
                lines.push(format!("robustness_exact: {r}"));
            }
            lines.join("\n")
        }
    };
    emit(cli, text)?;
    Ok(ExitCode::SUCCESS)
}

struct SimOverrides {
    shots: Option<u64>,
    seed: Option<u64>,
    eta: Option<f64>,
    phase_sigma: Option<f64>,
    bs_sigma: Option<f64>,
    visibility: Option<f64>,
}

fn cmd_simulate(
    cli: &Cli,
    ctx: &Context,
    path: &PathBuf,
    overrides: &SimOverrides,
) -> Result<ExitCode> {
    let text = fs::read_to_string(path).map_err(|e| io_err(e, path))?;
    let mut desc: ExperimentDescriptor =
        serde_json::from_str(&text).map_err(|e| Error::InvalidDescriptor {
            reason: format!(
                "{}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ),
        })?;
    if let Some(shots) = overrides.shots {
        desc.shots = shots;
    }
    if let Some(seed) = overrides.seed {
        desc.seed = seed;
    }
    if let Some(eta) = overrides.eta {
        desc.noise.detector_efficiency = eta;
    }
    if let Some(s) = overrides.phase_sigma {
        desc.noise.wedge_phase_jitter_sigma = s;
    }
    if let Some(s) = overrides.bs_sigma {
        desc.noise.bs_transmittance_error_sigma = s;
    }
    if let Some(v) = overrides.visibility {
        desc.noise.source_visibility = v;
    }

    let report = run_experiment(&desc, &ctx.catalog, &ctx.graph, ctx.jobs)?;
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&report)?,
        Format::Csv => report_to_csv(&report),
        Format::Text => {
            let mut lines = vec![format!(
                "experiment: {} ({} shots/term, seed {})",
                report.experiment, report.shots_per_term, report.seed
            )];
            for t in &report.terms {
                lines.push(format!(
                    "  {}: {:+.6} +- {:.6} ({} detected / {} emitted)",
                    t.term, t.estimate, t.stderr, t.shots_detected, t.shots_emitted
                ));
            }
            if let (Some(v), Some(s)) = (report.value, report.stderr) {
                let name = match report.expression.as_deref() {
                    Some("kappa") => "kappa_hat",
                    Some("bell") => "beta_hat",
                    _ => "value",
                };
                lines.push(format!("{name}: {v} +- {s}"));
            }
            if let Some(b) = report.claimed_bound {
                lines.push(format!("claimed_bound: {b}"));
            }
            lines.join("\n")
        }
    };
    emit(cli, text)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
struct CatalogExport {
    rays: Vec<RayJson>,
    edges: Vec<(u32, u32)>,
}

fn cmd_catalog(cli: &Cli, ctx: &Context) -> Result<ExitCode> {
    let export = CatalogExport {
        rays: ctx.catalog.to_json(),
        edges: ctx.graph.edges(),
    };
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&export)?,
        _ => {
            let mut lines: Vec<String> = export
                .rays
                .iter()
                .map(|r| {
                    format!(
                        "v{}: ({:+.6}, {:+.6}, {:+.6})",
                        r.index, r.re[0], r.re[1], r.re[2]
                    )
                })
                .collect();
            lines.push(format!(
                "edges ({}): {}",
                export.edges.len(),
                export
                    .edges
                    .iter()
                    .map(|(i, j)| format!("{i}-{j}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            ));
            lines.join("\n")
        }
    };
    emit(cli, text)?;
    Ok(ExitCode::SUCCESS)
}
