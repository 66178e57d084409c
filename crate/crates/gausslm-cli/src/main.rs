//! Command-line front end: frame construction, single inequality checks,
//! sweep execution, and sample dumps.
//!
//! Exit codes: 0 holds / success, 1 violated, 2 invalid parameters,
//! 3 indeterminate, 4 vacuous.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gausslm::catalog::function_from_grammar;
use gausslm::estimate::{BackendKind, Estimator};
use gausslm::frames::{
    build_correlation_frame, build_sr_simplex, identity_decomposition, tensor_lift,
    FrameDocument,
};
use gausslm::functions::LogCurvature;
use gausslm::gaussian::{
    sample_correlated_frame, sample_correlated_mixture, write_samples_csv, BlockCovariance,
    GaussianSampler,
};
use gausslm::sweep::{
    run_sweep, write_csv_digest, write_jsonl_report, ReportHeader, SweepPlan, SweepSummary,
};
use gausslm::verify::{
    check_block_holder, check_chain, check_entropy_laplacian, check_entropy_stein,
    check_integration_by_parts, check_log_sobolev_sandwich, check_sqrt_moment,
    InequalityVerdict, VerdictStatus,
};

const EXIT_OK: u8 = 0;
const EXIT_VIOLATED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INDETERMINATE: u8 = 3;
const EXIT_VACUOUS: u8 = 4;

#[derive(Parser)]
#[command(
    name = "gausslm",
    about = "Verify Gaussian moment and entropy inequalities for log-concave functions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the correlation frame for (n, t), verify its identity
    /// decomposition, and print the block-covariance spectrum.
    Frames(FramesArgs),
    /// Run a single inequality check against one function.
    Check(CheckArgs),
    /// Execute a sweep plan and write JSON-lines + CSV reports.
    Sweep(SweepArgs),
    /// Dump correlated Gaussian sample tuples as CSV.
    Sample(SampleArgs),
}

#[derive(Args)]
struct FramesArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Emit the frame document as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// One of: sqrt-moment, chain, block-holder, entropy-stein,
    /// entropy-laplacian, integration-by-parts, log-sobolev.
    check: String,
    /// Function spec: `gauss:A=1,a=0,c=0`, `gauss:A=diag(1,2),a=(0,0),c=0`,
    /// `gauss:A=@matrix.json,...`, or `builtin:name,key=value,...`.
    #[arg(long = "fn")]
    function: String,
    /// Moment order / scale parameter.
    #[arg(long)]
    s: Option<f64>,
    /// Alias for --s.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// closed | quad | mc | auto
    #[arg(long, default_value = "auto")]
    backend: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Override the claimed curvature: log-concave | log-convex.
    #[arg(long)]
    claim: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Path to the JSON plan.
    plan: PathBuf,
    /// Report base path (writes <out>.jsonl and <out>.csv); overrides
    /// the plan's own `out` field.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the shared-component mixture construction (t >= 0 only)
    /// instead of the frame contraction.
    #[arg(long)]
    mixture: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("GAUSSLM_THREADS") {
        if let Ok(count) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(count)
                .build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Frames(args) => cmd_frames(args),
        Command::Check(args) => cmd_check(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Sample(args) => cmd_sample(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn cmd_frames(args: FramesArgs) -> gausslm::Result<u8> {
    let simplex = build_sr_simplex(args.n)?;
    let frame = build_correlation_frame(&simplex, args.t)?;
    let decomp = identity_decomposition(&frame)?;
    let lifted = tensor_lift(&decomp, args.k)?;
    let cov = BlockCovariance::from_frame(&frame, args.k)?;

    let residual = lifted
        .identity_residual()
        .max(decomp.identity_residual())
        .max(frame.residual())
        .max(simplex.residual());
    let spectrum = cov.eigenvalues();

    if args.json {
        let doc = FrameDocument::from_parts(&frame, &lifted);
        let payload = serde_json::json!({
            "frame": doc,
            "residual": residual,
            "spectrum": spectrum,
            "p": frame.p(),
            "q": frame.q(),
        });
        println!("{}", serde_json::to_string_pretty(&payload)?);
    } else {
        println!(
            "frame n={} t={} (p={:.5}, q={:.5})",
            args.n,
            args.t,
            frame.p(),
            frame.q()
        );
        for (i, u) in frame.vectors().iter().enumerate() {
            let coords: Vec<String> = u.iter().map(|x| format!("{x:.5}")).collect();
            println!("  u{} = ({})", i + 1, coords.join(", "));
        }
        println!(
            "decomposition: {} terms, identity residual {:.3e}",
            lifted.terms().len(),
            residual
        );
        let lo = spectrum.first().copied().unwrap_or(0.0);
        let hi = spectrum.last().copied().unwrap_or(0.0);
        println!(
            "block covariance spectrum (k={}): [{:.5}, {:.5}]",
            args.k, lo, hi
        );
    }
    Ok(if residual < 1e-12 { EXIT_OK } else { EXIT_VIOLATED })
}

fn parse_backend(name: &str) -> gausslm::Result<BackendKind> {
    match name {
        "closed" | "closed_form" => Ok(BackendKind::ClosedForm),
        "quad" | "quadrature" => Ok(BackendKind::Quadrature),
        "mc" | "monte_carlo" => Ok(BackendKind::MonteCarlo),
        "auto" => Ok(BackendKind::Auto),
        other => Err(gausslm::Error::InvalidParameter(format!(
            "unknown backend {other:?}; use closed, quad, mc, or auto"
        ))),
    }
}

fn parse_claim(name: &str) -> gausslm::Result<LogCurvature> {
    match name {
        "log-concave" | "log_concave" => Ok(LogCurvature::LogConcave),
        "log-convex" | "log_convex" => Ok(LogCurvature::LogConvex),
        other => Err(gausslm::Error::InvalidParameter(format!(
            "unknown curvature claim {other:?}"
        ))),
    }
}

fn cmd_check(args: CheckArgs) -> gausslm::Result<u8> {
    let function = function_from_grammar(&args.function)?;
    let mut estimator = Estimator::new(parse_backend(&args.backend)?).with_seed(args.seed);
    if let Some(samples) = args.samples {
        estimator.mc_samples = samples;
    }
    if let Some(nodes) = args.nodes {
        estimator.quad_nodes = nodes;
    }

    let s = match (args.s, args.q) {
        (Some(_), Some(_)) => {
            return Err(gausslm::Error::InvalidParameter(
                "--s and --q are aliases; give only one".into(),
            ))
        }
        (a, b) => a.or(b),
    };
    let claim = match &args.claim {
        Some(text) => Some(parse_claim(text)?),
        None => function.effective_claim(),
    };
    let need_claim = || {
        claim.ok_or_else(|| {
            gausslm::Error::InvalidParameter(
                "function has no certified curvature; pass --claim".into(),
            )
        })
    };

    let verdicts: Vec<InequalityVerdict> = match args.check.as_str() {
        "sqrt-moment" => {
            let s = s.ok_or_else(|| {
                gausslm::Error::InvalidParameter("sqrt-moment needs --s (or --q)".into())
            })?;
            vec![check_sqrt_moment(&estimator, &function.model, s, need_claim()?)?]
        }
        "chain" => {
            let n = args.n.unwrap_or(2);
            let t = args.t.unwrap_or(0.5);
            check_chain(&estimator, &function.model, n, t, args.k)?.to_vec()
        }
        "block-holder" => {
            let n = args.n.unwrap_or(2);
            let t = args.t.unwrap_or(0.5);
            let factors: Vec<_> = (0..n).map(|_| function.model.clone()).collect();
            check_block_holder(&estimator, &factors, n, t, args.k)?.to_vec()
        }
        "entropy-stein" => {
            vec![check_entropy_stein(&estimator, &function.model, need_claim()?)?]
        }
        "entropy-laplacian" => {
            vec![check_entropy_laplacian(&estimator, &function.model, need_claim()?)?]
        }
        "integration-by-parts" => {
            let dim = function.model.dim();
            let cov = match (args.n, args.t) {
                (Some(n), t) => {
                    if n == 0 || dim % n != 0 {
                        return Err(gausslm::Error::InvalidParameter(format!(
                            "--n {n} must divide the function dimension {dim}"
                        )));
                    }
                    BlockCovariance::constant_correlation(n, dim / n, t.unwrap_or(0.0))?
                }
                (None, Some(t)) => BlockCovariance::constant_correlation(dim, 1, t)?,
                (None, None) => BlockCovariance::constant_correlation(1, dim, 0.0)?,
            };
            vec![check_integration_by_parts(&estimator, &function.model, &cov)?]
        }
        "log-sobolev" => check_log_sobolev_sandwich(&estimator, &function.model)?.to_vec(),
        other => {
            return Err(gausslm::Error::InvalidParameter(format!(
                "unknown check {other:?}"
            )))
        }
    };

    let mut out = std::io::stdout().lock();
    for v in &verdicts {
        let mut tagged = v.clone();
        tagged
            .params
            .insert("fn".into(), serde_json::json!(function.id));
        if args.json {
            writeln!(out, "{}", serde_json::to_string(&tagged)?)?;
        } else {
            print_verdict(&mut out, &tagged)?;
        }
    }
    if !args.json && args.check == "log-sobolev" {
        if let Some(upper) = verdicts.iter().find(|v| v.check.ends_with("upper")) {
            if upper.slack.is_finite() {
                writeln!(out, "deficit gap: {:.5}", upper.slack)?;
            }
        }
    }
    Ok(exit_code(&verdicts))
}

fn print_verdict<W: Write>(out: &mut W, v: &InequalityVerdict) -> std::io::Result<()> {
    let relation = match v.relation {
        gausslm::verify::Relation::Leq => "<=",
        gausslm::verify::Relation::Geq => ">=",
        gausslm::verify::Relation::Eq => "==",
    };
    writeln!(out, "{}", v.check)?;
    match (&v.lhs, &v.rhs) {
        (Some(l), Some(r)) => {
            writeln!(
                out,
                "  lhs = {:.9} ({:?}, err {:.2e})",
                l.value, l.method, l.error
            )?;
            writeln!(
                out,
                "  rhs = {:.9} ({:?}, err {:.2e})",
                r.value, r.method, r.error
            )?;
            writeln!(
                out,
                "  asserted lhs {relation} rhs: slack {:.6e}, tol {:.2e}",
                v.slack, v.tolerance
            )?;
        }
        _ => {
            if let Some(note) = &v.note {
                writeln!(out, "  {note}")?;
            }
        }
    }
    let status = match v.status {
        VerdictStatus::Holds => "HOLDS",
        VerdictStatus::Violated => "VIOLATED",
        VerdictStatus::Indeterminate => "INDETERMINATE",
        VerdictStatus::Vacuous => "VACUOUS",
    };
    writeln!(out, "  status: {status}")
}

fn exit_code(verdicts: &[InequalityVerdict]) -> u8 {
    let mut code = EXIT_OK;
    for v in verdicts {
        let this = match v.status {
            VerdictStatus::Holds => EXIT_OK,
            VerdictStatus::Violated => EXIT_VIOLATED,
            VerdictStatus::Indeterminate => EXIT_INDETERMINATE,
            VerdictStatus::Vacuous => EXIT_VACUOUS,
        };
        code = worst(code, this);
    }
    code
}

/// Severity order: violated > indeterminate > vacuous > ok.
fn worst(a: u8, b: u8) -> u8 {
    let rank = |c: u8| match c {
        EXIT_VIOLATED => 3,
        EXIT_INDETERMINATE => 2,
        EXIT_VACUOUS => 1,
        _ => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn cmd_sweep(args: SweepArgs) -> gausslm::Result<u8> {
    let text = std::fs::read_to_string(&args.plan)?;
    let plan = SweepPlan::from_json(&text)?;
    let verdicts = run_sweep(&plan)?;
    let summary = SweepSummary::tally(&verdicts);

    let base = args
        .out
        .or_else(|| plan.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("sweep_report"));
    let jsonl_path = base.with_extension("jsonl");
    let csv_path = base.with_extension("csv");

    let header = ReportHeader::for_plan(&plan);
    write_jsonl_report(
        BufWriter::new(File::create(&jsonl_path)?),
        &header,
        &verdicts,
    )?;
    write_csv_digest(BufWriter::new(File::create(&csv_path)?), &verdicts)?;

    println!(
        "{} verdicts: {} hold, {} violated, {} indeterminate, {} vacuous",
        verdicts.len(),
        summary.holds,
        summary.violated,
        summary.indeterminate,
        summary.vacuous
    );
    for v in verdicts.iter().filter(|v| v.status == VerdictStatus::Violated) {
        println!(
            "VIOLATED {} {} slack {:.3e}",
            v.check,
            serde_json::to_string(&v.params)?,
            v.slack
        );
    }
    println!("report: {} and {}", jsonl_path.display(), csv_path.display());
    Ok(if summary.violated > 0 {
        EXIT_VIOLATED
    } else {
        EXIT_OK
    })
}

fn cmd_sample(args: SampleArgs) -> gausslm::Result<u8> {
    let sampler = GaussianSampler::new(args.seed, 0, 0);
    let tuples = if args.mixture {
        sample_correlated_mixture(args.t, args.n, args.k, &sampler, args.count)?
    } else {
        let frame = build_correlation_frame(&build_sr_simplex(args.n)?, args.t)?;
        sample_correlated_frame(&frame, args.k, &sampler, args.count)?
    };
    match args.out {
        Some(path) => write_samples_csv(BufWriter::new(File::create(path)?), &tuples)?,
        None => write_samples_csv(std::io::stdout().lock(), &tuples)?,
    }
    Ok(EXIT_OK)
}
