//! Command-line driver: benchmark solves, refinement studies, arc-length paths, AS-G1 and
//! C1-basis checks, and geometry export.
//!
//! Exit codes: 0 success, 1 a verification reported failure, 2 nonconvergence, 3 input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use c1shell::c1basis::{dimension_formula, C1Space, Discretisation};
use c1shell::factory::{make_case, CaseName, AS_G1_TOL};
use c1shell::gluing::verify_as_g1;
use c1shell::io::{read_geometry, run, write_geometry, Analysis, RunConfig};
use c1shell::topology::{build_topology, default_tolerance, MultiPatchSurface};
use c1shell::Error;

#[derive(Parser)]
#[command(name = "c1shell", version, about = "Kirchhoff-Love shells on AS-G1 multi-patch surfaces with a C1 spline basis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case on one mesh level.
    Solve(RunArgs),
    /// Linear refinement study over several levels.
    Converge(RunArgs),
    /// Arc-length continuation; writes the load-displacement path.
    Path(RunArgs),
    /// Check the AS-G1 condition on every interface.
    VerifyG1(GeometryArgs),
    /// Build the C1 basis and check dimension and two-sided smoothness.
    BasisCheck(BasisArgs),
    /// Write a benchmark geometry in the text format.
    ExportGeometry {
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Benchmark name.
    #[arg(long)]
    case: Option<String>,
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    /// Comma-separated element counts per patch direction, one per level.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    /// linear, newton or arclength.
    #[arg(long)]
    analysis: Option<String>,
    /// Load factor of a Newton solve.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Arc-length radius.
    #[arg(long)]
    delta_l: Option<f64>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    stop_after_limit: Option<bool>,
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Stress samples per patch and direction in the VTK export.
    #[arg(long)]
    vtk_samples: Option<usize>,
    /// Single-threaded assembly.
    #[arg(long)]
    serial: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    case: Option<String>,
    p: Option<usize>,
    r: Option<usize>,
    levels: Option<Vec<usize>>,
    analysis: Option<String>,
    lambda: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    delta_l: Option<f64>,
    psi: Option<f64>,
    max_steps: Option<usize>,
    stop_after_limit: Option<bool>,
    lambda_max: Option<f64>,
    vtk_samples: Option<usize>,
    serial: Option<bool>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GeometryArgs {
    #[arg(long, conflicts_with = "geometry")]
    case: Option<String>,
    /// Geometry file in the text format.
    #[arg(long)]
    geometry: Option<PathBuf>,
}

#[derive(Args)]
struct BasisArgs {
    #[command(flatten)]
    source: GeometryArgs,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    r: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Sample points per interface.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

enum Failure {
    Check(String),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn input(msg: impl Into<String>) -> Failure {
    Failure::Error(Error::Parameter(msg.into()))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. } | Error::ArcLength(_) | Error::Solver(_) | Error::NonFinite(_) => 2,
        _ => 3,
    }
}

fn merge(args: RunArgs) -> Result<RunArgs, Failure> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            toml::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    Ok(RunArgs {
        case: args.case.or(file.case),
        config: args.config,
        p: args.p.or(file.p),
        r: args.r.or(file.r),
        levels: args.levels.or(file.levels),
        analysis: args.analysis.or(file.analysis),
        lambda: args.lambda.or(file.lambda),
        tol: args.tol.or(file.tol),
        max_iter: args.max_iter.or(file.max_iter),
        delta_l: args.delta_l.or(file.delta_l),
        psi: args.psi.or(file.psi),
        max_steps: args.max_steps.or(file.max_steps),
        stop_after_limit: args.stop_after_limit.or(file.stop_after_limit),
        lambda_max: args.lambda_max.or(file.lambda_max),
        vtk_samples: args.vtk_samples.or(file.vtk_samples),
        serial: args.serial.or(file.serial),
        out: args.out.or(file.out),
    })
}

fn run_config(args: RunArgs, default_analysis: Analysis) -> Result<RunConfig, Failure> {
    let args = merge(args)?;
    let case = CaseName::parse(args.case.as_deref().ok_or_else(|| input("--case is required"))?)?;
    let mut c = RunConfig::new(case, args.out.unwrap_or_else(|| PathBuf::from("results")));
    c.analysis = match args.analysis {
        Some(a) => Analysis::parse(&a)?,
        None => default_analysis,
    };
    c.p = args.p.unwrap_or(c.p);
    c.r = args.r.unwrap_or(c.r);
    c.levels = args.levels.unwrap_or(c.levels);
    c.lambda = args.lambda.unwrap_or(c.lambda);
    c.newton.tol = args.tol.unwrap_or(c.newton.tol);
    c.newton.max_iter = args.max_iter.unwrap_or(c.newton.max_iter);
    c.arc_length.newton = c.newton.clone();
    c.arc_length.delta_l = args.delta_l.or(c.arc_length.delta_l);
    c.arc_length.psi = args.psi.unwrap_or(c.arc_length.psi);
    c.arc_length.max_steps = args.max_steps.unwrap_or(c.arc_length.max_steps);
    c.arc_length.stop_after_limit = args.stop_after_limit.unwrap_or(c.arc_length.stop_after_limit);
    c.arc_length.lambda_max = args.lambda_max.or(c.arc_length.lambda_max);
    c.vtk_samples = args.vtk_samples.unwrap_or(c.vtk_samples);
    c.parallel = !args.serial.unwrap_or(false);
    Ok(c)
}

fn load_surface(args: &GeometryArgs) -> Result<MultiPatchSurface, Failure> {
    match (&args.case, &args.geometry) {
        (Some(name), None) => Ok(make_case(CaseName::parse(name)?)?.surface),
        (None, Some(path)) => Ok(read_geometry(path)?),
        _ => Err(input("give exactly one of --case and --geometry")),
    }
}

fn report_run(config: &RunConfig) -> Result<(), Failure> {
    let out = run(config)?;
    for row in &out.convergence {
        println!("level {} dofs {} w_A {:.10e} B {:.10e}", row.level, row.dofs, row.w_a, row.b);
    }
    if let Some(last) = out.path.last() {
        println!("path: {} points, final lambda {:.6}", out.path.len(), last.lambda);
    }
    match out.limit_load {
        Some(l) => println!("limit load factor {l:.6}"),
        None if config.analysis == Analysis::ArcLength => println!("no limit point detected"),
        None => {}
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn verify(args: &GeometryArgs) -> Result<(), Failure> {
    let surface = load_surface(args)?;
    let topo = build_topology(&surface, default_tolerance(&surface))?;
    let reports = verify_as_g1(&surface, &topo);
    let mut failed = 0;
    for r in &reports {
        let ok = r.passes(AS_G1_TOL);
        failed += usize::from(!ok);
        println!("edge {:>3} residual {:.3e} {}", r.edge, r.residual, if ok { "ok" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} edges violate the AS-G1 condition", reports.len())));
    }
    println!("AS-G1: all {} edges pass", reports.len());
    Ok(())
}

fn basis_check(args: &BasisArgs) -> Result<(), Failure> {
    let surface = load_surface(&args.source)?;
    let topo = build_topology(&surface, default_tolerance(&surface))?;
    let disc = Discretisation::new(args.p, args.r, args.k);
    let space = C1Space::new(&surface, &topo, disc)?;
    let formula = dimension_formula(&topo, disc);
    let [patch, edge, vertex] = space.kind_ranges.clone().map(|r| r.len());
    println!("dim {} (patch {patch}, edge {edge}, vertex {vertex}), formula {formula}", space.dim());
    let report = space.check_c1(args.samples)?;
    println!(
        "C1: value error {:.3e}, gradient error {:.3e} over {} function/interface pairs",
        report.max_value_error, report.max_gradient_error, report.pairs_checked
    );
    let (_, residual) = space.constant_coefficients()?;
    println!("constant fit residual {residual:.3e}");
    if space.dim() != formula || !report.passes(args.tol) {
        return Err(Failure::Check("basis check failed".into()));
    }
    Ok(())
}

fn export(case: &str, out: &Path) -> Result<(), Failure> {
    let surface = make_case(CaseName::parse(case)?)?.surface;
    std::fs::write(out, write_geometry(&surface)).map_err(Error::from)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => run_config(a, Analysis::Linear).and_then(|mut c| {
            c.levels.truncate(1);
            report_run(&c)
        }),
        Command::Converge(a) => run_config(a, Analysis::Linear).and_then(|c| report_run(&c)),
        Command::Path(a) => run_config(a, Analysis::ArcLength).and_then(|c| report_run(&c)),
        Command::VerifyG1(a) => verify(&a),
        Command::BasisCheck(a) => basis_check(&a),
        Command::ExportGeometry { case, out } => export(&case, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
