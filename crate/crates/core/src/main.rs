//! Command-line experiment harness for half-precision incomplete Cholesky
//! preconditioning with mixed-precision iterative refinement.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ichol_half::experiment::{
    parse_fixture, run_experiment, suitesparse_urls, ExperimentConfig, MatrixSource, ReportFormat,
};
use ichol_half::factorize::{IcOptions, Precision};
use ichol_half::krylov::{IrConfig, SolverKind, UNIT_ROUNDOFF_F64};

/// Environment variable naming a directory of Matrix Market files; matrix
/// identifiers like `Boeing/msc01050` are resolved against it.
const MATRIX_DIR_ENV: &str = "ICHOL_MATRIX_DIR";

#[derive(Parser)]
#[command(
    name = "ichol-half",
    about = "Breakdown-robust incomplete Cholesky in emulated half precision with GMRES-IR/CG-IR",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on one matrix and emit a report.
    Run(RunArgs),
    /// Print download URLs for the ill-conditioned SuiteSparse test set.
    Urls,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Fp16,
    Fp32,
    Fp64,
    Bf16,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Precision {
        match p {
            PrecisionArg::Fp16 => Precision::Fp16,
            PrecisionArg::Fp32 => Precision::Fp32,
            PrecisionArg::Fp64 => Precision::Fp64,
            PrecisionArg::Bf16 => Precision::Bf16,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Gmres,
    Cg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Parser)]
struct RunArgs {
    /// Matrix source: a Matrix Market path, `fixture:NAME[,k=v,...]`, or a
    /// SuiteSparse identifier resolved under $ICHOL_MATRIX_DIR.
    #[arg(long)]
    matrix: String,

    /// Fill level of the IC(level) pattern.
    #[arg(long, default_value_t = 2)]
    level: u32,

    /// Factorization precision.
    #[arg(long, value_enum, default_value_t = PrecisionArg::Fp16)]
    precision: PrecisionArg,

    /// Pivot threshold; defaults to 1e-5 (fp16/bf16), 1e-30 (fp32), 1e-20 (fp64).
    #[arg(long)]
    tau_u: Option<f64>,

    /// Disable the look-ahead diagonal tests (enabled by default).
    #[arg(long)]
    no_lookahead: bool,

    /// GMW local modification parameter beta; implies no look-ahead.
    #[arg(long, conflicts_with = "no_lookahead")]
    gmw: Option<f64>,

    /// Initial global shift.
    #[arg(long, default_value_t = 1e-3)]
    shift_init: f64,

    #[arg(long, default_value_t = 40)]
    max_restarts: usize,

    /// Squeeze flush tolerance for 16-bit factorization precisions.
    #[arg(long, default_value_t = 1e-5)]
    flush_tol: f64,

    /// Inner Krylov solver.
    #[arg(long, value_enum, default_value_t = SolverArg::Gmres)]
    solver: SolverArg,

    /// Inner relative residual tolerance; defaults to u64^(1/4).
    #[arg(long)]
    inner_tol: Option<f64>,

    #[arg(long, default_value_t = 1000)]
    max_inner: usize,

    #[arg(long, default_value_t = 20)]
    max_outer: usize,

    /// Outer backward-error threshold; defaults to 1e3 * u64.
    #[arg(long)]
    delta: Option<f64>,

    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,

    /// Seed for synthetic fixtures.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn resolve_matrix(arg: &str) -> Result<(MatrixSource, Option<String>), String> {
    if let Some(fixture) = arg.strip_prefix("fixture:") {
        let spec = parse_fixture(fixture).map_err(|e| e.to_string())?;
        return Ok((MatrixSource::Fixture(spec), None));
    }
    let direct = PathBuf::from(arg);
    if direct.exists() {
        return Ok((MatrixSource::Path(direct), None));
    }
    // SuiteSparse-style identifier `Group/name`: look under the matrix dir
    // as <dir>/<name>.mtx and <dir>/<group>/<name>.mtx.
    if let Some((group, name)) = arg.split_once('/') {
        if let Ok(dir) = std::env::var(MATRIX_DIR_ENV) {
            let dir = PathBuf::from(dir);
            for cand in [
                dir.join(format!("{name}.mtx")),
                dir.join(group).join(format!("{name}.mtx")),
            ] {
                if cand.exists() {
                    return Ok((MatrixSource::Path(cand), Some(arg.to_string())));
                }
            }
            return Err(format!(
                "identifier `{arg}` not found under ${MATRIX_DIR_ENV}; expected {name}.mtx"
            ));
        }
        return Err(format!(
            "`{arg}` is neither a file nor a fixture; set ${MATRIX_DIR_ENV} to resolve identifiers"
        ));
    }
    Err(format!("matrix source `{arg}` not found"))
}

fn run(args: RunArgs) -> Result<(), String> {
    let (matrix, identifier) = resolve_matrix(&args.matrix)?;
    let precision: Precision = args.precision.into();
    let mut ic = IcOptions::for_precision(precision);
    if let Some(tau) = args.tau_u {
        ic.tau_u = tau;
    }
    ic.lookahead = !args.no_lookahead && args.gmw.is_none();
    ic.gmw = args.gmw;
    ic.shift_init = args.shift_init;
    ic.max_restarts = args.max_restarts;
    ic.flush_tol = args.flush_tol;

    let mut ir = IrConfig {
        solver: match args.solver {
            SolverArg::Gmres => SolverKind::Gmres,
            SolverArg::Cg => SolverKind::Cg,
        },
        max_inner: args.max_inner,
        itmax_outer: args.max_outer,
        ..IrConfig::default()
    };
    if let Some(tol) = args.inner_tol {
        ir.inner_tol = tol;
    }
    if let Some(delta) = args.delta {
        ir.delta = delta;
    } else {
        ir.delta = 1e3 * UNIT_ROUNDOFF_F64;
    }

    let format = match args.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let cfg = ExperimentConfig {
        matrix,
        identifier,
        level: args.level,
        ic,
        ir,
        format,
        seed: args.seed,
    };
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let rendered = report.render(format);
    match args.out {
        Some(path) => std::fs::write(&path, rendered + "\n")
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => println!("{rendered}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Urls => {
            for url in suitesparse_urls() {
                println!("{url}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
