use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpkron_cli::commands::{
    cmd_bounds, cmd_errors, cmd_oracle_check, cmd_rankplot, cmd_sincplot, cmd_solve, solution_csv, RankSource,
};
use qpkron_cli::config::{Method, StopKind};
use qpkron_cli::{CliError, CliResult, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "qpkron",
    version,
    about = "Low-rank Kronecker solver with guaranteed error bounds"
)]
struct Cli {
    /// Run configuration (TOML, or JSON when the name ends in .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; records go to standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the numerical kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed of the random initial iterate.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the configuration file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Interior nodes per dimension.
    #[arg(long, global = true, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    sinc_m: Option<usize>,
    #[arg(long, global = true)]
    truncation_tol: Option<f64>,
    #[arg(long, global = true)]
    max_rank: Option<usize>,
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, global = true, value_parser = parse_stop)]
    stop: Option<StopKind>,
    #[arg(long, global = true)]
    certificates: bool,
    #[arg(long, global = true)]
    oracle: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the solver and write the run record.
    Solve,
    /// Report ratio bounds, the optimal relaxation parameter and the contraction factor.
    Bounds {
        /// Also compute the discrete generalized eigenvalue extremes.
        #[arg(long)]
        discrete: bool,
    },
    /// Per-step two-sided error certificates.
    Errors,
    /// Singular value profile of a two-dimensional solution as CSV.
    Rankplot {
        #[arg(long, value_enum, default_value = "solve")]
        source: RankSource,
    },
    /// Sinc inverse error against the number of quadrature nodes as CSV.
    Sincplot,
    /// End-to-end checks against the direct solution.
    OracleCheck,
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "fixed_point" | "fixed-point" => Ok(Method::FixedPoint),
        "pcg" => Ok(Method::Pcg),
        _ => Err(format!("unknown method {s}; expected fixed_point or pcg")),
    }
}

fn parse_stop(s: &str) -> Result<StopKind, String> {
    match s {
        "residual" => Ok(StopKind::Residual),
        "ostrowski_gap" | "ostrowski-gap" => Ok(StopKind::OstrowskiGap),
        _ => Err(format!("unknown stop rule {s}; expected residual or ostrowski_gap")),
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = &self.sizes {
            cfg.problem.sizes = s.clone();
        }
        let s = &mut cfg.solver;
        if let Some(v) = self.max_iterations {
            s.max_iterations = v;
        }
        if let Some(v) = self.tol {
            s.tol = v;
        }
        if let Some(v) = self.rho {
            s.rho = Some(v);
        }
        if let Some(v) = self.truncation_tol {
            s.truncation_tol = Some(v);
        }
        if let Some(v) = self.max_rank {
            s.max_rank = Some(v);
        }
        if let Some(v) = self.method {
            s.method = v;
        }
        if let Some(v) = self.stop {
            s.stop = v;
        }
        s.certificates |= self.certificates;
        s.oracle |= self.oracle;
        if let Some(m) = self.sinc_m {
            cfg.preconditioner.sinc_m = Some(m);
        }
    }
}

/// Writes `contents` to `dir/name`, or to standard output without a directory.
fn emit(dir: Option<&Path>, name: &str, contents: &str) -> CliResult<()> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            std::fs::write(d.join(name), contents)?;
        }
        None => std::io::stdout().lock().write_all(contents.as_bytes())?,
    }
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn run(cli: Cli) -> CliResult<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cli.overrides.apply(&mut cfg);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = Some(out.clone());
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {n} threads: {e}")))?;
    }
    let dir = cfg.output.dir.clone();
    let dir = dir.as_deref();
    match cli.command {
        Command::Solve => {
            if cfg.output.solution_csv && dir.is_none() {
                return Err(CliError::Config("output.solution_csv needs an output directory".into()));
            }
            let (record, u) = cmd_solve(&cfg)?;
            emit(dir, "run_record.json", &json(&record)?)?;
            if cfg.output.solution_csv {
                emit(dir, "solution.csv", &solution_csv(&u)?)?;
            }
        }
        Command::Bounds { discrete } => emit(dir, "bounds.json", &json(&cmd_bounds(&cfg, discrete)?)?)?,
        Command::Errors => emit(dir, "errors.json", &json(&cmd_errors(&cfg)?)?)?,
        Command::Rankplot { source } => emit(dir, "rankplot.csv", &cmd_rankplot(&cfg, source)?)?,
        Command::Sincplot => emit(dir, "sincplot.csv", &cmd_sincplot(&cfg)?)?,
        Command::OracleCheck => {
            let report = cmd_oracle_check(&cfg)?;
            emit(dir, "oracle_check.json", &json(&report)?)?;
            let failed = report
                .checks
                .iter()
                .filter(|c| c.status == qpkron_cli::record::CheckStatus::Fail)
                .count();
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
