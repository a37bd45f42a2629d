//! Subcommand implementations. Each returns its record; writing is left to the caller.

use nalgebra::{DMatrix, DVector};
use qpkron::kron_fem::{densify, MassTreatment, DENSIFY_CAP};
use qpkron::lowrank::{energy_norm, kron_matvec, LowRankVector, TruncationPolicy};
use qpkron::precond::{ExactInverse, InverseOperator};
use qpkron::problem::DiscreteProblem;
use qpkron::sinc_inv::build_inverse;
use qpkron::solver::{
    build_preconditioner, iterate_from, pcg_solve, IterationOutcome, PreconditionerKind, SolveConfig, StopRule,
    RATIO_SLACK,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{InitialIterate, Method, RunConfig};
use crate::error::{CliError, CliResult};
use crate::record::{
    BoundsRecord, CheckResult, CheckStatus, ErrorRow, ErrorsRecord, OracleCheckReport, RunRecord, StepRecord, VERSION,
};

/// Largest number of unknowns for which `bounds --discrete` expands the operators.
pub const DISCRETE_BOUNDS_CAP: usize = 2048;

/// Errors below this fraction of the initial error are treated as round-off in rate checks.
const NOISE_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum RankSource {
    /// The iterate returned by the configured solver.
    Solve,
    /// The direct solution.
    Oracle,
}

fn initial_iterate(cfg: &RunConfig, problem: &DiscreteProblem<f64>) -> Option<LowRankVector<f64>> {
    let sizes = problem.rhs.sizes();
    match cfg.solver.initial {
        InitialIterate::Preconditioned => None,
        InitialIterate::Zero => Some(LowRankVector::zeros(&sizes)),
        InitialIterate::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Some(match sizes.as_slice() {
                [n] => LowRankVector::plain(DVector::from_fn(*n, |_, _| rng.gen_range(-1.0..=1.0))),
                _ => {
                    LowRankVector::from_matrix(&DMatrix::from_fn(sizes[0], sizes[1], |_, _| rng.gen_range(-1.0..=1.0)))
                }
            })
        }
    }
}

fn run_fixed_point(
    cfg: &RunConfig,
    solve: &SolveConfig<f64>,
    problem: &DiscreteProblem<f64>,
    oracle: Option<&LowRankVector<f64>>,
) -> CliResult<IterationOutcome<f64>> {
    let u0 = initial_iterate(cfg, problem);
    Ok(iterate_from(solve, problem, u0.as_ref(), oracle)?)
}

fn oracle_for(cfg: &RunConfig, problem: &DiscreteProblem<f64>) -> CliResult<Option<LowRankVector<f64>>> {
    Ok(if cfg.solver.oracle {
        Some(problem.oracle_solution()?)
    } else {
        None
    })
}

pub fn cmd_solve(cfg: &RunConfig) -> CliResult<(RunRecord, LowRankVector<f64>)> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let spectral = problem.spectral_report(&problem.probe(), false)?;
    let oracle = oracle_for(cfg, &problem)?;
    let record = match cfg.solver.method {
        Method::FixedPoint => {
            let out = run_fixed_point(cfg, &cfg.solve_config(), &problem, oracle.as_ref())?;
            let s = &out.state;
            let steps = (0..s.residuals.len())
                .map(|k| StepRecord {
                    k,
                    residual: s.residuals[k],
                    rank: Some(s.ranks[k]),
                    ratio: s.ratios[k],
                    oracle_error: s.errors.as_ref().map(|e| e[k]),
                })
                .collect();
            let record = RunRecord {
                version: VERSION.into(),
                config: cfg.clone(),
                spectral,
                method: Method::FixedPoint,
                rho: Some(s.rho),
                q: Some(s.q),
                steps,
                certificates: out.certificates.clone(),
                converged: s.converged,
                iterations: s.k,
                pcg_restarts: None,
                final_rank: s.iterate.rank(),
                final_oracle_error: s.errors.as_ref().and_then(|e| e.last().copied()),
            };
            (record, out.state.iterate)
        }
        Method::Pcg => {
            if cfg.solver.certificates {
                return Err(CliError::Config(
                    "certificates are available for the fixed-point method only".into(),
                ));
            }
            let b = build_preconditioner(&problem.precond, cfg.preconditioner_kind())?;
            let out = pcg_solve(
                &problem.stiffness,
                &problem.rhs,
                b.as_ref(),
                cfg.solver.tol,
                cfg.truncation().as_ref(),
                cfg.solver.max_iterations,
            )?;
            let final_error = match &oracle {
                Some(u) => Some(energy_norm(&out.solution.sub(u)?, &problem.precond)?),
                None => None,
            };
            let steps = out
                .residuals
                .iter()
                .enumerate()
                .map(|(k, r)| StepRecord {
                    k,
                    residual: *r,
                    rank: None,
                    ratio: (k > 0).then(|| r / out.residuals[k - 1]),
                    oracle_error: None,
                })
                .collect();
            let record = RunRecord {
                version: VERSION.into(),
                config: cfg.clone(),
                spectral,
                method: Method::Pcg,
                rho: None,
                q: None,
                steps,
                certificates: vec![],
                converged: out.converged,
                iterations: out.iterations,
                pcg_restarts: Some(out.restarts),
                final_rank: out.solution.rank(),
                final_oracle_error: final_error,
            };
            (record, out.solution)
        }
    };
    Ok(record)
}

/// Solution as CSV with columns `term,sigma,axis,index,x,value`.
///
/// In one dimension there is one term with `sigma = 1` holding the nodal values.
/// In two dimensions the terms are the singular triplets `σ_j u_j ⊗ w_j`, one row per
/// entry of `u_j` (axis 0) and `w_j` (axis 1).
pub fn solution_csv(u: &LowRankVector<f64>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["term", "sigma", "axis", "index", "x", "value"])?;
    let node = |i: usize, n: usize| (i + 1) as f64 / (n + 1) as f64;
    if let Some(v) = u.as_plain() {
        for (i, x) in v.iter().enumerate() {
            w.serialize((0, 1.0, 0, i, node(i, v.len()), *x))?;
        }
    } else {
        let (svd, _) = u.truncate(&TruncationPolicy::tolerance(1e-14))?;
        let (a, b, s) = svd.factors().expect("two-dimensional vectors are separated");
        for j in 0..s.len() {
            for (axis, m) in [a, b].into_iter().enumerate() {
                for i in 0..m.nrows() {
                    w.serialize((j, s[j], axis, i, node(i, m.nrows()), m[(i, j)]))?;
                }
            }
        }
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> CliResult<String> {
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
}

pub fn cmd_bounds(cfg: &RunConfig, discrete: bool) -> CliResult<BoundsRecord> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let dofs = problem.grid.dofs();
    if discrete && dofs > DISCRETE_BOUNDS_CAP {
        return Err(CliError::Config(format!(
            "discrete bounds need at most {DISCRETE_BOUNDS_CAP} unknowns, the grid has {dofs}"
        )));
    }
    Ok(BoundsRecord {
        version: VERSION.into(),
        config: cfg.clone(),
        spectral: problem.spectral_report(&problem.probe(), discrete)?,
    })
}

pub fn cmd_errors(cfg: &RunConfig) -> CliResult<ErrorsRecord> {
    cfg.validate()?;
    if cfg.solver.method != Method::FixedPoint {
        return Err(CliError::Config("errors needs the fixed-point method".into()));
    }
    let problem = cfg.build_problem()?;
    let oracle = oracle_for(cfg, &problem)?;
    let solve = SolveConfig {
        certificates: true,
        ..cfg.solve_config()
    };
    let out = run_fixed_point(cfg, &solve, &problem, oracle.as_ref())?;
    let steps = out
        .certificates
        .iter()
        .map(|c| ErrorRow {
            k: c.k,
            delta: c.delta,
            majorant: c.majorant,
            q: c.q,
            lower: c.lower,
            upper: c.upper,
            grid_certified: c.grid_certified,
            oracle_error: out.state.errors.as_ref().map(|e| e[c.k]),
        })
        .collect();
    Ok(ErrorsRecord {
        version: VERSION.into(),
        config: cfg.clone(),
        rho: out.state.rho,
        q: out.state.q,
        steps,
    })
}

/// Singular profile of a two-dimensional solution: CSV `k,sigma,normalized`.
pub fn cmd_rankplot(cfg: &RunConfig, source: RankSource) -> CliResult<String> {
    cfg.validate()?;
    if cfg.problem.dimension != 2 {
        return Err(CliError::Config("rankplot needs a two-dimensional problem".into()));
    }
    let u = match source {
        RankSource::Solve => cmd_solve(cfg)?.1,
        RankSource::Oracle => cfg.build_problem()?.oracle_solution()?,
    };
    let sigma = u.singular_profile()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "sigma", "normalized"])?;
    let s1 = sigma.first().copied().unwrap_or(0.0);
    for (k, s) in sigma.iter().enumerate() {
        let normalized = if s1 > 0.0 { s / s1 } else { 0.0 };
        w.serialize((k + 1, *s, normalized))?;
    }
    finish_csv(w)
}

/// Relative error of the sinc inverse applied to the load vector: CSV `m,sqrt_m,terms,rel_error`.
pub fn cmd_sincplot(cfg: &RunConfig) -> CliResult<String> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let exact = ExactInverse::new(&problem.precond)?.apply(&problem.rhs)?;
    let scale = exact.norm()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "sqrt_m", "terms", "rel_error"])?;
    for &m in &cfg.sincplot.m_values {
        let b = build_inverse(&problem.precond, m)?;
        let approx = b.apply(&problem.rhs)?;
        let err = approx.sub(&exact)?.norm()? / scale;
        w.serialize((m, (m as f64).sqrt(), b.rank(), err))?;
    }
    finish_csv(w)
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        status: if passed { CheckStatus::Pass } else { CheckStatus::Fail },
        detail,
    }
}

fn skipped(name: &str, detail: &str) -> CheckResult {
    CheckResult {
        name: name.into(),
        status: CheckStatus::Skipped,
        detail: detail.into(),
    }
}

/// End-to-end checks of the configured problem against its direct solution.
pub fn cmd_oracle_check(cfg: &RunConfig) -> CliResult<OracleCheckReport> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let exact = problem.oracle_solution()?;
    let mut checks = Vec::new();

    let residual = problem.rhs.sub(&kron_matvec(&problem.stiffness, &exact)?)?.norm()? / problem.rhs.norm()?;
    checks.push(check(
        "oracle_residual",
        residual <= 1e-10,
        format!("relative residual {residual:.3e}"),
    ));

    let dofs = problem.grid.dofs();
    if dofs <= DENSIFY_CAP {
        let x = LowRankVector::plain(DVector::from_fn(dofs, |i, _| ((i * 7 + 3) as f64 * 0.37).sin()));
        let dense = densify(&problem.stiffness)?;
        let kx = problem.stiffness.matvec_dense(&x.to_dense())?;
        let diff = (&kx - &dense * x.to_dense()).amax() / (dense * x.to_dense()).amax();
        checks.push(check(
            "kronecker_matvec",
            diff <= 1e-12,
            format!("relative difference {diff:.3e}"),
        ));
    } else {
        checks.push(skipped("kronecker_matvec", "grid too large to expand"));
    }

    let iterations = cfg.solver.max_iterations.clamp(1, 30);
    let plain = SolveConfig {
        max_iterations: iterations,
        stop: StopRule::Residual { tol: 1e-300 },
        truncation: None,
        preconditioner: PreconditionerKind::Exact,
        certificates: false,
        ..cfg.solve_config()
    };
    let out = iterate_from(&plain, &problem, None, Some(&exact))?;
    let errors = out.state.errors.as_ref().expect("oracle given");
    let floor = NOISE_FLOOR * errors[0];
    let worst = errors
        .windows(2)
        .filter(|w| w[1] > floor)
        .map(|w| w[1] / w[0])
        .fold(0.0f64, f64::max);
    checks.push(check(
        "contraction",
        worst <= out.state.q + RATIO_SLACK,
        format!(
            "worst ratio {worst:.6} against q = {:.6} over {iterations} steps",
            out.state.q
        ),
    ));

    let certifiable =
        problem.dim() == 1 || (problem.mass == MassTreatment::Consistent && problem.constant_a0().is_some());
    if certifiable {
        let with_certs = SolveConfig {
            max_iterations: iterations.min(15),
            certificates: true,
            ..plain
        };
        let out = iterate_from(&with_certs, &problem, None, Some(&exact))?;
        let errors = out.state.errors.as_ref().expect("oracle given");
        let violations = out
            .certificates
            .iter()
            .filter(|c| {
                let e = errors[c.k];
                let slack = 1e-10 * (1.0 + e);
                c.lower > e + slack || e > c.upper + slack
            })
            .count();
        checks.push(check(
            "certificates",
            violations == 0,
            format!("{} certificates, {violations} violations", out.certificates.len()),
        ));
    } else {
        checks.push(skipped(
            "certificates",
            "two-dimensional certificates need consistent mass and a constant a0",
        ));
    }

    let b = build_inverse(&problem.precond, 64)?;
    let approx = b.apply(&problem.rhs)?;
    let reference = ExactInverse::new(&problem.precond)?.apply(&problem.rhs)?;
    let err = approx.sub(&reference)?.norm()? / reference.norm()?;
    let positive = problem.rhs.inner(&approx)? > 0.0;
    checks.push(check(
        "sinc_inverse",
        err <= 1e-5 && positive,
        format!("relative error {err:.3e} at M = 64, positive = {positive}"),
    ));

    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(OracleCheckReport {
        version: VERSION.into(),
        config: cfg.clone(),
        passed,
        checks,
    })
}
