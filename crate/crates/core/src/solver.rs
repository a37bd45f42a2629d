//! Preconditioned fixed-point iteration, truncated PCG and the direct oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_bounds::{certificate_for_step, ErrorCertificate, FluxBasis2d};
use crate::kron_fem::KroneckerMatrix;
use crate::lowrank::{energy_norm, kron_matvec, LowRankVector, TruncationPolicy};
use crate::operator_bounds::{contraction_factor_at, optimal_rho};
use crate::precond::{ExactInverse, InverseOperator};
use crate::problem::DiscreteProblem;
use crate::scalar::Scalar;
use crate::sinc_inv::build_inverse;

/// Relative tolerance of the near-lossless recompression of intermediate sums.
const RECOMPRESS_TOL: f64 = 1e-14;

/// Slack allowed when comparing a measured ratio with the predicted contraction factor.
pub const RATIO_SLACK: f64 = 1e-8;

/// Number of consecutive non-contractive steps that count as divergence.
pub const DIVERGENCE_STEPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum RhoChoice<T> {
    /// `ρ* = 2/(h⊖ + h⊕)` from the ratio bounds.
    Auto,
    Fixed(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopRule<T> {
    /// Stop when `‖Λ∘⁻¹(Au_k − f)‖∘ ≤ tol`.
    Residual { tol: T },
    /// Stop when the certificate gap `upper − lower ≤ tol`.
    OstrowskiGap { tol: T },
}

impl<T: Scalar> StopRule<T> {
    pub fn tol(&self) -> T {
        match self {
            StopRule::Residual { tol } | StopRule::OstrowskiGap { tol } => *tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PreconditionerKind {
    /// Exact `Λ∘⁻¹` (tridiagonal solve or eigenbasis division).
    Exact,
    /// Sinc exponential sum with `2M + 1` terms.
    Sinc { m: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig<T> {
    pub rho: RhoChoice<T>,
    pub max_iterations: usize,
    pub stop: StopRule<T>,
    pub truncation: Option<TruncationPolicy<T>>,
    pub preconditioner: PreconditionerKind,
    /// Attach an error certificate to every step.
    pub certificates: bool,
    /// Coarse cells of the 2D flux basis per dimension; defaults to the FEM grid.
    pub flux_cells: Option<[usize; 2]>,
}

impl<T: Scalar> Default for SolveConfig<T> {
    fn default() -> Self {
        Self {
            rho: RhoChoice::Auto,
            max_iterations: 100,
            stop: StopRule::Residual { tol: T::lit(1e-10) },
            truncation: None,
            preconditioner: PreconditionerKind::Exact,
            certificates: false,
            flux_cells: None,
        }
    }
}

impl<T: Scalar> SolveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop.tol() > T::zero()) {
            return Err(Error::validation("stop tolerance must be positive"));
        }
        if let RhoChoice::Fixed(r) = self.rho {
            if !(r > T::zero()) {
                return Err(Error::validation("rho must be positive"));
            }
        }
        if let Some(p) = &self.truncation {
            p.validate()?;
        }
        if let PreconditionerKind::Sinc { m } = self.preconditioner {
            if m < 1 {
                return Err(Error::validation("sinc preconditioner needs M >= 1"));
            }
        }
        if matches!(self.stop, StopRule::OstrowskiGap { .. }) && !self.certificates {
            return Err(Error::validation("the Ostrowski-gap stop rule needs certificates"));
        }
        Ok(())
    }
}

/// Builds the inverse preconditioner selected by `kind`.
pub fn build_preconditioner<T: Scalar>(
    lambda0: &KroneckerMatrix<T>,
    kind: PreconditionerKind,
) -> Result<Box<dyn InverseOperator<T>>> {
    Ok(match kind {
        PreconditionerKind::Exact => Box::new(ExactInverse::new(lambda0)?),
        PreconditionerKind::Sinc { m } => Box::new(build_inverse(lambda0, m)?),
    })
}

#[derive(Clone, Debug)]
pub struct IterationState<T: Scalar> {
    /// Final iterate `u_k`.
    pub iterate: LowRankVector<T>,
    pub k: usize,
    /// `‖Λ∘⁻¹(Au_j − f)‖∘` for `j = 0..=k`.
    pub residuals: Vec<T>,
    /// `residuals[j] / residuals[j−1]`; `None` at `j = 0`.
    pub ratios: Vec<Option<T>>,
    pub ranks: Vec<usize>,
    /// `‖u_j − u‖∘` against a supplied oracle solution.
    pub errors: Option<Vec<T>>,
    pub truncation: Option<TruncationPolicy<T>>,
    pub rho: T,
    /// Contraction factor at `rho` predicted from the ratio bounds.
    pub q: T,
    pub grid_certified: bool,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct IterationOutcome<T: Scalar> {
    pub state: IterationState<T>,
    /// Certificate for each `u_j`, `j = 0..=k`, when requested.
    pub certificates: Vec<ErrorCertificate<T>>,
}

/// Direct solve of a dense SPD system with a residual check.
pub fn dense_oracle_solve<T: Scalar>(a: &DMatrix<T>, f: &DVector<T>) -> Result<DVector<T>> {
    if a.nrows() != a.ncols() || a.nrows() != f.len() {
        return Err(Error::validation("oracle system has inconsistent sizes"));
    }
    let u = match a.clone().cholesky() {
        Some(c) => c.solve(f),
        None => a
            .clone()
            .lu()
            .solve(f)
            .ok_or_else(|| Error::Singular("oracle matrix is singular".into()))?,
    };
    let res = (a * &u - f).norm();
    let fnorm = f.norm();
    if fnorm > T::zero() && res > T::lit(1e-10) * fnorm {
        return Err(Error::Singular(format!(
            "oracle residual {:.3e} exceeds 1e-10 relative",
            (res / fnorm).as_f64()
        )));
    }
    Ok(u)
}

fn recompress<T: Scalar>(v: LowRankVector<T>) -> Result<LowRankVector<T>> {
    if v.factors().is_none() {
        return Ok(v);
    }
    Ok(v.truncate(&TruncationPolicy::tolerance(T::lit(RECOMPRESS_TOL)))?.0)
}

fn truncate_opt<T: Scalar>(v: LowRankVector<T>, policy: Option<&TruncationPolicy<T>>) -> Result<LowRankVector<T>> {
    match policy {
        Some(p) => Ok(v.truncate(p)?.0),
        None => recompress(v),
    }
}

/// `Λ∘⁻¹(Au − f)` with the residual recompressed before the inverse is applied.
fn preconditioned_residual<T: Scalar>(
    u: &LowRankVector<T>,
    a: &KroneckerMatrix<T>,
    inv: &dyn InverseOperator<T>,
    f: &LowRankVector<T>,
) -> Result<LowRankVector<T>> {
    let r = recompress(kron_matvec(a, u)?.sub(f)?)?;
    recompress(inv.apply(&r)?)
}

/// `u_k = T(u_prev − ρ Λ∘⁻¹(A u_prev − f))` with `T` the truncation (if any).
pub fn fixed_point_step<T: Scalar>(
    u_prev: &LowRankVector<T>,
    rho: T,
    a: &KroneckerMatrix<T>,
    inv: &dyn InverseOperator<T>,
    f: &LowRankVector<T>,
    truncation: Option<&TruncationPolicy<T>>,
) -> Result<LowRankVector<T>> {
    if !(rho > T::zero()) {
        return Err(Error::validation("rho must be positive"));
    }
    let d = preconditioned_residual(u_prev, a, inv, f)?;
    truncate_opt(u_prev.lincomb(T::one(), &d, -rho)?, truncation)
}

fn flux_basis<T: Scalar>(problem: &DiscreteProblem<T>, cells: Option<[usize; 2]>) -> Result<FluxBasis2d<T>> {
    let s = problem.grid.sizes();
    let cells = cells.unwrap_or([s[0] + 1, s[1] + 1]);
    FluxBasis2d::new([s[0], s[1]], cells, problem.a.function(), &problem.f)
}

/// Runs the fixed-point iteration from `u₀ = T(B f)` until the stop rule fires.
///
/// The step from `u_k` to `u_{k+1}` is always computed, so every recorded
/// iterate can be certified with its successor.
pub fn iterate<T: Scalar>(
    config: &SolveConfig<T>,
    problem: &DiscreteProblem<T>,
    oracle: Option<&LowRankVector<T>>,
) -> Result<IterationOutcome<T>> {
    iterate_from(config, problem, None, oracle)
}

/// As [`iterate`], starting from `initial` when given.
pub fn iterate_from<T: Scalar>(
    config: &SolveConfig<T>,
    problem: &DiscreteProblem<T>,
    initial: Option<&LowRankVector<T>>,
    oracle: Option<&LowRankVector<T>>,
) -> Result<IterationOutcome<T>> {
    config.validate()?;
    let report = problem.spectral_report(&problem.probe(), false)?;
    let rho = match config.rho {
        RhoChoice::Auto => optimal_rho(report.h_minus, report.h_plus)?,
        RhoChoice::Fixed(r) => r,
    };
    let q = contraction_factor_at(rho, report.h_minus, report.h_plus);
    let inv = build_preconditioner(&problem.precond, config.preconditioner)?;
    let trunc = config.truncation.as_ref();
    let flux = if config.certificates && problem.dim() == 2 {
        Some(flux_basis(problem, config.flux_cells)?)
    } else {
        None
    };

    let mut u = match initial {
        Some(u0) => {
            if u0.sizes() != problem.rhs.sizes() {
                return Err(Error::validation("initial iterate sizes differ from the grid"));
            }
            truncate_opt(u0.clone(), trunc)?
        }
        None => truncate_opt(inv.apply(&problem.rhs)?, trunc)?,
    };
    let mut residuals = Vec::new();
    let mut ratios: Vec<Option<T>> = Vec::new();
    let mut ranks = Vec::new();
    let mut errors = oracle.map(|_| Vec::new());
    let mut certificates = Vec::new();
    let mut above_one = 0usize;
    let mut converged = false;
    let mut k = 0usize;
    loop {
        let d = preconditioned_residual(&u, &problem.stiffness, inv.as_ref(), &problem.rhs)?;
        let r = energy_norm(&d, &problem.precond)?;
        let ratio = residuals
            .last()
            .map(|prev: &T| if *prev > T::zero() { r / *prev } else { T::zero() });
        residuals.push(r);
        ratios.push(ratio);
        ranks.push(u.rank());
        if let (Some(errs), Some(exact)) = (errors.as_mut(), oracle) {
            errs.push(energy_norm(&u.sub(exact)?, &problem.precond)?);
        }
        // Residuals below √ε·r₀ are dominated by round-off and never count as divergence.
        let floor = T::eps().sqrt() * residuals[0];
        if let Some(rt) = ratio {
            if rt > T::one() && r > floor {
                above_one += 1;
                if above_one >= DIVERGENCE_STEPS {
                    return Err(Error::Divergence {
                        ratio: rt.as_f64(),
                        steps: k,
                    });
                }
            } else {
                above_one = 0;
            }
        }
        let next = truncate_opt(u.lincomb(T::one(), &d, -rho)?, trunc)?;
        if config.certificates {
            let cert = certificate_for_step(k, &u, &next, problem, rho, q, report.grid_certified, flux.as_ref())?;
            let gap = cert.upper - cert.lower;
            certificates.push(cert);
            if let StopRule::OstrowskiGap { tol } = config.stop {
                if gap <= tol {
                    converged = true;
                }
            }
        }
        if let StopRule::Residual { tol } = config.stop {
            if r <= tol {
                converged = true;
            }
        }
        if converged || k >= config.max_iterations {
            break;
        }
        u = next;
        k += 1;
    }
    Ok(IterationOutcome {
        state: IterationState {
            iterate: u,
            k,
            residuals,
            ratios,
            ranks,
            errors,
            truncation: config.truncation,
            rho,
            q,
            grid_certified: report.grid_certified,
            converged,
        },
        certificates,
    })
}

#[derive(Clone, Debug)]
pub struct PcgOutcome<T: Scalar> {
    pub solution: LowRankVector<T>,
    pub iterations: usize,
    /// `(r_j, B r_j)^{1/2}` for every iteration, starting with the initial residual.
    pub residuals: Vec<T>,
    pub restarts: usize,
    pub converged: bool,
}

/// Preconditioned conjugate gradients with truncation of iterate, residual and
/// direction. Stops when the preconditioned residual `(r, Br)^{1/2} ≤ tol`.
pub fn pcg_solve<T: Scalar>(
    a: &KroneckerMatrix<T>,
    f: &LowRankVector<T>,
    b: &dyn InverseOperator<T>,
    tol: T,
    truncation: Option<&TruncationPolicy<T>>,
    max_iterations: usize,
) -> Result<PcgOutcome<T>> {
    if !(tol > T::zero()) {
        return Err(Error::validation("PCG tolerance must be positive"));
    }
    let mut x = LowRankVector::zeros(&f.sizes());
    let mut r = truncate_opt(f.clone(), truncation)?;
    let mut z = truncate_opt(b.apply(&r)?, truncation)?;
    let mut p = z.clone();
    let mut rz = r.inner(&z)?;
    let mut residuals = vec![rz.max(T::zero()).sqrt()];
    let mut restarts = 0;
    if residuals[0] <= tol {
        return Ok(PcgOutcome {
            solution: x,
            iterations: 0,
            residuals,
            restarts,
            converged: true,
        });
    }
    let mut it = 0;
    let mut converged = false;
    while it < max_iterations {
        let ap = recompress(kron_matvec(a, &p)?)?;
        let pq = p.inner(&ap)?;
        if !(pq > T::zero()) {
            if restarts >= 1 {
                return Err(Error::breakdown(format!(
                    "PCG curvature (p, Ap) = {:.3e} is not positive after a restart",
                    pq.as_f64()
                )));
            }
            restarts += 1;
            p = z.clone();
            continue;
        }
        let alpha = rz / pq;
        x = truncate_opt(x.lincomb(T::one(), &p, alpha)?, truncation)?;
        r = truncate_opt(f.sub(&kron_matvec(a, &x)?)?, truncation)?;
        z = truncate_opt(b.apply(&r)?, truncation)?;
        let rz_new = r.inner(&z)?;
        it += 1;
        residuals.push(rz_new.max(T::zero()).sqrt());
        if rz_new.max(T::zero()).sqrt() <= tol {
            converged = true;
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p = truncate_opt(z.lincomb(T::one(), &p, beta)?, truncation)?;
    }
    Ok(PcgOutcome {
        solution: x,
        iterations: it,
        residuals,
        restarts,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow<T> {
    pub k: usize,
    pub error: Option<T>,
    pub ratio: Option<T>,
    /// `q^k ‖u₀ − u‖∘` (oracle mode only).
    pub envelope: Option<T>,
    /// `ratio ≤ q + slack`; `None` when the ratio is undefined.
    pub within: Option<bool>,
}

/// Per-step table of errors (oracle mode) or residuals, ratios and the `q^k` envelope.
pub fn convergence_report<T: Scalar>(state: &IterationState<T>, q_predicted: T) -> Vec<ReportRow<T>> {
    let slack = T::lit(RATIO_SLACK);
    let series: Vec<T> = state.errors.clone().unwrap_or_else(|| state.residuals.clone());
    let e0 = state.errors.as_ref().map(|e| e[0]);
    let mut qk = T::one();
    series
        .iter()
        .enumerate()
        .map(|(k, v)| {
            if k > 0 {
                qk *= q_predicted;
            }
            let ratio = if k == 0 {
                None
            } else if series[k - 1] > T::zero() {
                Some(*v / series[k - 1])
            } else {
                Some(T::zero())
            };
            ReportRow {
                k,
                error: state.errors.as_ref().map(|e| e[k]),
                ratio,
                envelope: e0.map(|e| qk * e),
                within: ratio.map(|r| r <= q_predicted + slack),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{
        make_periodic_two_level, SeparableCoefficient, SeparableFunction, SeparableRhs, UniformGrid, UnivariateFactor,
    };
    use crate::kron_fem::MassTreatment;

    fn example_1d(n: usize, a0: f64) -> DiscreteProblem<f64> {
        let a = make_periodic_two_level(16, 1.0, 3.0, 0.5, 0.0, 1.0, 1.0).unwrap();
        DiscreteProblem::new(
            UniformGrid::new(vec![n]).unwrap(),
            SeparableCoefficient::product(vec![a]).unwrap(),
            SeparableCoefficient::constant(1, a0).unwrap(),
            SeparableRhs::new(SeparableFunction::constant(1, 1.0)),
            MassTreatment::Lumped,
        )
        .unwrap()
    }

    #[test]
    fn oracle_identity_and_poisson() {
        let f = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let u = dense_oracle_solve(&DMatrix::identity(3, 3), &f).unwrap();
        assert_eq!(u, f);
        let n = 31;
        let p = DiscreteProblem::new(
            UniformGrid::new(vec![n]).unwrap(),
            SeparableCoefficient::constant(1, 1.0).unwrap(),
            SeparableCoefficient::constant(1, 1.0).unwrap(),
            SeparableRhs::new(SeparableFunction::constant(1, 1.0)),
            MassTreatment::Lumped,
        )
        .unwrap();
        let a = crate::kron_fem::densify(&p.stiffness).unwrap();
        let u = dense_oracle_solve(&a, &p.rhs.to_dense()).unwrap();
        let h = 1.0 / (n as f64 + 1.0);
        for i in 0..n {
            let x = (i + 1) as f64 * h;
            assert!((u[i] - x * (1.0 - x) / 2.0).abs() < 1e-12);
        }
        assert!(dense_oracle_solve(&DMatrix::<f64>::zeros(2, 2), &DVector::from_element(2, 1.0)).is_err());
    }

    #[test]
    fn same_operator_converges_in_one_step() {
        let p = DiscreteProblem::new(
            UniformGrid::new(vec![15]).unwrap(),
            SeparableCoefficient::constant(1, 2.0).unwrap(),
            SeparableCoefficient::constant(1, 2.0).unwrap(),
            SeparableRhs::new(SeparableFunction::constant(1, 1.0)),
            MassTreatment::Lumped,
        )
        .unwrap();
        let inv = ExactInverse::new(&p.precond).unwrap();
        let zero = LowRankVector::zeros(&[15]);
        let u1 = fixed_point_step(&zero, 1.0, &p.stiffness, &inv, &p.rhs, None).unwrap();
        let exact = p.oracle_solution().unwrap();
        assert!(u1.sub(&exact).unwrap().norm().unwrap() < 1e-12);
        let again = fixed_point_step(&exact, 1.0, &p.stiffness, &inv, &p.rhs, None).unwrap();
        assert!(again.sub(&exact).unwrap().norm().unwrap() < 1e-12);
    }

    #[test]
    fn iteration_contracts_at_predicted_rate() {
        let p = example_1d(127, 1.0);
        let exact = p.oracle_solution().unwrap();
        let cfg = SolveConfig {
            max_iterations: 20,
            stop: StopRule::Residual { tol: 1e-13 },
            ..SolveConfig::default()
        };
        let out = iterate(&cfg, &p, Some(&exact)).unwrap();
        assert!((out.state.q - 0.5).abs() < 1e-12);
        assert!((out.state.rho - 0.5).abs() < 1e-12);
        let rows = convergence_report(&out.state, out.state.q);
        assert_eq!(rows[0].ratio, None);
        assert!(rows.iter().skip(1).all(|r| r.within == Some(true)));
        assert_eq!(out.state.residuals.len(), out.state.k + 1);
    }

    #[test]
    fn divergence_detected() {
        let p = example_1d(31, 1.0);
        let cfg = SolveConfig {
            rho: RhoChoice::Fixed(1.5),
            max_iterations: 50,
            ..SolveConfig::default()
        };
        match iterate(&cfg, &p, None) {
            Err(Error::Divergence { ratio, .. }) => assert!(ratio > 1.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn certificates_sandwich_oracle_error() {
        let p = example_1d(63, 1.0);
        let exact = p.oracle_solution().unwrap();
        let cfg = SolveConfig {
            max_iterations: 12,
            stop: StopRule::OstrowskiGap { tol: 1e-12 },
            certificates: true,
            ..SolveConfig::default()
        };
        let out = iterate(&cfg, &p, Some(&exact)).unwrap();
        let errs = out.state.errors.as_ref().unwrap();
        assert_eq!(out.certificates.len(), errs.len());
        for (c, e) in out.certificates.iter().zip(errs) {
            assert!(c.lower <= *e + 1e-10 && *e <= c.upper + 1e-10, "{c:?} vs {e}");
        }
    }

    #[test]
    fn pcg_with_exact_preconditioner_is_one_step() {
        let grid = UniformGrid::square(2, 12).unwrap();
        let p = DiscreteProblem::new(
            grid,
            SeparableCoefficient::constant(2, 1.0).unwrap(),
            SeparableCoefficient::constant(2, 1.0).unwrap(),
            SeparableRhs::product(vec![UnivariateFactor::constant(1.0), UnivariateFactor::constant(1.0)]).unwrap(),
            MassTreatment::Lumped,
        )
        .unwrap();
        let inv = ExactInverse::new(&p.precond).unwrap();
        let out = pcg_solve(&p.stiffness, &p.rhs, &inv, 1e-10, None, 10).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn config_validation() {
        let mut c = SolveConfig::<f64>::default();
        assert!(c.validate().is_ok());
        c.stop = StopRule::Residual { tol: 0.0 };
        assert!(c.validate().is_err());
        c.stop = StopRule::OstrowskiGap { tol: 1e-6 };
        assert!(c.validate().is_err());
        c.certificates = true;
        assert!(c.validate().is_ok());
        c.rho = RhoChoice::Fixed(-1.0);
        assert!(c.validate().is_err());
    }
}
