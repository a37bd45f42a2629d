//! A discretized problem: grid, coefficients, Kronecker operators and load vector.

use nalgebra::DVector;

use crate::coefficients::{
    default_probe_points, ProbeGrid, SeparableCoefficient, SeparableRhs, UniformGrid, UnivariateFactor,
};
use crate::error::{Error, Result};
use crate::kron_fem::{
    assemble_kron_stiffness_with, assemble_preconditioner_with, assemble_rhs_with, densify, quadratures_for,
    KroneckerMatrix, MassTreatment,
};
use crate::lowrank::LowRankVector;
use crate::operator_bounds::{spectral_equivalence, spectral_report, SpectralReport};
use crate::precond::BandedCholesky;
use crate::quadrature::ElementQuadrature;
use crate::scalar::Scalar;

/// `Λ` (stiffness for `a`), `Λ∘` (stiffness for `a∘`) and `f` on a common quadrature.
#[derive(Clone, Debug)]
pub struct DiscreteProblem<T: Scalar> {
    pub grid: UniformGrid,
    pub a: SeparableCoefficient<T>,
    pub a0: SeparableCoefficient<T>,
    pub f: SeparableRhs<T>,
    pub mass: MassTreatment,
    pub quads: Vec<ElementQuadrature<T>>,
    pub stiffness: KroneckerMatrix<T>,
    pub precond: KroneckerMatrix<T>,
    pub rhs: LowRankVector<T>,
}

impl<T: Scalar> DiscreteProblem<T> {
    pub fn new(
        grid: UniformGrid,
        a: SeparableCoefficient<T>,
        a0: SeparableCoefficient<T>,
        f: SeparableRhs<T>,
        mass: MassTreatment,
    ) -> Result<Self> {
        let d = grid.dim();
        if a.dim() != d || a0.dim() != d || f.dim() != d {
            return Err(Error::validation(format!(
                "dimension mismatch: grid {d}, a {}, a0 {}, f {}",
                a.dim(),
                a0.dim(),
                f.dim()
            )));
        }
        let quads = quadratures_for(&grid, &[a.function(), a0.function(), &f]);
        let stiffness = assemble_kron_stiffness_with(a.function(), &quads, mass)?;
        let precond = assemble_preconditioner_with(a0.function(), &quads, mass)?;
        let rhs = assemble_rhs_with(&f, &quads)?;
        Ok(Self {
            grid,
            a,
            a0,
            f,
            mass,
            quads,
            stiffness,
            precond,
            rhs,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// The value of `a∘` when it is a constant function.
    pub fn constant_a0(&self) -> Option<T> {
        let f = self.a0.function();
        if f.rank() != 1 {
            return None;
        }
        f.terms()[0].iter().try_fold(T::one(), |acc, u| match u {
            UnivariateFactor::Constant { value } => Some(acc * *value),
            _ => None,
        })
    }

    /// Ratio bounds on the probe grid and, when the grid is small enough to expand,
    /// the discrete generalized eigenvalue extremes of `(Λ, Λ∘)`.
    pub fn spectral_report(&self, probe: &ProbeGrid<T>, discrete: bool) -> Result<SpectralReport<T>> {
        let eq = if discrete {
            Some(spectral_equivalence(
                &densify(&self.stiffness)?,
                &densify(&self.precond)?,
            )?)
        } else {
            None
        };
        spectral_report(self.a.function(), self.a0.function(), probe, eq)
    }

    /// Default probe grid resolving the features of `a`, `a∘` and the grid nodes.
    pub fn probe(&self) -> ProbeGrid<T> {
        let n = self.grid.sizes().iter().copied().max().unwrap_or(1) + 1;
        let min = default_probe_points(self.dim()).max(n);
        ProbeGrid::for_functions(&[self.a.function(), self.a0.function()], min)
    }

    /// Direct solution of `Λu = f` by banded Cholesky.
    pub fn oracle_solution(&self) -> Result<LowRankVector<T>> {
        let chol = BandedCholesky::from_kronecker(&self.stiffness)?;
        let f: DVector<T> = self.rhs.to_dense();
        let u = chol.solve(&f)?;
        Ok(self.rhs.like_from_dense(&u))
    }
}
