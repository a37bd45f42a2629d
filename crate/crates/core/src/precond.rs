//! Inverses of the Kronecker-sum preconditioner `Λ∘`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kron_fem::{Factor, KroneckerMatrix, TridiagonalMatrix};
use crate::lowrank::LowRankVector;
use crate::scalar::Scalar;

/// Approximate or exact action of `Λ∘⁻¹` on low-rank vectors.
pub trait InverseOperator<T: Scalar>: Send + Sync {
    fn apply(&self, v: &LowRankVector<T>) -> Result<LowRankVector<T>>;
}

/// Solution of `K v = λ D v` normalized so that `VᵀDV = I` and `VᵀKV = diag(λ)`.
#[derive(Clone, Debug)]
pub struct GeneralizedEigen<T: Scalar> {
    pub values: DVector<T>,
    pub vectors: DMatrix<T>,
}

impl<T: Scalar> GeneralizedEigen<T> {
    pub fn new(k: &DMatrix<T>, d: &DMatrix<T>) -> Result<Self> {
        let chol = d
            .clone()
            .cholesky()
            .ok_or_else(|| Error::validation("mass factor is not positive definite"))?;
        let l = chol.l();
        let y = l
            .solve_lower_triangular(k)
            .ok_or_else(|| Error::Singular("mass factor has a zero pivot".into()))?;
        let c = l
            .solve_lower_triangular(&y.transpose())
            .ok_or_else(|| Error::Singular("mass factor has a zero pivot".into()))?;
        let c = (&c + c.transpose()) * T::lit(0.5);
        let eig = SymmetricEigen::new(c);
        let vectors = l
            .transpose()
            .solve_upper_triangular(&eig.eigenvectors)
            .ok_or_else(|| Error::Singular("mass factor has a zero pivot".into()))?;
        Ok(Self {
            values: eig.eigenvalues,
            vectors,
        })
    }

    pub fn min_value(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(self.values[0], |a, b| if b < a { b } else { a })
    }

    pub fn max_value(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(self.values[0], |a, b| if b > a { b } else { a })
    }
}

/// Per-dimension generalized eigenpairs of a Kronecker-sum `Λ∘`.
///
/// In 1D all terms are summed into one stiffness matrix with identity mass.
/// In 2D `Λ∘ = K₁ ⊗ D₂ + D₁ ⊗ K₂` (the layout produced by preconditioner assembly),
/// so `Λ∘⁻¹ = (V₁ ⊗ V₂)(Λ₁ ⊕ Λ₂)⁻¹(V₁ ⊗ V₂)ᵀ`.
#[derive(Clone, Debug)]
pub struct KronEigen<T: Scalar> {
    pub dims: Vec<GeneralizedEigen<T>>,
}

impl<T: Scalar> KronEigen<T> {
    pub fn new(lambda0: &KroneckerMatrix<T>) -> Result<Self> {
        match lambda0.dim() {
            1 => {
                let n = lambda0.sizes()[0];
                let mut k = DMatrix::zeros(n, n);
                for t in lambda0.terms() {
                    k += t[0].to_dense();
                }
                let eye = DMatrix::identity(n, n);
                Ok(Self {
                    dims: vec![GeneralizedEigen::new(&k, &eye)?],
                })
            }
            2 => {
                if lambda0.rank() != 2 {
                    return Err(Error::validation(format!(
                        "expected a Kronecker sum K₁⊗D₂ + D₁⊗K₂, got rank {}",
                        lambda0.rank()
                    )));
                }
                let t = lambda0.terms();
                let (k1, d2) = (t[0][0].to_dense(), t[0][1].to_dense());
                let (d1, k2) = (t[1][0].to_dense(), t[1][1].to_dense());
                Ok(Self {
                    dims: vec![GeneralizedEigen::new(&k1, &d1)?, GeneralizedEigen::new(&k2, &d2)?],
                })
            }
            d => Err(Error::UnsupportedDimension {
                dim: d,
                kron_rank: lambda0.rank(),
            }),
        }
    }

    /// Smallest eigenvalue of `Λ₁ ⊕ Λ₂` (of `Λ∘` itself in 1D).
    pub fn lambda_min(&self) -> T {
        self.dims.iter().fold(T::zero(), |acc, g| acc + g.min_value())
    }

    pub fn lambda_max(&self) -> T {
        self.dims.iter().fold(T::zero(), |acc, g| acc + g.max_value())
    }
}

/// Exact `Λ∘⁻¹`: tridiagonal solve in 1D, eigenbasis division in 2D.
#[derive(Clone, Debug)]
pub enum ExactInverse<T: Scalar> {
    Tridiagonal(TridiagonalMatrix<T>),
    Eigen(KronEigen<T>),
}

impl<T: Scalar> ExactInverse<T> {
    pub fn new(lambda0: &KroneckerMatrix<T>) -> Result<Self> {
        if lambda0.dim() == 1 && lambda0.rank() == 1 {
            if let Factor::Tridiagonal(t) = &lambda0.terms()[0][0] {
                return Ok(ExactInverse::Tridiagonal(t.clone()));
            }
        }
        Ok(ExactInverse::Eigen(KronEigen::new(lambda0)?))
    }
}

impl<T: Scalar> InverseOperator<T> for ExactInverse<T> {
    fn apply(&self, v: &LowRankVector<T>) -> Result<LowRankVector<T>> {
        match self {
            ExactInverse::Tridiagonal(t) => {
                let x = v
                    .as_plain()
                    .ok_or_else(|| Error::validation("one-dimensional inverse needs a plain vector"))?;
                if x.len() != t.n() {
                    return Err(Error::validation("vector length differs from operator size"));
                }
                Ok(LowRankVector::plain(DVector::from_vec(t.solve(x.as_slice())?)))
            }
            ExactInverse::Eigen(e) => match e.dims.len() {
                1 => {
                    let g = &e.dims[0];
                    let x = v
                        .as_plain()
                        .ok_or_else(|| Error::validation("one-dimensional inverse needs a plain vector"))?;
                    let mut c = g.vectors.transpose() * x;
                    for (i, ci) in c.iter_mut().enumerate() {
                        *ci /= g.values[i];
                    }
                    Ok(LowRankVector::plain(&g.vectors * c))
                }
                _ => {
                    let (g1, g2) = (&e.dims[0], &e.dims[1]);
                    if v.sizes() != [g1.values.len(), g2.values.len()] {
                        return Err(Error::validation("vector sizes differ from operator sizes"));
                    }
                    let x = v.to_matrix();
                    let mut c = g1.vectors.transpose() * x * &g2.vectors;
                    for i in 0..c.nrows() {
                        for j in 0..c.ncols() {
                            c[(i, j)] /= g1.values[i] + g2.values[j];
                        }
                    }
                    Ok(LowRankVector::from_matrix(&(&g1.vectors * c * g2.vectors.transpose())))
                }
            },
        }
    }
}

/// Banded Cholesky factorization of an SPD Kronecker matrix with narrow factors.
///
/// Used as the direct-solver oracle on grids far beyond the dense cap: storage
/// and work scale as `N·p` and `N·p²` for half-bandwidth `p`.
#[derive(Clone, Debug)]
pub struct BandedCholesky<T: Scalar> {
    n: usize,
    p: usize,
    /// Row `i` stores `L[i, i−p..=i]` at offsets `0..=p`.
    l: Vec<T>,
}

impl<T: Scalar> BandedCholesky<T> {
    pub fn from_kronecker(k: &KroneckerMatrix<T>) -> Result<Self> {
        if k.terms().iter().flatten().any(|f| matches!(f, Factor::Dense(_))) {
            return Err(Error::validation(
                "banded factorization needs diagonal or tridiagonal factors",
            ));
        }
        let n = k.dofs();
        let p = k.bandwidth();
        let w = p + 1;
        let mut l = vec![T::zero(); n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(p);
            for j in j0..=i {
                l[i * w + (j + p - i)] = k.entry(i, j);
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(p);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(p));
                let mut sum = l[i * w + (j + p - i)];
                for kk in k0..j {
                    sum -= l[i * w + (kk + p - i)] * l[j * w + (kk + p - j)];
                }
                if i == j {
                    if !(sum > T::zero()) {
                        return Err(Error::Singular(format!("banded Cholesky pivot {i} is not positive")));
                    }
                    l[i * w + p] = sum.sqrt();
                } else {
                    l[i * w + (j + p - i)] = sum / l[j * w + p];
                }
            }
        }
        Ok(Self { n, p, l })
    }

    pub fn solve(&self, b: &DVector<T>) -> Result<DVector<T>> {
        if b.len() != self.n {
            return Err(Error::validation("right-hand side length differs from matrix size"));
        }
        let (n, p, w) = (self.n, self.p, self.p + 1);
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(p)..i {
                s -= self.l[i * w + (k + p - i)] * y[k];
            }
            y[i] = s / self.l[i * w + p];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + p + 1).min(n) {
                s -= self.l[k * w + (i + p - k)] * y[k];
            }
            y[i] = s / self.l[i * w + p];
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_periodic_bumps, SeparableCoefficient, UniformGrid};
    use crate::kron_fem::{assemble_kron_stiffness, assemble_preconditioner, densify, MassTreatment};

    #[test]
    fn exact_inverse_matches_dense_solve() {
        let grid = UniformGrid::new(vec![7, 6]).unwrap();
        let one = SeparableCoefficient::constant(2, 1.5f64).unwrap();
        for mass in [MassTreatment::Lumped, MassTreatment::Consistent] {
            let l0 = assemble_preconditioner(one.function(), &grid, mass).unwrap();
            let inv = ExactInverse::new(&l0).unwrap();
            let x = DMatrix::from_fn(7, 6, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
            let v = LowRankVector::from_matrix(&x);
            let got = inv.apply(&v).unwrap().to_dense();
            let dense = densify(&l0).unwrap();
            let oracle = dense.lu().solve(&v.to_dense()).unwrap();
            assert!((got - &oracle).amax() < 1e-12 * oracle.amax());
        }
    }

    #[test]
    fn banded_cholesky_matches_dense() {
        let grid = UniformGrid::new(vec![9, 8]).unwrap();
        let a = make_periodic_bumps(3, 1.0f64, 0.7, 0.4).unwrap();
        for mass in [MassTreatment::Lumped, MassTreatment::Consistent] {
            let k = assemble_kron_stiffness(a.function(), &grid, mass).unwrap();
            let chol = BandedCholesky::from_kronecker(&k).unwrap();
            let b = DVector::from_fn(72, |i, _| (i as f64 * 0.37).cos());
            let x = chol.solve(&b).unwrap();
            let dense = densify(&k).unwrap();
            assert!((&dense * &x - &b).amax() < 1e-10);
        }
    }

    #[test]
    fn generalized_eigen_normalization() {
        let grid = UniformGrid::new(vec![6, 5]).unwrap();
        let one = SeparableCoefficient::constant(2, 1.0f64).unwrap();
        let l0 = assemble_preconditioner(one.function(), &grid, MassTreatment::Consistent).unwrap();
        let e = KronEigen::new(&l0).unwrap();
        let t = l0.terms();
        let (k1, d1) = (t[0][0].to_dense(), t[1][0].to_dense());
        let v = &e.dims[0].vectors;
        let vdv = v.transpose() * d1 * v;
        let vkv = v.transpose() * k1 * v;
        assert!((vdv - DMatrix::identity(6, 6)).amax() < 1e-12);
        assert!((vkv - DMatrix::from_diagonal(&e.dims[0].values)).amax() < 1e-9);
    }
}
