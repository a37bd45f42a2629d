//! Exponential-sum approximation of `Λ∘⁻¹` by sinc quadrature of `∫₀^∞ e^{−tΛ∘} dt`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron_fem::{Factor, KroneckerMatrix};
use crate::lowrank::LowRankVector;
use crate::precond::{InverseOperator, KronEigen};
use crate::scalar::Scalar;

/// Nodes `t_k = e^{k h}` and weights `c_k = h t_k`, `h = π/√M`, `k = −M..=M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SincQuadrature<T> {
    pub m: usize,
    pub step: T,
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    /// Spectral scale `s`: the operator is divided by `s` before quadrature.
    pub scale: T,
}

pub fn sinc_nodes<T: Scalar>(m: usize) -> Result<SincQuadrature<T>> {
    if m < 1 {
        return Err(Error::validation("sinc quadrature needs M >= 1"));
    }
    let step = T::pi() / T::from_usize_lossy(m).sqrt();
    let mi = m as i64;
    let nodes: Vec<T> = (-mi..=mi).map(|k| (T::lit(k as f64) * step).exp()).collect();
    let weights = nodes.iter().map(|t| step * *t).collect();
    Ok(SincQuadrature {
        m,
        step,
        nodes,
        weights,
        scale: T::one(),
    })
}

/// `B_M = Σ_k (c_k/s) ⊗_ℓ V_ℓ e^{−(t_k/s)Λ_ℓ} V_ℓᵀ`, one dense factor per term and dimension.
#[derive(Clone, Debug)]
pub struct ExpFactorSet<T: Scalar> {
    pub quadrature: SincQuadrature<T>,
    /// `factors[k][ℓ]`.
    pub factors: Vec<Vec<DMatrix<T>>>,
    /// `c_k / s`.
    pub weights: Vec<T>,
}

impl<T: Scalar> ExpFactorSet<T> {
    pub fn rank(&self) -> usize {
        self.factors.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.factors[0].iter().map(|m| m.nrows()).collect()
    }

    /// `B_M` as an explicit Kronecker matrix (weights folded into the first factor).
    pub fn as_kronecker(&self) -> Result<KroneckerMatrix<T>> {
        let terms = self
            .factors
            .iter()
            .zip(self.weights.iter())
            .map(|(fs, c)| {
                fs.iter()
                    .enumerate()
                    .map(|(l, m)| Factor::Dense(if l == 0 { m * *c } else { m.clone() }))
                    .collect()
            })
            .collect();
        KroneckerMatrix::new(self.sizes(), terms)
    }
}

/// Builds `B_M` for the preconditioner `Λ∘` (1D stiffness or 2D Kronecker sum).
///
/// Each dimension is diagonalized once; the quadrature then runs on the spectrum
/// divided by its lower end `s = Σ_ℓ min λ_ℓ`, so that the scaled spectrum starts at 1.
pub fn build_inverse<T: Scalar>(lambda0: &KroneckerMatrix<T>, m: usize) -> Result<ExpFactorSet<T>> {
    let mut quadrature = sinc_nodes::<T>(m)?;
    let eig = KronEigen::new(lambda0)?;
    let scale = eig.lambda_min();
    if !(scale > T::zero()) || eig.dims.iter().any(|g| !(g.min_value() > T::zero())) {
        return Err(Error::validation(format!(
            "preconditioner is not positive definite (smallest eigenvalue {:.3e})",
            scale.as_f64()
        )));
    }
    quadrature.scale = scale;
    let factors: Vec<Vec<DMatrix<T>>> = quadrature
        .nodes
        .par_iter()
        .map(|t| {
            let ts = *t / scale;
            eig.dims
                .iter()
                .map(|g| {
                    let mut vs = g.vectors.clone();
                    for (j, mut col) in vs.column_iter_mut().enumerate() {
                        col *= (-ts * g.values[j]).exp();
                    }
                    vs * g.vectors.transpose()
                })
                .collect()
        })
        .collect();
    let weights = quadrature.weights.iter().map(|c| *c / scale).collect();
    Ok(ExpFactorSet {
        quadrature,
        factors,
        weights,
    })
}

/// Literal double sum `Σ_k Σ_m c_k (E₁ₖ u_m) ⊗ (E₂ₖ w_m)`; rank `(2M+1)·rank(f)` in 2D.
pub fn apply_inverse<T: Scalar>(b: &ExpFactorSet<T>, f: &LowRankVector<T>) -> Result<LowRankVector<T>> {
    if f.sizes() != b.sizes() {
        return Err(Error::validation(format!(
            "vector sizes {:?} differ from inverse sizes {:?}",
            f.sizes(),
            b.sizes()
        )));
    }
    match f.factors() {
        None => {
            let x = f.as_plain().expect("plain vector");
            let mut y = DVector::zeros(x.len());
            for (fs, c) in b.factors.iter().zip(b.weights.iter()) {
                y += (&fs[0] * x) * *c;
            }
            Ok(LowRankVector::plain(y))
        }
        Some((u, w, s)) => {
            let r = s.len();
            let k = b.rank();
            let parts: Vec<(DMatrix<T>, DMatrix<T>)> =
                b.factors.par_iter().map(|fs| (&fs[0] * u, &fs[1] * w)).collect();
            let mut uu = DMatrix::zeros(u.nrows(), k * r);
            let mut ww = DMatrix::zeros(w.nrows(), k * r);
            let mut ss = DVector::zeros(k * r);
            for (i, ((pu, pw), c)) in parts.iter().zip(b.weights.iter()).enumerate() {
                uu.columns_mut(i * r, r).copy_from(pu);
                ww.columns_mut(i * r, r).copy_from(pw);
                for j in 0..r {
                    ss[i * r + j] = s[j] * *c;
                }
            }
            LowRankVector::separated(uu, ww, ss)
        }
    }
}

impl<T: Scalar> InverseOperator<T> for ExpFactorSet<T> {
    fn apply(&self, v: &LowRankVector<T>) -> Result<LowRankVector<T>> {
        apply_inverse(self, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{SeparableCoefficient, UniformGrid};
    use crate::kron_fem::{assemble_preconditioner, densify, MassTreatment};

    fn spectral_rel_error(b: &ExpFactorSet<f64>, l0: &KroneckerMatrix<f64>) -> f64 {
        let dense = densify(l0).unwrap();
        let inv = dense.try_inverse().unwrap();
        let bm = densify(&b.as_kronecker().unwrap()).unwrap();
        let diff = (&inv - bm).symmetric_eigenvalues().amax();
        diff / inv.symmetric_eigenvalues().amax()
    }

    #[test]
    fn nodes_formulas() {
        let q = sinc_nodes::<f64>(1).unwrap();
        assert_eq!(q.nodes.len(), 3);
        assert!((q.step - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(q.nodes[1], 1.0);
        assert!((q.weights[1] - std::f64::consts::PI).abs() < 1e-15);
        let q4 = sinc_nodes::<f64>(4).unwrap();
        let pi = std::f64::consts::PI;
        assert!((q4.step - pi / 2.0).abs() < 1e-15);
        assert!((q4.nodes[0] - (-2.0 * pi).exp()).abs() < 1e-15);
        assert!((q4.nodes[8] / (2.0 * pi).exp() - 1.0).abs() < 1e-14);
        for (c, t) in q4.weights.iter().zip(q4.nodes.iter()) {
            assert_eq!(*c, q4.step * t);
        }
        assert!(sinc_nodes::<f64>(0).is_err());
    }

    #[test]
    fn scalar_case_integrates_exponential() {
        let l0 = KroneckerMatrix::new(vec![1], vec![vec![Factor::Diagonal(vec![1.0f64])]]).unwrap();
        let mut prev = f64::MAX;
        for m in [4, 16, 36, 64] {
            let b = build_inverse(&l0, m).unwrap();
            let v = apply_inverse(&b, &LowRankVector::plain(DVector::from_element(1, 1.0))).unwrap();
            let err = (v.as_plain().unwrap()[0] - 1.0).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-9);
    }

    #[test]
    fn one_dimensional_laplacian_converges_monotonically() {
        let grid = UniformGrid::new(vec![15]).unwrap();
        let one = SeparableCoefficient::constant(1, 1.0f64).unwrap();
        let l0 = assemble_preconditioner(one.function(), &grid, MassTreatment::Lumped).unwrap();
        let mut prev = f64::MAX;
        for m in [4, 9, 16, 25, 36] {
            let err = spectral_rel_error(&build_inverse(&l0, m).unwrap(), &l0);
            assert!(err < prev, "M={m}: {err} !< {prev}");
            prev = err;
        }
    }

    #[test]
    fn two_dimensional_laplacian_accuracy() {
        let grid = UniformGrid::square(2, 31).unwrap();
        let one = SeparableCoefficient::constant(2, 1.0f64).unwrap();
        let l0 = assemble_preconditioner(one.function(), &grid, MassTreatment::Lumped).unwrap();
        let b = build_inverse(&l0, 64).unwrap();
        assert_eq!(b.rank(), 129);
        let err = spectral_rel_error(&b, &l0);
        assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn forward_map_roundtrip_and_rank() {
        let grid = UniformGrid::square(2, 12).unwrap();
        let one = SeparableCoefficient::constant(2, 2.0f64).unwrap();
        let l0 = assemble_preconditioner(one.function(), &grid, MassTreatment::Consistent).unwrap();
        let b = build_inverse(&l0, 49).unwrap();
        let u = DMatrix::from_fn(12, 1, |i, _| (i as f64 * 0.3).sin());
        let w = DMatrix::from_fn(12, 1, |i, _| 1.0 + i as f64 * 0.1);
        let v = LowRankVector::separated(u, w, DVector::from_element(1, 1.0)).unwrap();
        let f = crate::lowrank::kron_matvec(&l0, &v).unwrap();
        let back = apply_inverse(&b, &f).unwrap();
        assert_eq!(back.rank(), 99 * 2);
        let err = (back.to_dense() - v.to_dense()).norm() / v.to_dense().norm();
        assert!(err < 1e-7, "roundtrip error {err}");
        let zero = apply_inverse(&b, &LowRankVector::zeros(&[12, 12])).unwrap();
        assert_eq!(zero.to_dense().amax(), 0.0);
    }
}
