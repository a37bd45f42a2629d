//! Univariate P1 finite element matrices and Kronecker-structured operators.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{SeparableFunction, SeparableRhs, UniformGrid, UnivariateFactor};
use crate::error::{Error, Result};
use crate::lowrank::LowRankVector;
use crate::quadrature::{ElementQuadrature, Features};
use crate::scalar::Scalar;

/// Largest number of unknowns `densify` will expand.
pub const DENSIFY_CAP: usize = 10_000;

/// Symmetric tridiagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalMatrix<T> {
    diag: Vec<T>,
    off: Vec<T>,
}

impl<T: Scalar> TridiagonalMatrix<T> {
    pub fn new(diag: Vec<T>, off: Vec<T>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::validation(format!(
                "tridiagonal matrix with {} diagonal entries needs {} off-diagonal entries, got {}",
                diag.len(),
                diag.len().saturating_sub(1),
                off.len()
            )));
        }
        Ok(Self { diag, off })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[T] {
        &self.diag
    }

    /// Sub-diagonal, equal to the super-diagonal.
    pub fn off(&self) -> &[T] {
        &self.off
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        if i == j {
            self.diag[i]
        } else if i + 1 == j {
            self.off[i]
        } else if j + 1 == i {
            self.off[j]
        } else {
            T::zero()
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let n = self.n();
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
        y
    }

    pub fn scaled(&self, t: T) -> Self {
        Self {
            diag: self.diag.iter().map(|v| *v * t).collect(),
            off: self.off.iter().map(|v| *v * t).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.n(), self.n(), |i, j| self.entry(i, j))
    }

    /// Solves `self · x = b` for symmetric positive definite `self` (LDLᵀ recursion).
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.n();
        let mut d = vec![T::zero(); n];
        let mut l = vec![T::zero(); n.saturating_sub(1)];
        d[0] = self.diag[0];
        for i in 1..n {
            if !(d[i - 1] > T::zero()) {
                return Err(Error::Singular(format!("tridiagonal pivot {} is not positive", i - 1)));
            }
            l[i - 1] = self.off[i - 1] / d[i - 1];
            d[i] = self.diag[i] - l[i - 1] * self.off[i - 1];
        }
        if !(d[n - 1] > T::zero()) {
            return Err(Error::Singular(format!("tridiagonal pivot {} is not positive", n - 1)));
        }
        let mut x = b.to_vec();
        for i in 1..n {
            let prev = x[i - 1];
            x[i] -= l[i - 1] * prev;
        }
        for i in 0..n {
            x[i] /= d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let next = x[i + 1];
            x[i] -= l[i] * next;
        }
        Ok(x)
    }
}

/// Row-sum lumping `D_ii = Σ_j M_ij`.
pub fn lump_mass<T: Scalar>(mass: &TridiagonalMatrix<T>) -> Vec<T> {
    let n = mass.n();
    (0..n)
        .map(|i| {
            let mut s = mass.diag[i];
            if i > 0 {
                s += mass.off[i - 1];
            }
            if i + 1 < n {
                s += mass.off[i];
            }
            s
        })
        .collect()
}

/// One factor of a Kronecker term.
#[derive(Clone, Debug, PartialEq)]
pub enum Factor<T: Scalar> {
    Identity(usize),
    Diagonal(Vec<T>),
    Tridiagonal(TridiagonalMatrix<T>),
    Dense(DMatrix<T>),
}

impl<T: Scalar> Factor<T> {
    pub fn size(&self) -> usize {
        match self {
            Factor::Identity(n) => *n,
            Factor::Diagonal(d) => d.len(),
            Factor::Tridiagonal(t) => t.n(),
            Factor::Dense(m) => m.nrows(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        match self {
            Factor::Identity(_) => {
                if i == j {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Factor::Diagonal(d) => {
                if i == j {
                    d[i]
                } else {
                    T::zero()
                }
            }
            Factor::Tridiagonal(t) => t.entry(i, j),
            Factor::Dense(m) => m[(i, j)],
        }
    }

    /// Number of nonzero diagonals above the main one.
    pub fn bandwidth(&self) -> usize {
        match self {
            Factor::Identity(_) | Factor::Diagonal(_) => 0,
            Factor::Tridiagonal(_) => 1,
            Factor::Dense(m) => m.nrows().saturating_sub(1),
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            Factor::Dense(m) => m.clone(),
            Factor::Tridiagonal(t) => t.to_dense(),
            _ => DMatrix::from_fn(self.size(), self.size(), |i, j| self.entry(i, j)),
        }
    }

    /// Applies the factor to every column of `x`.
    pub fn apply(&self, x: &DMatrix<T>) -> DMatrix<T> {
        match self {
            Factor::Identity(_) => x.clone(),
            Factor::Diagonal(d) => {
                let mut y = x.clone();
                for (i, mut row) in y.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                y
            }
            Factor::Tridiagonal(t) => {
                let mut y = DMatrix::zeros(x.nrows(), x.ncols());
                for c in 0..x.ncols() {
                    let col: Vec<T> = x.column(c).iter().copied().collect();
                    let out = t.matvec(&col);
                    y.column_mut(c).copy_from_slice(&out);
                }
                y
            }
            Factor::Dense(m) => m * x,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            Factor::Dense(m) => m == &m.transpose(),
            _ => true,
        }
    }
}

/// Sum of Kronecker products `Σ_t F_{t,1} ⊗ ... ⊗ F_{t,d}` in big-endian ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct KroneckerMatrix<T: Scalar> {
    sizes: Vec<usize>,
    terms: Vec<Vec<Factor<T>>>,
}

impl<T: Scalar> KroneckerMatrix<T> {
    pub fn new(sizes: Vec<usize>, terms: Vec<Vec<Factor<T>>>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::validation("Kronecker matrix needs at least one term"));
        }
        for (t, term) in terms.iter().enumerate() {
            if term.len() != sizes.len() {
                return Err(Error::validation(format!(
                    "Kronecker term {t} has {} factors, expected {}",
                    term.len(),
                    sizes.len()
                )));
            }
            for (l, f) in term.iter().enumerate() {
                if f.size() != sizes[l] {
                    return Err(Error::validation(format!(
                        "Kronecker term {t}, dimension {l}: factor size {} differs from {}",
                        f.size(),
                        sizes[l]
                    )));
                }
            }
        }
        Ok(Self { sizes, terms })
    }

    pub fn identity(sizes: Vec<usize>) -> Self {
        let term = sizes.iter().map(|n| Factor::Identity(*n)).collect();
        Self {
            sizes,
            terms: vec![term],
        }
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dofs(&self) -> usize {
        self.sizes.iter().product()
    }

    /// Number of Kronecker terms.
    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Vec<Factor<T>>] {
        &self.terms
    }

    pub fn scaled(&self, t: T) -> Self {
        let mut out = self.clone();
        for term in out.terms.iter_mut() {
            term[0] = match &term[0] {
                Factor::Identity(n) => Factor::Diagonal(vec![t; *n]),
                Factor::Diagonal(d) => Factor::Diagonal(d.iter().map(|v| *v * t).collect()),
                Factor::Tridiagonal(m) => Factor::Tridiagonal(m.scaled(t)),
                Factor::Dense(m) => Factor::Dense(m * t),
            };
        }
        out
    }

    /// Splits a global big-endian index into per-dimension indices.
    pub fn split_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for l in (0..self.dim()).rev() {
            idx[l] = i % self.sizes[l];
            i /= self.sizes[l];
        }
        idx
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        let ii = self.split_index(i);
        let jj = self.split_index(j);
        self.terms
            .iter()
            .map(|term| {
                term.iter()
                    .enumerate()
                    .fold(T::one(), |acc, (l, f)| acc * f.entry(ii[l], jj[l]))
            })
            .fold(T::zero(), |a, b| a + b)
    }

    /// Half-bandwidth of the assembled matrix.
    pub fn bandwidth(&self) -> usize {
        let mut stride = 1usize;
        let mut strides = vec![0; self.dim()];
        for l in (0..self.dim()).rev() {
            strides[l] = stride;
            stride *= self.sizes[l];
        }
        self.terms
            .iter()
            .map(|term| {
                term.iter()
                    .enumerate()
                    .map(|(l, f)| f.bandwidth() * strides[l])
                    .sum::<usize>()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.terms.iter().all(|t| t.iter().all(|f| f.is_symmetric()))
    }

    /// Product with a full vector in big-endian ordering.
    pub fn matvec_dense(&self, x: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.dofs() {
            return Err(Error::validation(format!(
                "vector length {} differs from operator size {}",
                x.len(),
                self.dofs()
            )));
        }
        match self.dim() {
            1 => {
                let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
                let mut y = DMatrix::zeros(x.len(), 1);
                for term in &self.terms {
                    y += term[0].apply(&xm);
                }
                Ok(DVector::from_column_slice(y.as_slice()))
            }
            2 => {
                let (n1, n2) = (self.sizes[0], self.sizes[1]);
                // Column-major n2×n1 storage of the row-major n1×n2 matricization.
                let xt = DMatrix::from_column_slice(n2, n1, x.as_slice());
                let mut y = DMatrix::zeros(n2, n1);
                for term in &self.terms {
                    let left = term[1].apply(&xt);
                    let both = term[0].apply(&left.transpose()).transpose();
                    y += both;
                }
                Ok(DVector::from_column_slice(y.as_slice()))
            }
            d => Err(Error::UnsupportedDimension {
                dim: d,
                kron_rank: self.rank(),
            }),
        }
    }
}

/// Mass matrices used in the Kronecker terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassTreatment {
    /// Row-sum lumped diagonal mass.
    #[default]
    Lumped,
    /// Full tridiagonal Galerkin mass.
    Consistent,
}

/// Per-element weighted moments `(∫a, ∫aψ_L², ∫aψ_Lψ_R, ∫aψ_R²)`.
pub(crate) fn element_moments<T: Scalar>(q: &ElementQuadrature<T>, weight: &[T]) -> Vec<[T; 4]> {
    let pts = q.points();
    let wts = q.weights();
    (0..q.elements())
        .map(|e| {
            let mut m = [T::zero(); 4];
            for p in q.element_points(e) {
                let (l, r) = q.local_shapes(e, pts[p]);
                let w = wts[p] * weight[p];
                m[0] += w;
                m[1] += w * l * l;
                m[2] += w * l * r;
                m[3] += w * r * r;
            }
            m
        })
        .collect()
}

/// Weighted stiffness and mass matrices from sampled weight values.
pub fn assemble_1d_sampled<T: Scalar>(
    q: &ElementQuadrature<T>,
    weight: &[T],
) -> (TridiagonalMatrix<T>, TridiagonalMatrix<T>) {
    let n = q.n();
    let h = q.h();
    let inv_h2 = T::one() / (h * h);
    let moments = element_moments(q, weight);
    let mut sd = vec![T::zero(); n];
    let mut so = vec![T::zero(); n - 1];
    let mut md = vec![T::zero(); n];
    let mut mo = vec![T::zero(); n - 1];
    // Element e joins grid nodes e and e+1, i.e. unknowns e-1 and e.
    for (e, m) in moments.iter().enumerate() {
        let k = m[0] * inv_h2;
        if e >= 1 {
            sd[e - 1] += k;
            md[e - 1] += m[1];
        }
        if e < n {
            sd[e] += k;
            md[e] += m[3];
        }
        if e >= 1 && e < n {
            so[e - 1] -= k;
            mo[e - 1] += m[2];
        }
    }
    (
        TridiagonalMatrix { diag: sd, off: so },
        TridiagonalMatrix { diag: md, off: mo },
    )
}

/// Element quadrature for `n` interior nodes resolving the given factor.
pub fn quadrature_for<T: Scalar>(n: usize, features: &Features<T>) -> ElementQuadrature<T> {
    ElementQuadrature::new(n, features)
}

/// Per-dimension quadratures resolving every function in `fns`.
pub fn quadratures_for<T: Scalar>(grid: &UniformGrid, fns: &[&SeparableFunction<T>]) -> Vec<ElementQuadrature<T>> {
    (0..grid.dim())
        .map(|l| {
            let features = fns.iter().fold(Features::default(), |acc, f| acc.merge(f.features(l)));
            ElementQuadrature::new(grid.size(l), &features)
        })
        .collect()
}

/// P1 stiffness and mass matrices weighted by `factor` on a grid with `n` interior nodes.
pub fn assemble_1d<T: Scalar>(
    factor: &UnivariateFactor<T>,
    n: usize,
) -> Result<(TridiagonalMatrix<T>, TridiagonalMatrix<T>)> {
    if n < 2 {
        return Err(Error::validation(format!("need at least 2 interior nodes, got {n}")));
    }
    let q = ElementQuadrature::new(n, &factor.features());
    let w = q.sample(|x| factor.value(x));
    Ok(assemble_1d_sampled(&q, &w))
}

/// Kronecker rank of the stiffness matrix of a rank-`R` coefficient in `d` dimensions.
pub fn kron_rank(dim: usize, coeff_rank: usize) -> usize {
    dim * coeff_rank
}

fn mass_factor<T: Scalar>(mass: TridiagonalMatrix<T>, treatment: MassTreatment) -> Factor<T> {
    match treatment {
        MassTreatment::Lumped => Factor::Diagonal(lump_mass(&mass)),
        MassTreatment::Consistent => Factor::Tridiagonal(mass),
    }
}

/// Stiffness matrix `Σ_s Σ_ℓ D_1s ⊗ .. ⊗ A_ℓs ⊗ .. ⊗ D_ds` using shared quadratures.
pub fn assemble_kron_stiffness_with<T: Scalar>(
    coeff: &SeparableFunction<T>,
    quads: &[ElementQuadrature<T>],
    mass: MassTreatment,
) -> Result<KroneckerMatrix<T>> {
    let d = coeff.dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension {
            dim: d,
            kron_rank: kron_rank(d, coeff.rank()),
        });
    }
    if quads.len() != d {
        return Err(Error::validation("one quadrature per dimension is required"));
    }
    let sizes: Vec<usize> = quads.iter().map(|q| q.n()).collect();
    let per_term: Vec<Vec<(TridiagonalMatrix<T>, TridiagonalMatrix<T>)>> = coeff
        .terms()
        .par_iter()
        .map(|term| {
            term.iter()
                .zip(quads.iter())
                .map(|(f, q)| assemble_1d_sampled(q, &q.sample(|x| f.value(x))))
                .collect()
        })
        .collect();
    let mut terms = Vec::with_capacity(kron_rank(d, coeff.rank()));
    for mats in per_term {
        if d == 1 {
            terms.push(vec![Factor::Tridiagonal(mats[0].0.clone())]);
        } else {
            let (a1, m1) = mats[0].clone();
            let (a2, m2) = mats[1].clone();
            terms.push(vec![Factor::Tridiagonal(a1), mass_factor(m2, mass)]);
            terms.push(vec![mass_factor(m1, mass), Factor::Tridiagonal(a2)]);
        }
    }
    KroneckerMatrix::new(sizes, terms)
}

/// Kronecker stiffness matrix for `coeff` on `grid`.
pub fn assemble_kron_stiffness<T: Scalar>(
    coeff: &SeparableFunction<T>,
    grid: &UniformGrid,
    mass: MassTreatment,
) -> Result<KroneckerMatrix<T>> {
    if coeff.dim() != grid.dim() {
        return Err(Error::validation("coefficient and grid dimensions differ"));
    }
    if coeff.dim() > 2 {
        return Err(Error::UnsupportedDimension {
            dim: coeff.dim(),
            kron_rank: kron_rank(coeff.dim(), coeff.rank()),
        });
    }
    let quads = quadratures_for(grid, &[coeff]);
    assemble_kron_stiffness_with(coeff, &quads, mass)
}

/// Preconditioner `Λ∘` for a rank-one (product or constant) coefficient.
pub fn assemble_preconditioner_with<T: Scalar>(
    a0: &SeparableFunction<T>,
    quads: &[ElementQuadrature<T>],
    mass: MassTreatment,
) -> Result<KroneckerMatrix<T>> {
    if a0.rank() != 1 {
        return Err(Error::validation(format!(
            "preconditioner coefficient must have rank 1, got rank {}",
            a0.rank()
        )));
    }
    assemble_kron_stiffness_with(a0, quads, mass)
}

pub fn assemble_preconditioner<T: Scalar>(
    a0: &SeparableFunction<T>,
    grid: &UniformGrid,
    mass: MassTreatment,
) -> Result<KroneckerMatrix<T>> {
    let quads = quadratures_for(grid, &[a0]);
    assemble_preconditioner_with(a0, &quads, mass)
}

/// Expands the Kronecker matrix; refuses more than [`DENSIFY_CAP`] unknowns.
pub fn densify<T: Scalar>(k: &KroneckerMatrix<T>) -> Result<DMatrix<T>> {
    let n = k.dofs();
    if n > DENSIFY_CAP {
        return Err(Error::SizeCap(format!(
            "densify refuses {n} unknowns (cap {DENSIFY_CAP}); use the banded oracle instead"
        )));
    }
    let mut out = DMatrix::zeros(n, n);
    for term in k.terms() {
        let mut acc = term[0].to_dense();
        for f in &term[1..] {
            acc = acc.kronecker(&f.to_dense());
        }
        out += acc;
    }
    Ok(out)
}

/// Load vector `∫ w φ_i` for sampled values `w`.
pub fn load_vector_sampled<T: Scalar>(q: &ElementQuadrature<T>, values: &[T]) -> Vec<T> {
    let n = q.n();
    let pts = q.points();
    let wts = q.weights();
    let mut out = vec![T::zero(); n];
    for e in 0..q.elements() {
        let (mut l, mut r) = (T::zero(), T::zero());
        for p in q.element_points(e) {
            let (sl, sr) = q.local_shapes(e, pts[p]);
            let w = wts[p] * values[p];
            l += w * sl;
            r += w * sr;
        }
        if e >= 1 {
            out[e - 1] += l;
        }
        if e < n {
            out[e] += r;
        }
    }
    out
}

/// Discrete right-hand side `f_i = ∫ f φ_i` as a rank-`R_f` low-rank vector.
pub fn assemble_rhs_with<T: Scalar>(f: &SeparableRhs<T>, quads: &[ElementQuadrature<T>]) -> Result<LowRankVector<T>> {
    match f.dim() {
        1 => {
            let q = &quads[0];
            let mut acc = vec![T::zero(); q.n()];
            for term in f.terms() {
                let v = load_vector_sampled(q, &q.sample(|x| term[0].value(x)));
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b;
                }
            }
            Ok(LowRankVector::plain(DVector::from_vec(acc)))
        }
        2 => {
            let (q1, q2) = (&quads[0], &quads[1]);
            let r = f.rank();
            let mut u = DMatrix::zeros(q1.n(), r);
            let mut w = DMatrix::zeros(q2.n(), r);
            for (s, term) in f.terms().iter().enumerate() {
                let a = load_vector_sampled(q1, &q1.sample(|x| term[0].value(x)));
                let b = load_vector_sampled(q2, &q2.sample(|x| term[1].value(x)));
                u.column_mut(s).copy_from_slice(&a);
                w.column_mut(s).copy_from_slice(&b);
            }
            LowRankVector::separated(u, w, DVector::from_element(r, T::one()))
        }
        d => Err(Error::UnsupportedDimension {
            dim: d,
            kron_rank: kron_rank(d, f.rank()),
        }),
    }
}

pub fn assemble_rhs<T: Scalar>(f: &SeparableRhs<T>, grid: &UniformGrid) -> Result<LowRankVector<T>> {
    let quads = quadratures_for(grid, &[f]);
    assemble_rhs_with(f, &quads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_piecewise, SeparableCoefficient};

    #[test]
    fn unit_weight_matrices() {
        let n = 7;
        let h = 1.0 / 8.0;
        let (a, m) = assemble_1d(&UnivariateFactor::constant(1.0f64), n).unwrap();
        for i in 0..n {
            assert!((a.diag()[i] - 2.0 / h).abs() < 1e-12);
            assert!((m.diag()[i] - 4.0 * h / 6.0).abs() < 1e-15);
        }
        for i in 0..n - 1 {
            assert!((a.off()[i] + 1.0 / h).abs() < 1e-12);
            assert!((m.off()[i] - h / 6.0).abs() < 1e-15);
        }
        let lumped = lump_mass(&m);
        assert!(lumped[1..n - 1].iter().all(|d| (d - h).abs() < 1e-15));
    }

    #[test]
    fn constant_weight_scales() {
        let (a1, m1) = assemble_1d(&UnivariateFactor::constant(1.0f64), 9).unwrap();
        let (a3, m3) = assemble_1d(&UnivariateFactor::constant(3.0f64), 9).unwrap();
        assert!((a1.to_dense() * 3.0 - a3.to_dense()).amax() < 1e-12);
        assert!((m1.to_dense() * 3.0 - m3.to_dense()).amax() < 1e-15);
    }

    #[test]
    fn aligned_two_level_matches_element_closed_form() {
        // n = 7, h = 1/8, jump at x = 0.5 (a grid node).
        let f = make_piecewise(vec![0.5], vec![1.0f64, 3.0]).unwrap();
        let (a, m) = assemble_1d(&f, 7).unwrap();
        let h = 1.0 / 8.0;
        let elem = |e: usize| if e < 4 { 1.0 } else { 3.0 };
        for i in 0..7 {
            // Unknown i sits between elements i and i+1.
            let expected = (elem(i) + elem(i + 1)) / h;
            assert!((a.diag()[i] - expected).abs() < 1e-12);
            let expected_m = (elem(i) + elem(i + 1)) * h / 3.0;
            assert!((m.diag()[i] - expected_m).abs() < 1e-15);
        }
        for i in 0..6 {
            assert!((a.off()[i] + elem(i + 1) / h).abs() < 1e-12);
            assert!((m.off()[i] - elem(i + 1) * h / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lumping_diagonal_is_identity() {
        let d = TridiagonalMatrix::new(vec![1.0f64, 2.0, 3.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(lump_mass(&d), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn tridiagonal_solve_inverts() {
        let (a, _) = assemble_1d(&UnivariateFactor::constant(2.0f64), 12).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&x);
        let y = a.solve(&b).unwrap();
        for (p, q) in x.iter().zip(y.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn kron_rank_counts() {
        let a = crate::coefficients::make_periodic_bumps(4, 1.0f64, 0.5, 1.0).unwrap();
        let grid = UniformGrid::square(2, 8).unwrap();
        let k = assemble_kron_stiffness(a.function(), &grid, MassTreatment::Lumped).unwrap();
        assert_eq!(k.rank(), 4);
        let one = SeparableCoefficient::constant(2, 1.0f64).unwrap();
        let l = assemble_preconditioner(one.function(), &grid, MassTreatment::Lumped).unwrap();
        assert_eq!(l.rank(), 2);
        assert!(assemble_preconditioner(a.function(), &grid, MassTreatment::Lumped).is_err());
    }

    #[test]
    fn three_dimensions_unsupported() {
        let c = SeparableFunction::constant(3, 1.0f64);
        let grid = UniformGrid::square(3, 4).unwrap();
        match assemble_kron_stiffness(&c, &grid, MassTreatment::Lumped) {
            Err(Error::UnsupportedDimension { dim, kron_rank }) => {
                assert_eq!((dim, kron_rank), (3, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn densify_identity_and_cap() {
        let i = KroneckerMatrix::<f64>::identity(vec![3, 4]);
        assert_eq!(densify(&i).unwrap(), DMatrix::identity(12, 12));
        let big = KroneckerMatrix::<f64>::identity(vec![101, 100]);
        assert!(matches!(densify(&big), Err(Error::SizeCap(_))));
    }

    #[test]
    fn matvec_matches_dense() {
        let a = crate::coefficients::make_periodic_bumps(3, 1.0f64, 0.6, 0.5).unwrap();
        let grid = UniformGrid::new(vec![6, 5]).unwrap();
        for mass in [MassTreatment::Lumped, MassTreatment::Consistent] {
            let k = assemble_kron_stiffness(a.function(), &grid, mass).unwrap();
            let dense = densify(&k).unwrap();
            let x = DVector::from_fn(30, |i, _| ((i * 7 + 3) % 11) as f64 - 5.0);
            let y = k.matvec_dense(&x).unwrap();
            assert!((&dense * &x - y).amax() < 1e-10);
            assert_eq!(dense, dense.transpose());
            let band = if mass == MassTreatment::Lumped { 5 } else { 6 };
            assert_eq!(k.bandwidth(), band);
        }
    }

    #[test]
    fn rhs_is_rank_one_for_product() {
        let f = SeparableRhs::product(vec![
            UnivariateFactor::Sinusoid {
                offset: 0.0f64,
                amplitude: 1.0,
                omega: 2.0,
                phase: 0.0,
            },
            UnivariateFactor::Sinusoid {
                offset: 0.0,
                amplitude: 1.0,
                omega: 2.0,
                phase: 0.0,
            },
        ])
        .unwrap();
        let grid = UniformGrid::square(2, 15).unwrap();
        let v = assemble_rhs(&f, &grid).unwrap();
        assert_eq!(v.rank(), 1);
    }
}
