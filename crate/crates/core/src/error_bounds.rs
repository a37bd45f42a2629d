//! Guaranteed two-sided error bounds for iterates of the fixed-point method.
//!
//! With `v` an iterate, `ṽ` the computed next iterate and `η = v − ṽ`, any flux
//! `y` with `−div y = ρf` gives the majorant
//! `M² = ∫ a∘⁻¹ |a∘∇η + y − ρa∇v|²  ≥  ‖v_ρ − ṽ‖∘²`,
//! where `v_ρ` is the exact next iterate. Combined with the contraction factor `q`
//! this yields `(δ − M)/(1 + q) ≤ ‖v − u‖∘ ≤ (δ + M)/(1 − q)` for `δ = ‖η‖∘`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coefficients::{SeparableFunction, SeparableRhs};
use crate::error::{Error, Result};
use crate::kron_fem::{load_vector_sampled, MassTreatment, TridiagonalMatrix};
use crate::lowrank::{energy_norm, LowRankVector};
use crate::precond::GeneralizedEigen;
use crate::problem::DiscreteProblem;
use crate::quadrature::{ElementQuadrature, Features};
use crate::scalar::{scaled_tol, Scalar};

/// Two-sided bound on `‖v − u‖∘` for one iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCertificate<T> {
    pub k: usize,
    pub delta: T,
    pub majorant: T,
    pub q: T,
    pub lower: T,
    pub upper: T,
    /// True when `q` comes from probe-grid inf/sup values rather than exact bounds.
    pub grid_certified: bool,
}

/// `lower = max{0, (δ − M)/(1 + q)}`, `upper = (δ + M)/(1 − q)`.
pub fn ostrowski_bounds<T: Scalar>(delta: T, majorant: T, q: T) -> Result<(T, T)> {
    if !(q >= T::zero() && q < T::one()) {
        return Err(Error::validation(format!(
            "contraction factor must lie in [0, 1), got {}",
            q.as_f64()
        )));
    }
    if !(delta >= T::zero() && majorant >= T::zero()) {
        return Err(Error::validation("delta and majorant must be nonnegative"));
    }
    let lower = ((delta - majorant) / (T::one() + q)).max(T::zero());
    let upper = (delta + majorant) / (T::one() - q);
    Ok((lower, upper))
}

/// Node value `j = 0..=n+1` of an interior vector padded with Dirichlet zeros.
fn node<T: Scalar>(v: &[T], j: usize) -> T {
    if j == 0 || j > v.len() {
        T::zero()
    } else {
        v[j - 1]
    }
}

/// Derivative of the P1 interpolant at every quadrature point.
pub fn derivative_at_points<T: Scalar>(q: &ElementQuadrature<T>, v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); q.points().len()];
    let inv_h = T::one() / q.h();
    for e in 0..q.elements() {
        let slope = (node(v, e + 1) - node(v, e)) * inv_h;
        for p in q.element_points(e) {
            out[p] = slope;
        }
    }
    out
}

/// Value of the P1 interpolant at every quadrature point.
pub fn values_at_points<T: Scalar>(q: &ElementQuadrature<T>, v: &[T]) -> Vec<T> {
    let pts = q.points();
    let mut out = vec![T::zero(); pts.len()];
    for e in 0..q.elements() {
        let (l, r) = (node(v, e), node(v, e + 1));
        for p in q.element_points(e) {
            let (sl, sr) = q.local_shapes(e, pts[p]);
            out[p] = l * sl + r * sr;
        }
    }
    out
}

fn sample_1d<T: Scalar>(q: &ElementQuadrature<T>, f: &SeparableFunction<T>) -> Vec<T> {
    q.sample(|x| f.eval_unchecked(&[x]))
}

/// The integrals entering the one-dimensional majorant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Majorant1d<T> {
    /// `I⊕` from the closed combination of the integrals.
    pub value: T,
    /// `(∫ a∘⁻¹ (a∘η′ + ρ(μ̄ + g) − ρ a v′)²)^{1/2}` evaluated directly.
    pub direct: T,
    pub mu: T,
    /// `F₁ … F₅`.
    pub f: [T; 5],
    /// `G₁ … G₄`.
    pub g: [T; 4],
}

/// One-dimensional majorant with the flux `y = ρ(μ̄ + g)`, `g(x) = −∫₀ˣ f`.
///
/// `I² = F₃ + 2ρF₅ − 2ρG₂ + ρ²(F₄ − 2G₃ + G₄)` with
/// `F₁ = ∫a∘⁻¹`, `F₂ = ∫a∘⁻¹g`, `F₃ = ∫a∘η′²`, `F₄ = ∫a∘⁻¹(μ̄+g)²`, `F₅ = ∫fη`,
/// `G₁ = ∫a∘⁻¹av′`, `G₂ = ∫av′η′`, `G₃ = ∫(μ̄+g)a∘⁻¹av′`, `G₄ = ∫a∘⁻¹a²v′²`
/// and `μ̄ = (G₁ − F₂)/F₁`.
#[allow(clippy::too_many_arguments)]
pub fn majorant_1d<T: Scalar>(
    v: &[T],
    v_tilde: &[T],
    a: &SeparableFunction<T>,
    a0: &SeparableFunction<T>,
    f: &SeparableRhs<T>,
    rho: T,
    q: &ElementQuadrature<T>,
) -> Result<Majorant1d<T>> {
    if v.len() != q.n() || v_tilde.len() != q.n() {
        return Err(Error::validation("iterate length differs from the grid size"));
    }
    if a.dim() != 1 || a0.dim() != 1 || f.dim() != 1 {
        return Err(Error::validation("the one-dimensional majorant needs 1D data"));
    }
    let eta: Vec<T> = v.iter().zip(v_tilde).map(|(x, y)| *x - *y).collect();
    let av = sample_1d(q, a);
    let a0v = sample_1d(q, a0);
    let fv = sample_1d(q, f);
    let g: Vec<T> = q
        .antiderivative(|x| f.eval_unchecked(&[x]))
        .into_iter()
        .map(|x| -x)
        .collect();
    let dv = derivative_at_points(q, v);
    let deta = derivative_at_points(q, &eta);
    let eta_p = values_at_points(q, &eta);
    let w = q.weights();

    let sum = |fun: &dyn Fn(usize) -> T| -> T { (0..w.len()).fold(T::zero(), |acc, p| acc + w[p] * fun(p)) };
    let f1 = sum(&|p| T::one() / a0v[p]);
    let f2 = sum(&|p| g[p] / a0v[p]);
    let f3 = sum(&|p| a0v[p] * deta[p] * deta[p]);
    let f5 = sum(&|p| fv[p] * eta_p[p]);
    let g1 = sum(&|p| av[p] * dv[p] / a0v[p]);
    let mu = (g1 - f2) / f1;
    let f4 = sum(&|p| (mu + g[p]) * (mu + g[p]) / a0v[p]);
    let g2 = sum(&|p| av[p] * dv[p] * deta[p]);
    let g3 = sum(&|p| (mu + g[p]) * av[p] * dv[p] / a0v[p]);
    let g4 = sum(&|p| av[p] * av[p] * dv[p] * dv[p] / a0v[p]);
    let two = T::lit(2.0);
    let i2 = f3 + two * rho * f5 - two * rho * g2 + rho * rho * (f4 - two * g3 + g4);
    let direct2 = sum(&|p| {
        let r = a0v[p] * deta[p] + rho * (mu + g[p]) - rho * av[p] * dv[p];
        r * r / a0v[p]
    });
    let tol = scaled_tol::<T>(1e-12) * (T::one() + f3.abs() + (rho * rho * (f4 + g4)).abs());
    if i2 < -tol {
        return Err(Error::breakdown(format!(
            "one-dimensional majorant square is negative ({:.3e})",
            i2.as_f64()
        )));
    }
    Ok(Majorant1d {
        value: i2.max(T::zero()).sqrt(),
        direct: direct2.max(T::zero()).sqrt(),
        mu,
        f: [f1, f2, f3, f4, f5],
        g: [g1, g2, g3, g4],
    })
}

/// Flux `y* = a∘(v_ρ − v)′ + ρ a v′` at the quadrature points; with the exact
/// next iterate `v_ρ` it makes the majorant equal to `‖v_ρ − ṽ‖∘`.
pub fn exact_flux_1d<T: Scalar>(
    q: &ElementQuadrature<T>,
    v: &[T],
    v_rho: &[T],
    a: &SeparableFunction<T>,
    a0: &SeparableFunction<T>,
    rho: T,
) -> Vec<T> {
    let av = sample_1d(q, a);
    let a0v = sample_1d(q, a0);
    let dv = derivative_at_points(q, v);
    let diff: Vec<T> = v_rho.iter().zip(v).map(|(x, y)| *x - *y).collect();
    let dd = derivative_at_points(q, &diff);
    (0..av.len()).map(|p| a0v[p] * dd[p] + rho * av[p] * dv[p]).collect()
}

/// Components of the general majorant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralMajorant<T> {
    pub value: T,
    /// `‖η‖∘² + 2(Qη, τ) + ‖τ‖²_{a∘⁻¹}`.
    pub quadratic: T,
    /// Dual norm of the equilibration defect `Q*y + ρf` against FEM test functions.
    pub defect: T,
    /// `defect / √λ∘⊖`, added to the square root of the quadratic form.
    pub defect_term: T,
}

/// Majorant for an arbitrary flux `y` sampled at the quadrature points (1D).
///
/// `M = (‖η‖∘² + 2(η′, τ) + ‖τ‖²_{a∘⁻¹})^{1/2} + λ∘⊖^{−1/2} ⦀Q*y + ρf⦀` with
/// `τ = y − ρ a v′`. The defect is measured on the FEM space: its dual norm is
/// `(rᵀK⁻¹r)^{1/2}` with `r_i = ∫ y φ_i′ − ρ∫ f φ_i` and `K` the unit-weight stiffness.
#[allow(clippy::too_many_arguments)]
pub fn majorant_general<T: Scalar>(
    q: &ElementQuadrature<T>,
    v: &[T],
    eta: &[T],
    flux: &[T],
    a: &SeparableFunction<T>,
    a0: &SeparableFunction<T>,
    f: &SeparableRhs<T>,
    rho: T,
    lambda0_minus: T,
) -> Result<GeneralMajorant<T>> {
    if flux.len() != q.points().len() {
        return Err(Error::validation("flux must be sampled at every quadrature point"));
    }
    if !(lambda0_minus > T::zero()) {
        return Err(Error::validation("lambda0_minus must be positive"));
    }
    let av = sample_1d(q, a);
    let a0v = sample_1d(q, a0);
    let dv = derivative_at_points(q, v);
    let deta = derivative_at_points(q, eta);
    let w = q.weights();
    let mut e2 = T::zero();
    let mut cross = T::zero();
    let mut t2 = T::zero();
    for p in 0..w.len() {
        let tau = flux[p] - rho * av[p] * dv[p];
        e2 += w[p] * a0v[p] * deta[p] * deta[p];
        cross += w[p] * deta[p] * tau;
        t2 += w[p] * tau * tau / a0v[p];
    }
    let quadratic = e2 + T::lit(2.0) * cross + t2;
    let tol = scaled_tol::<T>(1e-12) * (T::one() + e2 + t2);
    if quadratic < -tol {
        return Err(Error::breakdown(format!(
            "majorant quadratic form is negative ({:.3e})",
            quadratic.as_f64()
        )));
    }

    // r_i = ∫ y φ_i′ − ρ f_i.
    let n = q.n();
    let inv_h = T::one() / q.h();
    let load = load_vector_sampled(q, &sample_1d(q, f));
    let mut r: Vec<T> = load.iter().map(|x| -rho * *x).collect();
    for e in 0..q.elements() {
        let mut iy = T::zero();
        for p in q.element_points(e) {
            iy += w[p] * flux[p];
        }
        if e >= 1 {
            r[e - 1] -= iy * inv_h;
        }
        if e < n {
            r[e] += iy * inv_h;
        }
    }
    let k = TridiagonalMatrix::new(vec![T::lit(2.0) * inv_h; n], vec![-inv_h; n - 1])?;
    let kr = k.solve(&r)?;
    let dual2 = r.iter().zip(kr.iter()).fold(T::zero(), |a, (x, y)| a + *x * *y);
    let defect = dual2.max(T::zero()).sqrt();
    let defect_term = defect / lambda0_minus.sqrt();
    Ok(GeneralMajorant {
        value: quadratic.max(T::zero()).sqrt() + defect_term,
        quadratic,
        defect,
        defect_term,
    })
}

/// Antiderivatives of coarse P1 hats plus the constant function, on `[0, 1]`.
///
/// Index 0 is the constant 1; index `k+1` is `W_k(x) = ∫₀ˣ ψ_k` for the hat `ψ_k`
/// centred at `k/m`, `k = 0..=m`. Together they span the C¹ piecewise quadratics
/// on the coarse grid, and `curl(W_k ⊗ W_l)` spans divergence-free fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratedHats {
    pub cells: usize,
}

impl IntegratedHats {
    pub fn len(&self) -> usize {
        self.cells + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes<T: Scalar>(&self) -> Vec<T> {
        (1..self.cells)
            .map(|k| T::from_usize_lossy(k) / T::from_usize_lossy(self.cells))
            .collect()
    }

    fn unclipped<T: Scalar>(&self, k: usize, x: T) -> T {
        let hh = T::one() / T::from_usize_lossy(self.cells);
        let c = T::from_usize_lossy(k) * hh;
        let two = T::lit(2.0);
        if x <= c - hh {
            T::zero()
        } else if x <= c {
            let d = x - (c - hh);
            d * d / (two * hh)
        } else if x <= c + hh {
            let d = c + hh - x;
            hh - d * d / (two * hh)
        } else {
            hh
        }
    }

    pub fn value<T: Scalar>(&self, idx: usize, x: T) -> T {
        if idx == 0 {
            T::one()
        } else {
            let k = idx - 1;
            self.unclipped(k, x) - self.unclipped(k, T::zero())
        }
    }

    pub fn derivative<T: Scalar>(&self, idx: usize, x: T) -> T {
        if idx == 0 {
            return T::zero();
        }
        let hh = T::one() / T::from_usize_lossy(self.cells);
        let c = T::from_usize_lossy(idx - 1) * hh;
        let t = (x - c).abs() / hh;
        if t >= T::one() {
            T::zero()
        } else {
            T::one() - t
        }
    }
}

/// Point-evaluation matrices of P1 functions and their derivatives (`P × n`).
fn fem_eval<T: Scalar>(q: &ElementQuadrature<T>) -> (DMatrix<T>, DMatrix<T>) {
    let pts = q.points();
    let n = q.n();
    let inv_h = T::one() / q.h();
    let mut e = DMatrix::zeros(pts.len(), n);
    let mut d = DMatrix::zeros(pts.len(), n);
    for el in 0..q.elements() {
        for p in q.element_points(el) {
            let (sl, sr) = q.local_shapes(el, pts[p]);
            if el >= 1 {
                e[(p, el - 1)] = sl;
                d[(p, el - 1)] = -inv_h;
            }
            if el < n {
                e[(p, el)] = sr;
                d[(p, el)] = inv_h;
            }
        }
    }
    (e, d)
}

/// Per-dimension data of the two-dimensional flux space.
#[derive(Clone, Debug)]
pub struct FluxDimension<T: Scalar> {
    pub basis: IntegratedHats,
    pub quad: ElementQuadrature<T>,
    /// `W_k` and `W_k′` at the quadrature points (`P × (m+2)`).
    pub w_vals: DMatrix<T>,
    pub w_ders: DMatrix<T>,
    /// P1 basis values and derivatives at the quadrature points (`P × n`).
    pub fem_vals: DMatrix<T>,
    pub fem_ders: DMatrix<T>,
    /// `∫ W_k W_s` and `∫ W_k′ W_s′`.
    pub mass: DMatrix<T>,
    pub stiff: DMatrix<T>,
}

impl<T: Scalar> FluxDimension<T> {
    pub fn new(n: usize, cells: usize, features: Features<T>) -> Result<Self> {
        if cells < 1 {
            return Err(Error::validation("flux grid needs at least one cell"));
        }
        let basis = IntegratedHats { cells };
        let features = features.merge(Features {
            breakpoints: basis.nodes(),
            length: None,
        });
        let quad = ElementQuadrature::new(n, &features);
        let pts = quad.points();
        let m = basis.len();
        let w_vals = DMatrix::from_fn(pts.len(), m, |p, k| basis.value(k, pts[p]));
        let w_ders = DMatrix::from_fn(pts.len(), m, |p, k| basis.derivative(k, pts[p]));
        let (fem_vals, fem_ders) = fem_eval(&quad);
        let mass = weighted_gram(&w_vals, quad.weights(), None, &w_vals);
        let stiff = weighted_gram(&w_ders, quad.weights(), None, &w_ders);
        Ok(Self {
            basis,
            quad,
            w_vals,
            w_ders,
            fem_vals,
            fem_ders,
            mass,
            stiff,
        })
    }

    pub fn sample(&self, f: &crate::coefficients::UnivariateFactor<T>) -> DVector<T> {
        DVector::from_iterator(self.quad.points().len(), self.quad.points().iter().map(|x| f.value(*x)))
    }
}

/// `Xᵀ diag(w · c) Y`.
fn weighted_gram<T: Scalar>(x: &DMatrix<T>, w: &[T], c: Option<&DVector<T>>, y: &DMatrix<T>) -> DMatrix<T> {
    let mut wy = y.clone();
    for (p, mut row) in wy.row_iter_mut().enumerate() {
        let s = match c {
            Some(c) => w[p] * c[p],
            None => w[p],
        };
        row *= s;
    }
    x.transpose() * wy
}

/// `w₁ᵀ (F ∘ F) w₂` for a field sampled on the tensor quadrature grid.
fn tensor_square_integral<T: Scalar>(f: &DMatrix<T>, w1: &[T], w2: &[T]) -> T {
    let mut acc = T::zero();
    for (p, wp) in w1.iter().enumerate() {
        let mut row = T::zero();
        for (q, wq) in w2.iter().enumerate() {
            let v = f[(p, q)];
            row += *wq * v * v;
        }
        acc += *wp * row;
    }
    acc
}

/// Result of the two-dimensional flux majorant.
#[derive(Clone, Debug)]
pub struct FluxMajorant2d<T: Scalar> {
    /// `M⊕` from the direct integral of the optimal residual field.
    pub value: T,
    /// `M⊕` from `a∘⁻¹(‖z − Υ₀‖² − σ·b)` at the Galerkin optimum.
    pub value_expanded: T,
    /// Flux coefficients `σ_kl` (`(m₁+2) × (m₂+2)`, pair `(0, 0)` unused).
    pub sigma: DMatrix<T>,
    /// Right-hand side `b_kl = (Υ_kl, z − Υ₀)`.
    pub rhs: DMatrix<T>,
}

/// Flux space for the two-dimensional majorant on a given grid.
#[derive(Clone, Debug)]
pub struct FluxBasis2d<T: Scalar> {
    pub dims: [FluxDimension<T>; 2],
}

impl<T: Scalar> FluxBasis2d<T> {
    pub fn new(sizes: [usize; 2], cells: [usize; 2], a: &SeparableFunction<T>, f: &SeparableRhs<T>) -> Result<Self> {
        let d0 = FluxDimension::new(sizes[0], cells[0], a.features(0).merge(f.features(0)))?;
        let d1 = FluxDimension::new(sizes[1], cells[1], a.features(1).merge(f.features(1)))?;
        Ok(Self { dims: [d0, d1] })
    }

    /// Matricized `(Υ_kl, w ∇v)` for `w = Σ_s w1_s ⊗ w2_s` (sampled) and low-rank `v`.
    fn flux_against_gradient(&self, weights: &[(DVector<T>, DVector<T>)], v: &LowRankVector<T>) -> Result<DMatrix<T>> {
        let (d1, d2) = (&self.dims[0], &self.dims[1]);
        let (u, w, s) = v
            .factors()
            .ok_or_else(|| Error::validation("two-dimensional majorant needs a separated vector"))?;
        let mut us = u.clone();
        for (j, mut c) in us.column_iter_mut().enumerate() {
            c *= s[j];
        }
        let mut out = DMatrix::zeros(d1.basis.len(), d2.basis.len());
        for (c1, c2) in weights {
            // F̂₁ = ∫ c₁ φ_i′ W_k, Ĝ₁ = ∫ c₁ φ_i W_k′, F̂₂ = ∫ c₂ φ_j W_l′, Ĝ₂ = ∫ c₂ φ_j′ W_l.
            let fh1 = weighted_gram(&d1.fem_ders, d1.quad.weights(), Some(c1), &d1.w_vals);
            let gh1 = weighted_gram(&d1.fem_vals, d1.quad.weights(), Some(c1), &d1.w_ders);
            let fh2 = weighted_gram(&d2.fem_vals, d2.quad.weights(), Some(c2), &d2.w_ders);
            let gh2 = weighted_gram(&d2.fem_ders, d2.quad.weights(), Some(c2), &d2.w_vals);
            out += (fh1.transpose() * &us) * (fh2.transpose() * w).transpose();
            out -= (gh1.transpose() * &us) * (gh2.transpose() * w).transpose();
        }
        Ok(out)
    }

    /// `max |∫ Υ_kl · ∇(φ_i ⊗ φ_j)|` over all pairs, i.e. the weak divergence of the basis.
    pub fn divergence_defect(&self) -> T {
        let (d1, d2) = (&self.dims[0], &self.dims[1]);
        let fh1 = weighted_gram(&d1.fem_ders, d1.quad.weights(), None, &d1.w_vals);
        let gh1 = weighted_gram(&d1.fem_vals, d1.quad.weights(), None, &d1.w_ders);
        let fh2 = weighted_gram(&d2.fem_vals, d2.quad.weights(), None, &d2.w_ders);
        let gh2 = weighted_gram(&d2.fem_ders, d2.quad.weights(), None, &d2.w_vals);
        let mut worst = T::zero();
        for i in 0..fh1.nrows() {
            for k in 0..fh1.ncols() {
                for j in 0..fh2.nrows() {
                    for l in 0..fh2.ncols() {
                        let v = (fh1[(i, k)] * fh2[(j, l)] - gh1[(i, k)] * gh2[(j, l)]).abs();
                        if v > worst {
                            worst = v;
                        }
                    }
                }
            }
        }
        worst
    }

    /// Solves `Yσ = b` with `Y = D₁ ⊗ S₂ + S₁ ⊗ D₂` in the per-dimension eigenbasis.
    /// The pair of constants spans no flux and is skipped.
    pub fn solve(&self, b: &DMatrix<T>) -> Result<DMatrix<T>> {
        let mut eig = Vec::with_capacity(2);
        for (l, d) in self.dims.iter().enumerate() {
            if let Some(bad) = first_dependent_column(&d.mass) {
                return Err(Error::validation(format!(
                    "flux basis function {bad} in dimension {l} is linearly dependent; \
                     offending pairs ({bad}, *) / (*, {bad})"
                )));
            }
            eig.push(GeneralizedEigen::new(&d.stiff, &d.mass)?);
        }
        let (e1, e2) = (&eig[0], &eig[1]);
        let lmax = e1.max_value() + e2.max_value();
        let cutoff = T::lit(1e-13) * lmax;
        let mut c = e1.vectors.transpose() * b * &e2.vectors;
        let mut null_pairs = Vec::new();
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                let lam = e1.values[i] + e2.values[j];
                if lam.abs() <= cutoff {
                    null_pairs.push((i, j));
                    c[(i, j)] = T::zero();
                } else {
                    c[(i, j)] /= lam;
                }
            }
        }
        if null_pairs.len() > 1 {
            return Err(Error::validation(format!(
                "flux system is singular beyond the constant pair; offending eigenpairs {:?}",
                &null_pairs[1..]
            )));
        }
        Ok(&e1.vectors * c * e2.vectors.transpose())
    }
}

fn first_dependent_column<T: Scalar>(m: &DMatrix<T>) -> Option<usize> {
    let n = m.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    let scale = (0..n).fold(T::zero(), |a, i| if m[(i, i)] > a { m[(i, i)] } else { a });
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::lit(1e-14) * scale) {
            return Some(j);
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    None
}

/// Two-dimensional majorant for constant `a∘ = c₀` with the flux
/// `y = Υ₀ + Σ σ_kl Υ_kl`, `Υ_kl = curl(W_k ⊗ W_l)`, `Υ₀ = (−ρ Σ_r P_r(x₁) f2_r(x₂), 0)`,
/// `P_r = ∫₀^{x₁} f1_r`, and `σ` minimizing the majorant (Galerkin system).
#[allow(clippy::too_many_arguments)]
pub fn majorant_2d_flux<T: Scalar>(
    basis: &FluxBasis2d<T>,
    v: &LowRankVector<T>,
    v_tilde: &LowRankVector<T>,
    a: &SeparableFunction<T>,
    a0: T,
    f: &SeparableRhs<T>,
    rho: T,
) -> Result<FluxMajorant2d<T>> {
    if a.dim() != 2 || f.dim() != 2 {
        return Err(Error::validation("the flux majorant needs two-dimensional data"));
    }
    if !(a0 > T::zero()) {
        return Err(Error::validation("a0 must be a positive constant"));
    }
    let (d1, d2) = (&basis.dims[0], &basis.dims[1]);
    if v.sizes() != [d1.quad.n(), d2.quad.n()] || v_tilde.sizes() != v.sizes() {
        return Err(Error::validation("iterate sizes differ from the flux basis grid"));
    }
    let eta = v.sub(v_tilde)?;
    let a_weights: Vec<(DVector<T>, DVector<T>)> =
        a.terms().iter().map(|t| (d1.sample(&t[0]), d2.sample(&t[1]))).collect();
    let ones = vec![(
        DVector::from_element(d1.quad.points().len(), T::one()),
        DVector::from_element(d2.quad.points().len(), T::one()),
    )];
    let b_a = basis.flux_against_gradient(&a_weights, v)?;
    let b_h = basis.flux_against_gradient(&ones, &eta)?;

    // (Υ_kl, Υ₀) = −ρ Σ_r (∫ W_k P_r)(∫ W_l′ f2_r).
    let mut p_vals = Vec::with_capacity(f.rank());
    let mut b_0 = DMatrix::zeros(d1.basis.len(), d2.basis.len());
    for t in f.terms() {
        let p = DVector::from_vec(d1.quad.antiderivative(|x| t[0].value(x)));
        let f2 = d2.sample(&t[1]);
        let g1 = weighted_gram(
            &d1.w_vals,
            d1.quad.weights(),
            Some(&p),
            &DMatrix::from_element(p.len(), 1, T::one()),
        );
        let g2 = weighted_gram(
            &d2.w_ders,
            d2.quad.weights(),
            Some(&f2),
            &DMatrix::from_element(f2.len(), 1, T::one()),
        );
        b_0 -= (g1 * g2.transpose()) * rho;
        p_vals.push((p, f2));
    }
    let rhs = b_a * rho - b_h * a0 - b_0;
    let sigma = basis.solve(&rhs)?;

    // Fields on the tensor quadrature grid.
    let (u, w, s) = v.factors().expect("checked above");
    let (ue, we, se) = eta.factors().expect("separated");
    let scale_cols = |m: &DMatrix<T>, s: &DVector<T>| {
        let mut out = m.clone();
        for (j, mut c) in out.column_iter_mut().enumerate() {
            c *= s[j];
        }
        out
    };
    let us = scale_cols(u, s);
    let ues = scale_cols(ue, se);
    let dv1 = (&d1.fem_ders * &us) * (&d2.fem_vals * w).transpose();
    let dv2 = (&d1.fem_vals * &us) * (&d2.fem_ders * w).transpose();
    let de1 = (&d1.fem_ders * &ues) * (&d2.fem_vals * we).transpose();
    let de2 = (&d1.fem_vals * &ues) * (&d2.fem_ders * we).transpose();
    let (p1, p2) = (d1.quad.points().len(), d2.quad.points().len());
    let mut amat = DMatrix::zeros(p1, p2);
    for (c1, c2) in &a_weights {
        amat += c1 * c2.transpose();
    }
    let mut y0 = DMatrix::zeros(p1, p2);
    for (p, f2) in &p_vals {
        y0 -= (p * f2.transpose()) * rho;
    }
    // Residual fields z − Υ₀ with z = ρ a ∇v − a∘∇η.
    let r1 = amat.component_mul(&dv1) * rho - de1 * a0 - &y0;
    let r2 = amat.component_mul(&dv2) * rho - de2 * a0;
    let (w1, w2) = (d1.quad.weights(), d2.quad.weights());
    let base = tensor_square_integral(&r1, w1, w2) + tensor_square_integral(&r2, w1, w2);
    let sb = sigma.component_mul(&rhs).sum();
    let expanded = (base - sb) / a0;

    let ys1 = (&d1.w_vals * &sigma) * d2.w_ders.transpose();
    let ys2 = -((&d1.w_ders * &sigma) * d2.w_vals.transpose());
    let direct = (tensor_square_integral(&(ys1 - r1), w1, w2) + tensor_square_integral(&(ys2 - r2), w1, w2)) / a0;
    let tol = scaled_tol::<T>(1e-10) * (T::one() + base / a0);
    if expanded < -tol {
        return Err(Error::breakdown(format!(
            "flux majorant square is negative ({:.3e})",
            expanded.as_f64()
        )));
    }
    Ok(FluxMajorant2d {
        value: direct.max(T::zero()).sqrt(),
        value_expanded: expanded.max(T::zero()).sqrt(),
        sigma,
        rhs,
    })
}

/// Certificate for iterate `v = u_k` using the computed next iterate `ṽ = u_{k+1}`.
///
/// In 2D the majorant needs a constant `a∘` and consistent mass matrices (so the
/// discrete operators are the exact Galerkin forms the majorant bounds).
#[allow(clippy::too_many_arguments)]
pub fn certificate_for_step<T: Scalar>(
    k: usize,
    v: &LowRankVector<T>,
    v_next: &LowRankVector<T>,
    problem: &DiscreteProblem<T>,
    rho: T,
    q: T,
    grid_certified: bool,
    flux: Option<&FluxBasis2d<T>>,
) -> Result<ErrorCertificate<T>> {
    let eta = v.sub(v_next)?;
    let delta = energy_norm(&eta, &problem.precond)?;
    let majorant = match problem.grid.dim() {
        1 => {
            let (x, y) = (
                v.as_plain().expect("1D iterate"),
                v_next.as_plain().expect("1D iterate"),
            );
            majorant_1d(
                x.as_slice(),
                y.as_slice(),
                problem.a.function(),
                problem.a0.function(),
                &problem.f,
                rho,
                &problem.quads[0],
            )?
            .value
        }
        2 => {
            if problem.mass != MassTreatment::Consistent {
                return Err(Error::validation(
                    "two-dimensional certificates need consistent mass matrices",
                ));
            }
            let c0 = problem.constant_a0().ok_or_else(|| {
                Error::validation("two-dimensional certificates need a constant preconditioner coefficient")
            })?;
            let basis = flux.ok_or_else(|| Error::validation("two-dimensional certificates need a flux basis"))?;
            majorant_2d_flux(basis, v, v_next, problem.a.function(), c0, &problem.f, rho)?.value
        }
        d => {
            return Err(Error::UnsupportedDimension {
                dim: d,
                kron_rank: problem.stiffness.rank(),
            })
        }
    };
    let (lower, upper) = ostrowski_bounds(delta, majorant, q)?;
    Ok(ErrorCertificate {
        k,
        delta,
        majorant,
        q,
        lower,
        upper,
        grid_certified,
    })
}
