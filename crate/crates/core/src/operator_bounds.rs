//! Contraction factors, relaxation parameters and piecewise-constant preconditioner design.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coefficients::{
    coeff_bounds, extremes, make_periodic_two_level, ProbeGrid, SeparableCoefficient, SeparableFunction,
    UnivariateFactor,
};
use crate::error::{Error, Result};
use crate::precond::GeneralizedEigen;
use crate::quadrature::integrate_on;
use crate::scalar::Scalar;

/// Spectral data of the pair `(Λ, Λ∘)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport<T> {
    pub h_minus: T,
    pub h_plus: T,
    pub rho_star: T,
    pub q: T,
    pub lambda_minus: T,
    pub lambda_plus: T,
    pub lambda0_minus: T,
    pub lambda0_plus: T,
    pub rho_star_coarse: T,
    pub q_hat: T,
    /// Extreme generalized eigenvalues of `Λy = μΛ∘y` on the discrete grid, when computed.
    pub c1: Option<T>,
    pub c2: Option<T>,
    /// True when the inf/sup were taken over a probe grid rather than known exactly.
    pub grid_certified: bool,
}

/// Minimum and maximum of `a/a∘` over the probe grid.
pub fn ratio_bounds<T: Scalar>(
    a: &SeparableFunction<T>,
    a0: &SeparableFunction<T>,
    probe: &ProbeGrid<T>,
) -> Result<(T, T)> {
    if a.dim() != a0.dim() || a.dim() != probe.dim() {
        return Err(Error::validation(
            "coefficient, preconditioner and probe dimensions differ",
        ));
    }
    let va = a.sample(probe);
    let v0 = a0.sample(probe);
    if let Some(bad) = v0.iter().find(|v| !(**v > T::zero())) {
        return Err(Error::validation(format!(
            "preconditioner coefficient is not positive on the probe grid (value {:.3e})",
            bad.as_f64()
        )));
    }
    if let Some(bad) = va.iter().find(|v| !(**v > T::zero())) {
        return Err(Error::validation(format!(
            "coefficient is not positive on the probe grid (value {:.3e})",
            bad.as_f64()
        )));
    }
    let ratios: Vec<T> = va.iter().zip(v0.iter()).map(|(x, y)| *x / *y).collect();
    Ok(extremes(&ratios))
}

fn check_ratio_pair<T: Scalar>(h_minus: T, h_plus: T) -> Result<()> {
    if !(h_minus > T::zero() && h_plus >= h_minus) {
        return Err(Error::validation(format!(
            "ratio bounds must satisfy 0 < h_minus <= h_plus, got ({}, {})",
            h_minus.as_f64(),
            h_plus.as_f64()
        )));
    }
    Ok(())
}

/// `ρ* = 2/(h⊖ + h⊕)`.
pub fn optimal_rho<T: Scalar>(h_minus: T, h_plus: T) -> Result<T> {
    check_ratio_pair(h_minus, h_plus)?;
    Ok(T::lit(2.0) / (h_minus + h_plus))
}

/// `q = (h⊕ − h⊖)/(h⊕ + h⊖)`.
pub fn contraction_factor<T: Scalar>(h_minus: T, h_plus: T) -> Result<T> {
    check_ratio_pair(h_minus, h_plus)?;
    Ok((h_plus - h_minus) / (h_plus + h_minus))
}

/// `max(|1 − ρh⊖|, |1 − ρh⊕|)`, the contraction factor for an arbitrary `ρ`.
pub fn contraction_factor_at<T: Scalar>(rho: T, h_minus: T, h_plus: T) -> T {
    let a = (T::one() - rho * h_minus).abs();
    let b = (T::one() - rho * h_plus).abs();
    if a > b {
        a
    } else {
        b
    }
}

/// Coarse bounds from the separate spectral bounds of `Λ` and `Λ∘`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseBounds<T> {
    pub c1: T,
    pub c2: T,
    pub rho_star: T,
    pub q_hat: T,
}

/// `c₁ = λ⊖/λ∘⊕`, `c₂ = λ⊕/λ∘⊖`, `ρ* = c₁/c₂²`, `q̂² = 1 − c₁²/c₂²`.
pub fn coarse_contraction<T: Scalar>(
    lambda_minus: T,
    lambda_plus: T,
    lambda0_minus: T,
    lambda0_plus: T,
) -> Result<CoarseBounds<T>> {
    if !(lambda_minus > T::zero()
        && lambda0_minus > T::zero()
        && lambda_plus >= lambda_minus
        && lambda0_plus >= lambda0_minus)
    {
        return Err(Error::validation("spectral bounds must be positive and ordered"));
    }
    let c1 = lambda_minus / lambda0_plus;
    let c2 = lambda_plus / lambda0_minus;
    let r = c1 / c2;
    Ok(CoarseBounds {
        c1,
        c2,
        rho_star: c1 / (c2 * c2),
        q_hat: (T::one() - r * r).max(T::zero()).sqrt(),
    })
}

/// Extreme eigenvalues of `A y = μ Λ∘ y` for dense symmetric matrices.
pub fn spectral_equivalence<T: Scalar>(a: &DMatrix<T>, lambda0: &DMatrix<T>) -> Result<(T, T)> {
    let g = GeneralizedEigen::new(a, lambda0)?;
    Ok((g.min_value(), g.max_value()))
}

/// Full report for `a`, `a∘` on a probe grid; `equivalence` adds discrete `c₁`, `c₂`.
pub fn spectral_report<T: Scalar>(
    a: &SeparableFunction<T>,
    a0: &SeparableFunction<T>,
    probe: &ProbeGrid<T>,
    equivalence: Option<(T, T)>,
) -> Result<SpectralReport<T>> {
    let (h_minus, h_plus) = ratio_bounds(a, a0, probe)?;
    let (lambda_minus, lambda_plus) = coeff_bounds(a, probe);
    let (lambda0_minus, lambda0_plus) = coeff_bounds(a0, probe);
    let coarse = coarse_contraction(lambda_minus, lambda_plus, lambda0_minus, lambda0_plus)?;
    Ok(SpectralReport {
        h_minus,
        h_plus,
        rho_star: optimal_rho(h_minus, h_plus)?,
        q: contraction_factor(h_minus, h_plus)?,
        lambda_minus,
        lambda_plus,
        lambda0_minus,
        lambda0_plus,
        rho_star_coarse: coarse.rho_star,
        q_hat: coarse.q_hat,
        c1: equivalence.map(|e| e.0),
        c2: equivalence.map(|e| e.1),
        grid_certified: !(a.is_piecewise_constant() && a0.is_piecewise_constant()),
    })
}

/// A subdomain given as a union of axis-aligned boxes `[lo, hi)` per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subdomain<T> {
    pub boxes: Vec<Vec<(T, T)>>,
}

impl<T: Scalar> Subdomain<T> {
    pub fn interval(lo: T, hi: T) -> Self {
        Self {
            boxes: vec![vec![(lo, hi)]],
        }
    }

    fn contains(&self, point: &[T]) -> bool {
        self.boxes.iter().any(|b| {
            b.iter()
                .zip(point.iter())
                .all(|((lo, hi), x)| *x >= *lo && (*x < *hi || (*hi >= T::one() && *x <= *hi)))
        })
    }
}

/// Optimal piecewise-constant preconditioner coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseOptimum<T> {
    /// `(a⊖, a⊕)` per subdomain.
    pub bounds: Vec<(T, T)>,
    pub constants: Vec<T>,
    /// For two subdomains: the interval `[ξ₁, ξ₂]` of optimal ratios `c₂/c₁`.
    pub ratio_interval: Option<(T, T)>,
    pub chosen_ratio: Option<T>,
    pub h_minus: T,
    pub h_plus: T,
    pub q: T,
}

/// Per-subdomain bounds of `a` over the probe points inside each subdomain.
pub fn subdomain_bounds<T: Scalar>(
    a: &SeparableFunction<T>,
    partition: &[Subdomain<T>],
    probe: &ProbeGrid<T>,
) -> Result<Vec<(T, T)>> {
    let values = a.sample(probe);
    let sizes: Vec<usize> = (0..probe.dim()).map(|l| probe.points(l).len()).collect();
    let mut bounds: Vec<Option<(T, T)>> = vec![None; partition.len()];
    let mut idx = vec![0usize; probe.dim()];
    let mut point = vec![T::zero(); probe.dim()];
    for v in values.iter() {
        for l in 0..probe.dim() {
            point[l] = probe.points(l)[idx[l]];
        }
        for (i, sub) in partition.iter().enumerate() {
            if sub.contains(&point) {
                bounds[i] = Some(match bounds[i] {
                    None => (*v, *v),
                    Some((lo, hi)) => (if *v < lo { *v } else { lo }, if *v > hi { *v } else { hi }),
                });
            }
        }
        for l in (0..probe.dim()).rev() {
            idx[l] += 1;
            if idx[l] < sizes[l] {
                break;
            }
            idx[l] = 0;
        }
    }
    bounds
        .into_iter()
        .enumerate()
        .map(|(i, b)| b.ok_or_else(|| Error::validation(format!("subdomain {i} contains no probe points"))))
        .collect()
}

/// Piecewise constants `c_i` maximizing `h⊖/h⊕` for `a∘ = c_i` on `Ω_i`.
///
/// With `r_i = a⊖_i/a⊕_i`, any admissible choice has `h⊖/h⊕ ≤ min_i r_i`, and
/// `c_i = √(a⊖_i a⊕_i)` attains it, so this choice is optimal for every `N`.
pub fn optimal_piecewise_constants<T: Scalar>(
    a: &SeparableFunction<T>,
    partition: &[Subdomain<T>],
    probe: &ProbeGrid<T>,
) -> Result<PiecewiseOptimum<T>> {
    if partition.is_empty() {
        return Err(Error::validation("partition has no subdomains"));
    }
    let bounds = subdomain_bounds(a, partition, probe)?;
    optimum_from_bounds(&bounds)
}

/// Same as [`optimal_piecewise_constants`] starting from known subdomain bounds.
pub fn optimum_from_bounds<T: Scalar>(bounds: &[(T, T)]) -> Result<PiecewiseOptimum<T>> {
    if bounds.iter().any(|(lo, hi)| !(*lo > T::zero() && hi >= lo)) {
        return Err(Error::validation("subdomain bounds must be positive and ordered"));
    }
    let constants: Vec<T> = bounds.iter().map(|(lo, hi)| (*lo * *hi).sqrt()).collect();
    let (h_minus, h_plus) = piecewise_ratio_bounds(bounds, &constants);
    let (ratio_interval, chosen_ratio) = if bounds.len() == 2 {
        let (l1, u1) = bounds[0];
        let (l2, u2) = bounds[1];
        let (a, b) = (l2 / l1, u2 / u1);
        let xi = if a <= b { (a, b) } else { (b, a) };
        (Some(xi), Some((xi.0 * xi.1).sqrt()))
    } else {
        (None, None)
    };
    Ok(PiecewiseOptimum {
        bounds: bounds.to_vec(),
        constants,
        ratio_interval,
        chosen_ratio,
        h_minus,
        h_plus,
        q: contraction_factor(h_minus, h_plus)?,
    })
}

/// `(min_i a⊖_i/c_i, max_i a⊕_i/c_i)`.
pub fn piecewise_ratio_bounds<T: Scalar>(bounds: &[(T, T)], constants: &[T]) -> (T, T) {
    let lows: Vec<T> = bounds.iter().zip(constants).map(|((lo, _), c)| *lo / *c).collect();
    let highs: Vec<T> = bounds.iter().zip(constants).map(|((_, hi), c)| *hi / *c).collect();
    (extremes(&lows).0, extremes(&highs).1)
}

/// Harmonic mean of `a` over `[lo, hi]`.
pub fn homogenized_coefficient<T: Scalar>(a: &UnivariateFactor<T>, interval: (T, T)) -> Result<T> {
    let (lo, hi) = interval;
    if !(hi > lo) {
        return Err(Error::validation("homogenization interval must have positive length"));
    }
    let inv = integrate_on(lo, hi, &a.features(), 32.0, |x| T::one() / a.value(x));
    Ok((hi - lo) / inv)
}

/// One-dimensional two-subdomain periodic setup: `Ω₁ = (0, β)`, `Ω₂ = (β, 1)`, each holding
/// `cells` periodic cells in which `a` takes its upper level on the fraction `κ_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSubdomainSetup<T> {
    pub beta: T,
    pub cells: usize,
    pub levels1: (T, T),
    pub kappa1: T,
    pub levels2: (T, T),
    pub kappa2: T,
}

impl<T: Scalar> TwoSubdomainSetup<T> {
    /// The oscillating coefficient of the setup.
    pub fn coefficient(&self) -> Result<UnivariateFactor<T>> {
        let left = make_periodic_two_level(
            self.cells,
            self.levels1.0,
            self.levels1.1,
            self.kappa1,
            T::zero(),
            self.beta,
            T::one(),
        )?;
        let right = make_periodic_two_level(
            self.cells,
            self.levels2.0,
            self.levels2.1,
            self.kappa2,
            self.beta,
            T::one(),
            T::one(),
        )?;
        let (
            UnivariateFactor::Piecewise {
                breakpoints: b1,
                values: v1,
            },
            UnivariateFactor::Piecewise {
                breakpoints: b2,
                values: v2,
            },
        ) = (left, right)
        else {
            unreachable!("two-level factors are piecewise constant")
        };
        let split = b1.partition_point(|b| *b < self.beta);
        let mut breakpoints: Vec<T> = b1[..split].to_vec();
        breakpoints.push(self.beta);
        let first_right = b2.partition_point(|b| *b <= self.beta);
        breakpoints.extend_from_slice(&b2[first_right..]);
        let mut values: Vec<T> = v1[..=split].to_vec();
        values.extend_from_slice(&v2[first_right..]);
        crate::coefficients::make_piecewise(breakpoints, values)
    }
}

/// Comparison of the homogenized piecewise preconditioner with the optimal one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationComparison<T> {
    pub a_hat: (T, T),
    /// Interval that always contains `â₂/â₁`.
    pub zeta: (T, T),
    /// Interval of optimal ratios.
    pub xi: (T, T),
    pub homogenized_ratio: T,
    pub optimal_ratio: T,
    pub q_homogenized: T,
    pub q_optimal: T,
    pub containment_holds: bool,
    pub ratio_inside: bool,
}

pub fn compare_homogenized_vs_optimal<T: Scalar>(setup: &TwoSubdomainSetup<T>) -> Result<HomogenizationComparison<T>> {
    let a = setup.coefficient()?;
    let beta = setup.beta;
    let a_hat = (
        homogenized_coefficient(&a, (T::zero(), beta))?,
        homogenized_coefficient(&a, (beta, T::one()))?,
    );
    let (l1, u1) = (setup.levels1.0, setup.levels1.1);
    let (l2, u2) = (setup.levels2.0, setup.levels2.1);
    let zeta = (l2 / u1, u2 / l1);
    let opt = optimum_from_bounds(&[(l1, u1), (l2, u2)])?;
    let xi = opt.ratio_interval.expect("two subdomains");
    let optimal_ratio = opt.chosen_ratio.expect("two subdomains");
    let homogenized_ratio = a_hat.1 / a_hat.0;

    let coeff = SeparableCoefficient::product(vec![a])?;
    let probe = ProbeGrid::for_function(coeff.function(), 1 << 14);
    let q_for = |ratio: T| -> Result<T> {
        let a0 = SeparableCoefficient::product(vec![crate::coefficients::make_piecewise(
            vec![beta],
            vec![T::one(), ratio],
        )?])?;
        let (hm, hp) = ratio_bounds(coeff.function(), a0.function(), &probe)?;
        contraction_factor(hm, hp)
    };
    Ok(HomogenizationComparison {
        a_hat,
        zeta,
        xi,
        homogenized_ratio,
        optimal_ratio,
        q_homogenized: q_for(homogenized_ratio)?,
        q_optimal: q_for(optimal_ratio)?,
        containment_holds: zeta.0 <= xi.0 && zeta.1 >= xi.1,
        ratio_inside: homogenized_ratio >= xi.0 && homogenized_ratio <= xi.1,
    })
}
