//! Separable quasi-periodic coefficients, right-hand sides and tensor grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Features;
use crate::scalar::Scalar;

/// A function of one variable on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnivariateFactor<T> {
    Constant {
        value: T,
    },
    /// `c[0] + c[1] x + c[2] x² + ...`
    Polynomial {
        coefficients: Vec<T>,
    },
    /// `offset + amplitude · sin(omega · x + phase)`
    Sinusoid {
        offset: T,
        amplitude: T,
        omega: T,
        phase: T,
    },
    /// One bump `height · (1 − t²)³` centred in each of `cells` equal cells,
    /// supported on the central `support` fraction of the cell.
    Bumps {
        cells: usize,
        height: T,
        support: T,
    },
    /// `values[j]` on `[breakpoints[j−1], breakpoints[j])`.
    Piecewise {
        breakpoints: Vec<T>,
        values: Vec<T>,
    },
    /// Piecewise-linear interpolation of samples at sorted `nodes` spanning `[0, 1]`.
    Sampled {
        nodes: Vec<T>,
        values: Vec<T>,
    },
    Product {
        factors: Vec<UnivariateFactor<T>>,
    },
}

impl<T: Scalar> UnivariateFactor<T> {
    pub fn constant(value: T) -> Self {
        UnivariateFactor::Constant { value }
    }

    /// Evaluates the factor; `x` is assumed to lie in `[0, 1]`.
    pub fn value(&self, x: T) -> T {
        match self {
            UnivariateFactor::Constant { value } => *value,
            UnivariateFactor::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(T::zero(), |acc, c| acc * x + *c)
            }
            UnivariateFactor::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => *offset + *amplitude * (*omega * x + *phase).sin(),
            UnivariateFactor::Bumps { cells, height, support } => {
                let l = T::from_usize_lossy(*cells);
                let scaled = x * l;
                let mut j = scaled.floor();
                if j >= l {
                    j = l - T::one();
                }
                let centre = j + T::lit(0.5);
                let t = (scaled - centre) / (*support * T::lit(0.5));
                if t.abs() >= T::one() {
                    T::zero()
                } else {
                    let s = T::one() - t * t;
                    *height * s * s * s
                }
            }
            UnivariateFactor::Piecewise { breakpoints, values } => {
                let idx = breakpoints.partition_point(|b| *b <= x);
                values[idx]
            }
            UnivariateFactor::Sampled { nodes, values } => {
                let idx = nodes.partition_point(|b| *b <= x);
                if idx == 0 {
                    values[0]
                } else if idx >= nodes.len() {
                    values[nodes.len() - 1]
                } else {
                    let (x0, x1) = (nodes[idx - 1], nodes[idx]);
                    let t = (x - x0) / (x1 - x0);
                    values[idx - 1] * (T::one() - t) + values[idx] * t
                }
            }
            UnivariateFactor::Product { factors } => factors.iter().fold(T::one(), |acc, f| acc * f.value(x)),
        }
    }

    /// Breakpoints and the shortest variation length, used for quadrature and probing.
    pub fn features(&self) -> Features<T> {
        match self {
            UnivariateFactor::Constant { .. } | UnivariateFactor::Polynomial { .. } => Features::default(),
            UnivariateFactor::Sinusoid { omega, .. } => Features {
                breakpoints: vec![],
                length: if *omega == T::zero() {
                    None
                } else {
                    Some(T::two_pi() / omega.abs())
                },
            },
            UnivariateFactor::Bumps { cells, support, .. } => {
                let l = T::from_usize_lossy(*cells);
                let half = *support * T::lit(0.5);
                let mut breakpoints = Vec::with_capacity(2 * cells + 1);
                for j in 0..*cells {
                    let c = T::from_usize_lossy(j) + T::lit(0.5);
                    breakpoints.push((c - half) / l);
                    breakpoints.push(c / l);
                    breakpoints.push((c + half) / l);
                }
                Features {
                    breakpoints,
                    length: Some(*support / l),
                }
            }
            UnivariateFactor::Piecewise { breakpoints, .. } => Features {
                breakpoints: breakpoints.clone(),
                length: min_gap(breakpoints),
            },
            UnivariateFactor::Sampled { nodes, .. } => Features {
                breakpoints: nodes.clone(),
                length: min_gap(nodes),
            },
            UnivariateFactor::Product { factors } => factors
                .iter()
                .fold(Features::default(), |acc, f| acc.merge(f.features())),
        }
    }

    /// True when the factor takes finitely many values that a uniform probe grid hits exactly.
    pub(crate) fn is_piecewise_constant(&self) -> bool {
        match self {
            UnivariateFactor::Constant { .. } | UnivariateFactor::Piecewise { .. } => true,
            UnivariateFactor::Product { factors } => factors.iter().all(|f| f.is_piecewise_constant()),
            _ => false,
        }
    }
}

fn min_gap<T: Scalar>(points: &[T]) -> Option<T> {
    let mut all = Vec::with_capacity(points.len() + 2);
    all.push(T::zero());
    all.extend_from_slice(points);
    all.push(T::one());
    all.windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > T::zero())
        .fold(None, |acc: Option<T>, g| match acc {
            Some(a) if a <= g => Some(a),
            _ => Some(g),
        })
}

/// Piecewise-constant factor with strictly increasing breakpoints in `(0, 1)` and positive values.
pub fn make_piecewise<T: Scalar>(breakpoints: Vec<T>, values: Vec<T>) -> Result<UnivariateFactor<T>> {
    if values.len() != breakpoints.len() + 1 {
        return Err(Error::validation(format!(
            "piecewise factor needs {} values for {} breakpoints, got {}",
            breakpoints.len() + 1,
            breakpoints.len(),
            values.len()
        )));
    }
    if breakpoints.iter().any(|b| *b <= T::zero() || *b >= T::one()) {
        return Err(Error::validation("breakpoints must lie strictly inside (0, 1)"));
    }
    if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("breakpoints must be strictly increasing"));
    }
    if values.iter().any(|v| *v <= T::zero()) {
        return Err(Error::validation("piecewise values must be positive"));
    }
    Ok(UnivariateFactor::Piecewise { breakpoints, values })
}

/// Periodic two-level factor on `[start, end]`: `cells` equal cells, each holding `low`
/// on its first part and `high` on the trailing `upper_fraction` of the cell.
/// Outside `[start, end]` the factor equals `outside`.
pub fn make_periodic_two_level<T: Scalar>(
    cells: usize,
    low: T,
    high: T,
    upper_fraction: T,
    start: T,
    end: T,
    outside: T,
) -> Result<UnivariateFactor<T>> {
    if cells == 0 || !(upper_fraction > T::zero() && upper_fraction < T::one()) {
        return Err(Error::validation(
            "periodic two-level factor needs cells >= 1 and upper_fraction in (0, 1)",
        ));
    }
    if !(start >= T::zero() && end <= T::one() && start < end) {
        return Err(Error::validation(
            "periodic two-level interval must satisfy 0 <= start < end <= 1",
        ));
    }
    let width = (end - start) / T::from_usize_lossy(cells);
    let mut breakpoints = Vec::new();
    let mut values = Vec::new();
    if start > T::zero() {
        values.push(outside);
        breakpoints.push(start);
    }
    for j in 0..cells {
        let c0 = start + width * T::from_usize_lossy(j);
        values.push(low);
        breakpoints.push(c0 + width * (T::one() - upper_fraction));
        values.push(high);
        if j + 1 < cells {
            breakpoints.push(c0 + width);
        }
    }
    if end < T::one() {
        breakpoints.push(end);
        values.push(outside);
    }
    make_piecewise(breakpoints, values)
}

/// Rank-`R` sum of products of univariate factors on `[0, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableFunction<T> {
    dim: usize,
    terms: Vec<Vec<UnivariateFactor<T>>>,
}

impl<T: Scalar> SeparableFunction<T> {
    pub fn new(dim: usize, terms: Vec<Vec<UnivariateFactor<T>>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("dimension must be at least 1"));
        }
        if terms.is_empty() {
            return Err(Error::validation("a separable function needs at least one term"));
        }
        if let Some(t) = terms.iter().find(|t| t.len() != dim) {
            return Err(Error::validation(format!(
                "term has {} factors but the dimension is {dim}",
                t.len()
            )));
        }
        Ok(Self { dim, terms })
    }

    pub fn constant(dim: usize, value: T) -> Self {
        let mut term = vec![UnivariateFactor::constant(T::one()); dim];
        term[0] = UnivariateFactor::constant(value);
        Self { dim, terms: vec![term] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Vec<UnivariateFactor<T>>] {
        &self.terms
    }

    /// Factor of term `s` in dimension `l`.
    pub fn factor(&self, s: usize, l: usize) -> &UnivariateFactor<T> {
        &self.terms[s][l]
    }

    /// `Σ_s Π_ℓ a^(s)_ℓ(x_ℓ)`.
    pub fn eval(&self, point: &[T]) -> Result<T> {
        if point.len() != self.dim {
            return Err(Error::validation(format!(
                "point has {} coordinates, expected {}",
                point.len(),
                self.dim
            )));
        }
        if point.iter().any(|x| !(*x >= T::zero() && *x <= T::one())) {
            return Err(Error::Domain {
                point: point.iter().map(|x| x.as_f64()).collect(),
            });
        }
        Ok(self.eval_unchecked(point))
    }

    pub(crate) fn eval_unchecked(&self, point: &[T]) -> T {
        self.terms
            .iter()
            .map(|term| {
                term.iter()
                    .zip(point.iter())
                    .fold(T::one(), |acc, (f, x)| acc * f.value(*x))
            })
            .fold(T::zero(), |acc, v| acc + v)
    }

    /// Features of all factors acting on dimension `l`.
    pub fn features(&self, l: usize) -> Features<T> {
        self.terms
            .iter()
            .fold(Features::default(), |acc, t| acc.merge(t[l].features()))
    }

    pub(crate) fn is_piecewise_constant(&self) -> bool {
        self.terms.iter().all(|t| t.iter().all(|f| f.is_piecewise_constant()))
    }

    /// Values on the full tensor product of `probe`, row-major over dimensions.
    pub fn sample(&self, probe: &ProbeGrid<T>) -> Vec<T> {
        assert_eq!(probe.dim(), self.dim);
        let total: usize = probe.points.iter().map(|p| p.len()).product();
        let mut out = vec![T::zero(); total];
        for term in &self.terms {
            let per_dim: Vec<Vec<T>> = term
                .iter()
                .zip(probe.points.iter())
                .map(|(f, pts)| pts.iter().map(|x| f.value(*x)).collect())
                .collect();
            accumulate_outer(&mut out, &per_dim);
        }
        out
    }
}

fn accumulate_outer<T: Scalar>(out: &mut [T], per_dim: &[Vec<T>]) {
    match per_dim.len() {
        1 => {
            for (o, v) in out.iter_mut().zip(per_dim[0].iter()) {
                *o += *v;
            }
        }
        _ => {
            let inner: usize = per_dim[1..].iter().map(|v| v.len()).product();
            let mut rest = vec![T::zero(); inner];
            accumulate_outer(&mut rest, &per_dim[1..]);
            for (i, v) in per_dim[0].iter().enumerate() {
                let block = &mut out[i * inner..(i + 1) * inner];
                for (o, r) in block.iter_mut().zip(rest.iter()) {
                    *o += *v * *r;
                }
            }
        }
    }
}

/// Separable function verified positive on a probe grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeparableCoefficient<T> {
    inner: SeparableFunction<T>,
}

impl<T: Scalar> SeparableCoefficient<T> {
    /// Wraps `f` after checking positivity on the default probe grid.
    pub fn new(f: SeparableFunction<T>) -> Result<Self> {
        let probe = ProbeGrid::for_function(&f, default_probe_points(f.dim()));
        let min = f
            .sample(&probe)
            .into_iter()
            .fold(T::max_value().unwrap_or_else(T::one), |a, b| if b < a { b } else { a });
        if !(min > T::zero()) {
            return Err(Error::validation(format!(
                "coefficient is not positive on the probe grid (minimum {:.6e})",
                min.as_f64()
            )));
        }
        Ok(Self { inner: f })
    }

    pub fn constant(dim: usize, value: T) -> Result<Self> {
        Self::new(SeparableFunction::constant(dim, value))
    }

    /// Rank-one product coefficient `Π_ℓ a_ℓ(x_ℓ)`.
    pub fn product(factors: Vec<UnivariateFactor<T>>) -> Result<Self> {
        Self::new(SeparableFunction::new(factors.len(), vec![factors])?)
    }

    pub fn function(&self) -> &SeparableFunction<T> {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn rank(&self) -> usize {
        self.inner.rank()
    }

    pub fn eval(&self, point: &[T]) -> Result<T> {
        self.inner.eval(point)
    }
}

impl<T> std::ops::Deref for SeparableCoefficient<T> {
    type Target = SeparableFunction<T>;
    fn deref(&self) -> &SeparableFunction<T> {
        &self.inner
    }
}

/// Separable right-hand side of rank `R_f`; no sign constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeparableRhs<T> {
    inner: SeparableFunction<T>,
}

impl<T: Scalar> SeparableRhs<T> {
    pub fn new(f: SeparableFunction<T>) -> Self {
        Self { inner: f }
    }

    pub fn product(factors: Vec<UnivariateFactor<T>>) -> Result<Self> {
        Ok(Self::new(SeparableFunction::new(factors.len(), vec![factors])?))
    }
}

impl<T> std::ops::Deref for SeparableRhs<T> {
    type Target = SeparableFunction<T>;
    fn deref(&self) -> &SeparableFunction<T> {
        &self.inner
    }
}

/// Tensor grid with `n_ℓ` interior nodes per dimension and `h_ℓ = 1/(n_ℓ+1)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformGrid {
    sizes: Vec<usize>,
}

impl UniformGrid {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::validation("grid needs at least one dimension"));
        }
        if let Some(n) = sizes.iter().find(|n| **n < 2) {
            return Err(Error::validation(format!(
                "each dimension needs at least 2 interior nodes, got {n}"
            )));
        }
        Ok(Self { sizes })
    }

    pub fn square(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, l: usize) -> usize {
        self.sizes[l]
    }

    /// Total number of degrees of freedom `Π n_ℓ`.
    pub fn dofs(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn h<T: Scalar>(&self, l: usize) -> T {
        T::one() / T::from_usize_lossy(self.sizes[l] + 1)
    }

    /// Interior nodes `ν_j = j h` for `j = 1..=n_ℓ`.
    pub fn nodes<T: Scalar>(&self, l: usize) -> Vec<T> {
        let h = self.h::<T>(l);
        (1..=self.sizes[l]).map(|j| T::from_usize_lossy(j) * h).collect()
    }
}

/// Uniform probe points (boundary included) used to approximate inf/sup over `Ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeGrid<T> {
    points: Vec<Vec<T>>,
}

impl<T: Scalar> ProbeGrid<T> {
    /// `intervals` equal intervals per dimension, i.e. `intervals + 1` points.
    pub fn uniform(dim: usize, intervals: usize) -> Self {
        let m = intervals.max(1);
        let pts: Vec<T> = (0..=m)
            .map(|j| T::from_usize_lossy(j) / T::from_usize_lossy(m))
            .collect();
        Self { points: vec![pts; dim] }
    }

    /// At least `min_intervals` per dimension and at least 16 points per shortest
    /// feature length of `f`, rounded up to a power of two.
    pub fn for_function(f: &SeparableFunction<T>, min_intervals: usize) -> Self {
        Self::for_functions(&[f], min_intervals)
    }

    pub fn for_functions(fs: &[&SeparableFunction<T>], min_intervals: usize) -> Self {
        let dim = fs.first().map(|f| f.dim()).unwrap_or(1);
        let points = (0..dim)
            .map(|l| {
                let mut need = min_intervals.max(1);
                for f in fs {
                    if let Some(len) = f.features(l).length {
                        let per = (16.0 / len.as_f64()).ceil();
                        if per.is_finite() && per < 1e8 {
                            need = need.max(per as usize);
                        }
                    }
                }
                let m = need.next_power_of_two();
                (0..=m)
                    .map(|j| T::from_usize_lossy(j) / T::from_usize_lossy(m))
                    .collect()
            })
            .collect();
        Self { points }
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self, l: usize) -> &[T] {
        &self.points[l]
    }

    pub fn len(&self) -> usize {
        self.points.iter().map(|p| p.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Default probe resolution per dimension.
pub fn default_probe_points(dim: usize) -> usize {
    if dim <= 1 {
        1 << 14
    } else {
        1 << 11
    }
}

/// Two-dimensional periodic-bump coefficient `a(x) = C + a₁(x₁) a₁(x₂)`.
///
/// `a₁` has `cells` bumps of height `√height`, so the product peaks at `height` at
/// every bump centre and `a` peaks at `C + height`. `ε = 1/cells`.
pub fn make_periodic_bumps<T: Scalar>(
    cells: usize,
    height: T,
    support_fraction: T,
    base: T,
) -> Result<SeparableCoefficient<T>> {
    if cells == 0 {
        return Err(Error::validation("bump cell count must be at least 1"));
    }
    if !(base > T::zero()) {
        return Err(Error::validation(
            "base constant C must be positive, otherwise the coefficient vanishes off the bumps",
        ));
    }
    if !(height > T::zero()) {
        return Err(Error::validation("bump height must be positive"));
    }
    if !(support_fraction > T::zero() && support_fraction < T::one()) {
        return Err(Error::validation("support fraction must lie in (0, 1)"));
    }
    let bump = UnivariateFactor::Bumps {
        cells,
        height: height.sqrt(),
        support: support_fraction,
    };
    let f = SeparableFunction::new(
        2,
        vec![
            vec![UnivariateFactor::constant(base), UnivariateFactor::constant(T::one())],
            vec![bump.clone(), bump],
        ],
    )?;
    SeparableCoefficient::new(f)
}

/// One-dimensional modulated coefficient `a(x) = g(x)(1 + ε sin(2π k x))`.
pub fn make_modulated<T: Scalar>(
    mean: UnivariateFactor<T>,
    epsilon: T,
    frequency: u32,
) -> Result<SeparableCoefficient<T>> {
    if !(epsilon >= T::zero() && epsilon < T::one()) {
        return Err(Error::validation(format!(
            "modulation amplitude must lie in [0, 1), got {}",
            epsilon.as_f64()
        )));
    }
    let wave = UnivariateFactor::Sinusoid {
        offset: T::one(),
        amplitude: epsilon,
        omega: T::two_pi() * T::lit(frequency as f64),
        phase: T::zero(),
    };
    SeparableCoefficient::product(vec![UnivariateFactor::Product {
        factors: vec![mean, wave],
    }])
}

/// Minimum and maximum of `coeff` over the probe grid (a grid approximation of inf/sup over `Ω`).
pub fn coeff_bounds<T: Scalar>(coeff: &SeparableFunction<T>, probe: &ProbeGrid<T>) -> (T, T) {
    extremes(&coeff.sample(probe))
}

pub(crate) fn extremes<T: Scalar>(values: &[T]) -> (T, T) {
    let mut lo = values[0];
    let mut hi = values[0];
    for v in values {
        if *v < lo {
            lo = *v;
        }
        if *v > hi {
            hi = *v;
        }
    }
    (lo, hi)
}
