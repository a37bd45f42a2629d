//! Composite Gauss–Legendre quadrature on `[0, 1]` aligned with a uniform FEM grid.
//!
//! Every element of the grid is split at the breakpoints of the functions that
//! will be integrated over it and further subdivided so that no cell is longer
//! than a fraction of the shortest oscillation length. Each cell carries a
//! five-point Gauss rule, exact for polynomials of degree nine.

use crate::scalar::Scalar;

/// Number of Gauss points per quadrature cell.
pub const GAUSS_POINTS: usize = 5;

/// Cells per oscillation length used when refining elements.
const CELLS_PER_FEATURE: f64 = 16.0;

/// Five-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre_5<T: Scalar>() -> ([T; 5], [T; 5]) {
    let s = (T::lit(10.0) / T::lit(7.0)).sqrt();
    let two = T::lit(2.0);
    let third = T::lit(1.0 / 3.0);
    let inner = third * (T::lit(5.0) - two * s).sqrt();
    let outer = third * (T::lit(5.0) + two * s).sqrt();
    let r70 = T::lit(70.0).sqrt();
    let w_inner = (T::lit(322.0) + T::lit(13.0) * r70) / T::lit(900.0);
    let w_outer = (T::lit(322.0) - T::lit(13.0) * r70) / T::lit(900.0);
    let w_mid = T::lit(128.0) / T::lit(225.0);
    (
        [-outer, -inner, T::zero(), inner, outer],
        [w_outer, w_inner, w_mid, w_inner, w_outer],
    )
}

/// Integrates `f` over `[a, b]` with one five-point Gauss rule.
pub fn gauss_interval<T: Scalar>(a: T, b: T, mut f: impl FnMut(T) -> T) -> T {
    let (xs, ws) = gauss_legendre_5::<T>();
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    let mut acc = T::zero();
    for (x, w) in xs.iter().zip(ws.iter()) {
        acc += *w * f(mid + half * *x);
    }
    acc * half
}

/// Breakpoints and oscillation length of a univariate function.
#[derive(Clone, Debug, PartialEq)]
pub struct Features<T> {
    /// Points in `(0, 1)` where the function or one of its low derivatives jumps.
    pub breakpoints: Vec<T>,
    /// Shortest length scale on which the function varies, if any.
    pub length: Option<T>,
}

impl<T> Default for Features<T> {
    fn default() -> Self {
        Self {
            breakpoints: Vec::new(),
            length: None,
        }
    }
}

impl<T: Scalar> Features<T> {
    pub fn merge(mut self, other: Features<T>) -> Self {
        self.breakpoints.extend(other.breakpoints);
        self.length = match (self.length, other.length) {
            (Some(a), Some(b)) => Some(if a < b { a } else { b }),
            (a, None) => a,
            (None, b) => b,
        };
        self
    }

    pub(crate) fn normalized(mut self) -> Self {
        self.breakpoints.retain(|b| *b > T::zero() && *b < T::one());
        self.breakpoints
            .sort_by(|a, b| a.partial_cmp(b).expect("breakpoints must be finite"));
        self.breakpoints.dedup();
        self
    }
}

/// Composite quadrature attached to the elements of a uniform grid with `n` interior nodes.
#[derive(Clone, Debug)]
pub struct ElementQuadrature<T> {
    n: usize,
    h: T,
    /// Quadrature cells `(start, end)`, sorted, covering `[0, 1]`.
    cells: Vec<(T, T)>,
    /// `element_cells[e]..element_cells[e + 1]` indexes the cells of element `e`.
    element_cells: Vec<usize>,
    points: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> ElementQuadrature<T> {
    /// Builds the rule for `n` interior nodes (`n + 1` elements of size `1/(n+1)`).
    pub fn new(n: usize, features: &Features<T>) -> Self {
        let features = features.clone().normalized();
        let elements = n + 1;
        let h = T::one() / T::from_usize_lossy(elements);
        let max_len = features.length.map(|l| l / T::lit(CELLS_PER_FEATURE));
        let mut cells = Vec::new();
        let mut element_cells = Vec::with_capacity(elements + 1);
        let mut bp = 0usize;
        for e in 0..elements {
            element_cells.push(cells.len());
            let lo = T::from_usize_lossy(e) * h;
            let hi = if e + 1 == elements {
                T::one()
            } else {
                T::from_usize_lossy(e + 1) * h
            };
            let mut cuts = vec![lo];
            while bp < features.breakpoints.len() && features.breakpoints[bp] <= lo {
                bp += 1;
            }
            let mut k = bp;
            while k < features.breakpoints.len() && features.breakpoints[k] < hi {
                let b = features.breakpoints[k];
                let tiny = h * T::lit(1e-12);
                if b - *cuts.last().unwrap() > tiny && hi - b > tiny {
                    cuts.push(b);
                }
                k += 1;
            }
            cuts.push(hi);
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let pieces = match max_len {
                    Some(m) if m > T::zero() => {
                        let ratio = ((b - a) / m).as_f64().ceil();
                        ratio.max(1.0) as usize
                    }
                    _ => 1,
                };
                let step = (b - a) / T::from_usize_lossy(pieces);
                for p in 0..pieces {
                    let s = a + step * T::from_usize_lossy(p);
                    let t = if p + 1 == pieces { b } else { s + step };
                    cells.push((s, t));
                }
            }
        }
        element_cells.push(cells.len());

        let (xs, ws) = gauss_legendre_5::<T>();
        let mut points = Vec::with_capacity(cells.len() * GAUSS_POINTS);
        let mut weights = Vec::with_capacity(cells.len() * GAUSS_POINTS);
        for &(a, b) in &cells {
            let half = (b - a) * T::lit(0.5);
            let mid = (a + b) * T::lit(0.5);
            for (x, w) in xs.iter().zip(ws.iter()) {
                points.push(mid + half * *x);
                weights.push(half * *w);
            }
        }
        Self {
            n,
            h,
            cells,
            element_cells,
            points,
            weights,
        }
    }

    /// Number of interior grid nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh size.
    pub fn h(&self) -> T {
        self.h
    }

    pub fn elements(&self) -> usize {
        self.n + 1
    }

    /// All quadrature points in increasing order.
    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Range of point indices belonging to element `e`.
    pub fn element_points(&self, e: usize) -> std::ops::Range<usize> {
        self.element_cells[e] * GAUSS_POINTS..self.element_cells[e + 1] * GAUSS_POINTS
    }

    /// Left end of element `e`.
    pub fn element_start(&self, e: usize) -> T {
        T::from_usize_lossy(e) * self.h
    }

    /// Evaluates `f` at every quadrature point.
    pub fn sample(&self, f: impl Fn(T) -> T) -> Vec<T> {
        self.points.iter().map(|&x| f(x)).collect()
    }

    /// Integral of pointwise values over `[0, 1]`.
    pub fn integrate(&self, values: &[T]) -> T {
        debug_assert_eq!(values.len(), self.points.len());
        let mut acc = T::zero();
        for (v, w) in values.iter().zip(self.weights.iter()) {
            acc += *v * *w;
        }
        acc
    }

    /// Values of `G(x) = ∫₀ˣ f` at every quadrature point.
    ///
    /// Whole cells are summed with their own rule; the partial cell up to the
    /// point uses a fresh five-point rule on `[cell start, x]`.
    pub fn antiderivative(&self, f: impl Fn(T) -> T) -> Vec<T> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut before = T::zero();
        for (c, &(a, b)) in self.cells.iter().enumerate() {
            for p in 0..GAUSS_POINTS {
                let x = self.points[c * GAUSS_POINTS + p];
                out.push(before + gauss_interval(a, x, &f));
            }
            before += gauss_interval(a, b, &f);
        }
        out
    }

    /// Value of the P1 hat basis function of interior node `i` (0-based) at `x`.
    pub fn hat(&self, i: usize, x: T) -> T {
        let center = T::from_usize_lossy(i + 1) * self.h;
        let t = (x - center).abs() / self.h;
        if t >= T::one() {
            T::zero()
        } else {
            T::one() - t
        }
    }

    /// Local shape values at `x` inside element `e`: weights of the left and right nodes.
    pub fn local_shapes(&self, e: usize, x: T) -> (T, T) {
        let t = (x - self.element_start(e)) / self.h;
        (T::one() - t, t)
    }
}

/// Composite five-point Gauss integral of `f` over `[lo, hi]`, split at the feature
/// breakpoints and refined to `per_length` cells per feature length.
pub fn integrate_on<T: Scalar>(lo: T, hi: T, features: &Features<T>, per_length: f64, f: impl Fn(T) -> T) -> T {
    let features = features.clone().normalized();
    let mut cuts = vec![lo];
    cuts.extend(features.breakpoints.iter().copied().filter(|b| *b > lo && *b < hi));
    cuts.push(hi);
    let mut acc = T::zero();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pieces = match features.length {
            Some(len) if len > T::zero() => ((b - a) / len * T::lit(per_length)).as_f64().ceil().max(1.0) as usize,
            _ => 1,
        };
        let step = (b - a) / T::from_usize_lossy(pieces);
        for p in 0..pieces {
            let s = a + step * T::from_usize_lossy(p);
            let t = if p + 1 == pieces { b } else { s + step };
            acc += gauss_interval(s, t, &f);
        }
    }
    acc
}
