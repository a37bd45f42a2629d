//! Low-rank vectors `Σ_j s_j u_j ⊗ w_j` and their algebra.
//!
//! In two dimensions a vector of length `n₁n₂` is stored through its row-major
//! matricization `X = U diag(s) Wᵀ` (`n₁ × n₂`). One-dimensional vectors are plain.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron_fem::KroneckerMatrix;
use crate::scalar::{scaled_tol, Scalar};

#[derive(Clone, Debug, PartialEq)]
enum Repr<T: Scalar> {
    Plain(DVector<T>),
    Separated {
        u: DMatrix<T>,
        w: DMatrix<T>,
        s: DVector<T>,
    },
}

/// Grid function in low-rank separated form.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankVector<T: Scalar> {
    repr: Repr<T>,
}

/// Rank truncation rule: relative Frobenius tolerance, rank cap, or both.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy<T> {
    pub rel_tol: Option<T>,
    pub max_rank: Option<usize>,
}

impl<T: Scalar> TruncationPolicy<T> {
    pub fn tolerance(rel_tol: T) -> Self {
        Self {
            rel_tol: Some(rel_tol),
            max_rank: None,
        }
    }

    pub fn rank(max_rank: usize) -> Self {
        Self {
            rel_tol: None,
            max_rank: Some(max_rank),
        }
    }

    pub fn both(rel_tol: T, max_rank: usize) -> Self {
        Self {
            rel_tol: Some(rel_tol),
            max_rank: Some(max_rank),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tol_ok = self.rel_tol.map(|t| t > T::zero()).unwrap_or(false);
        if !tol_ok && self.max_rank.is_none() {
            return Err(Error::validation(
                "truncation needs a positive relative tolerance or a maximal rank",
            ));
        }
        Ok(())
    }

    /// Number of singular values kept from the descending list `sigma`.
    pub fn select(&self, sigma: &[T]) -> usize {
        let mut k = sigma.len();
        if let Some(tol) = self.rel_tol.filter(|t| *t > T::zero()) {
            let total: T = sigma.iter().fold(T::zero(), |a, s| a + *s * *s);
            let budget = tol * tol * total;
            let mut tail = T::zero();
            k = sigma.len();
            // Drop from the end while the discarded energy stays within budget.
            while k > 0 {
                let next = tail + sigma[k - 1] * sigma[k - 1];
                if next <= budget {
                    tail = next;
                    k -= 1;
                } else {
                    break;
                }
            }
        }
        if let Some(m) = self.max_rank {
            k = k.min(m);
        }
        k
    }
}

fn hcat<T: Scalar>(blocks: &[DMatrix<T>], rows: usize) -> DMatrix<T> {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

fn vcat<T: Scalar>(blocks: &[DVector<T>]) -> DVector<T> {
    let len: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(len);
    let mut c = 0;
    for b in blocks {
        out.rows_mut(c, b.len()).copy_from(b);
        c += b.len();
    }
    out
}

/// Descending singular values with the matching column indices.
fn sorted_svd<T: Scalar>(m: DMatrix<T>) -> (Vec<T>, DMatrix<T>, DMatrix<T>) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| {
        svd.singular_values[*b]
            .partial_cmp(&svd.singular_values[*a])
            .expect("singular values must be finite")
    });
    let sigma = order.iter().map(|i| svd.singular_values[*i]).collect();
    let us = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vs = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    (sigma, us, vs)
}

/// Descending singular values of a dense matrix.
pub fn singular_values<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    let mut s: Vec<T> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).expect("singular values must be finite"));
    s
}

impl<T: Scalar> LowRankVector<T> {
    pub fn plain(v: DVector<T>) -> Self {
        Self { repr: Repr::Plain(v) }
    }

    /// `Σ_j s_j u_j ⊗ w_j` with `u_j`, `w_j` the columns of `u`, `w`.
    pub fn separated(u: DMatrix<T>, w: DMatrix<T>, s: DVector<T>) -> Result<Self> {
        if u.ncols() != w.ncols() || u.ncols() != s.len() {
            return Err(Error::validation(format!(
                "factor counts differ: {} left, {} right, {} weights",
                u.ncols(),
                w.ncols(),
                s.len()
            )));
        }
        Ok(Self {
            repr: Repr::Separated { u, w, s },
        })
    }

    /// Exact representation of an `n₁ × n₂` matricization.
    pub fn from_matrix(x: &DMatrix<T>) -> Self {
        let n2 = x.ncols();
        Self {
            repr: Repr::Separated {
                u: x.clone(),
                w: DMatrix::identity(n2, n2),
                s: DVector::from_element(n2, T::one()),
            },
        }
    }

    /// Zero vector on a grid with the given sizes (rank 0 in 2D).
    pub fn zeros(sizes: &[usize]) -> Self {
        match sizes.len() {
            1 => Self::plain(DVector::zeros(sizes[0])),
            _ => Self {
                repr: Repr::Separated {
                    u: DMatrix::zeros(sizes[0], 0),
                    w: DMatrix::zeros(sizes[1], 0),
                    s: DVector::zeros(0),
                },
            },
        }
    }

    /// Builds a vector with the same layout as `self` from a big-endian full vector.
    pub fn like_from_dense(&self, x: &DVector<T>) -> Self {
        match &self.repr {
            Repr::Plain(_) => Self::plain(x.clone()),
            Repr::Separated { u, w, .. } => {
                let (n1, n2) = (u.nrows(), w.nrows());
                Self::from_matrix(&DMatrix::from_row_slice(n1, n2, x.as_slice()))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self.repr {
            Repr::Plain(_) => 1,
            Repr::Separated { .. } => 2,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        match &self.repr {
            Repr::Plain(v) => vec![v.len()],
            Repr::Separated { u, w, .. } => vec![u.nrows(), w.nrows()],
        }
    }

    pub fn len(&self) -> usize {
        self.sizes().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of stored rank-one terms (1 for plain vectors).
    pub fn rank(&self) -> usize {
        match &self.repr {
            Repr::Plain(_) => 1,
            Repr::Separated { s, .. } => s.len(),
        }
    }

    /// Left factors, right factors and weights of a separated vector.
    pub fn factors(&self) -> Option<(&DMatrix<T>, &DMatrix<T>, &DVector<T>)> {
        match &self.repr {
            Repr::Plain(_) => None,
            Repr::Separated { u, w, s } => Some((u, w, s)),
        }
    }

    pub fn as_plain(&self) -> Option<&DVector<T>> {
        match &self.repr {
            Repr::Plain(v) => Some(v),
            Repr::Separated { .. } => None,
        }
    }

    /// `n₁ × n₂` matricization (a single column in 1D).
    pub fn to_matrix(&self) -> DMatrix<T> {
        match &self.repr {
            Repr::Plain(v) => DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
            Repr::Separated { u, w, s } => {
                let mut us = u.clone();
                for (j, mut c) in us.column_iter_mut().enumerate() {
                    c *= s[j];
                }
                us * w.transpose()
            }
        }
    }

    /// Full vector in big-endian ordering `i = i₁ n₂ + i₂`.
    pub fn to_dense(&self) -> DVector<T> {
        match &self.repr {
            Repr::Plain(v) => v.clone(),
            Repr::Separated { .. } => {
                let m = self.to_matrix();
                // Column-major storage of Xᵀ is row-major storage of X.
                DVector::from_column_slice(m.transpose().as_slice())
            }
        }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.sizes() != other.sizes() {
            return Err(Error::validation(format!(
                "low-rank vector sizes differ: {:?} vs {:?}",
                self.sizes(),
                other.sizes()
            )));
        }
        Ok(())
    }

    /// Sum by concatenation of terms (ranks add).
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(match (&self.repr, &other.repr) {
            (Repr::Plain(a), Repr::Plain(b)) => Self::plain(a + b),
            (Repr::Separated { u, w, s }, Repr::Separated { u: u2, w: w2, s: s2 }) => Self {
                repr: Repr::Separated {
                    u: hcat(&[u.clone(), u2.clone()], u.nrows()),
                    w: hcat(&[w.clone(), w2.clone()], w.nrows()),
                    s: vcat(&[s.clone(), s2.clone()]),
                },
            },
            _ => return Err(Error::validation("cannot mix plain and separated vectors")),
        })
    }

    /// `self − other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-T::one()))
    }

    /// `a·self + b·other`.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.scale(a).add(&other.scale(b))
    }

    /// Multiplies the weights (or the plain vector) by `t`.
    pub fn scale(&self, t: T) -> Self {
        match &self.repr {
            Repr::Plain(v) => Self::plain(v * t),
            Repr::Separated { u, w, s } => Self {
                repr: Repr::Separated {
                    u: u.clone(),
                    w: w.clone(),
                    s: s * t,
                },
            },
        }
    }

    /// Euclidean inner product of the represented vectors.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        match (&self.repr, &other.repr) {
            (Repr::Plain(a), Repr::Plain(b)) => Ok(a.dot(b)),
            (Repr::Separated { u, w, s }, Repr::Separated { u: u2, w: w2, s: s2 }) => {
                if s.is_empty() || s2.is_empty() {
                    return Ok(T::zero());
                }
                let gu = u.transpose() * u2;
                let gw = w.transpose() * w2;
                let mut acc = T::zero();
                for j in 0..s.len() {
                    let mut row = T::zero();
                    for k in 0..s2.len() {
                        row += s2[k] * gu[(j, k)] * gw[(j, k)];
                    }
                    acc += s[j] * row;
                }
                Ok(acc)
            }
            _ => Err(Error::validation("cannot mix plain and separated vectors")),
        }
    }

    /// Frobenius (Euclidean) norm.
    pub fn norm(&self) -> Result<T> {
        Ok(self.inner(self)?.max(T::zero()).sqrt())
    }

    /// Best approximation of rank `k` chosen by `policy`; returns the discarded
    /// tail `(Σ_{i>k} σ_i²)^{1/2}` of the matricization.
    pub fn truncate(&self, policy: &TruncationPolicy<T>) -> Result<(Self, T)> {
        policy.validate()?;
        let (u, w, s) = match &self.repr {
            Repr::Plain(_) => return Ok((self.clone(), T::zero())),
            Repr::Separated { u, w, s } => (u, w, s),
        };
        if s.is_empty() {
            return Ok((self.clone(), T::zero()));
        }
        let (q1, r1) = u.clone().qr().unpack();
        let (q2, r2) = w.clone().qr().unpack();
        let mut r1s = r1;
        for (j, mut c) in r1s.column_iter_mut().enumerate() {
            c *= s[j];
        }
        let core = r1s * r2.transpose();
        let (sigma, pu, pv) = sorted_svd(core);
        let k = policy.select(&sigma);
        let tail = sigma[k..].iter().fold(T::zero(), |a, x| a + *x * *x).sqrt();
        let uk = &q1 * pu.columns(0, k);
        let wk = &q2 * pv.columns(0, k);
        let sk = DVector::from_iterator(k, sigma[..k].iter().copied());
        Ok((
            Self {
                repr: Repr::Separated { u: uk, w: wk, s: sk },
            },
            tail,
        ))
    }

    /// Descending singular values of the `n₁ × n₂` matricization.
    pub fn singular_profile(&self) -> Result<Vec<T>> {
        match &self.repr {
            Repr::Plain(_) => Err(Error::validation("singular profile needs a two-dimensional vector")),
            Repr::Separated { u, w, s } => {
                if s.is_empty() {
                    return Ok(vec![]);
                }
                let (_, r1) = u.clone().qr().unpack();
                let (_, r2) = w.clone().qr().unpack();
                let mut r1s = r1;
                for (j, mut c) in r1s.column_iter_mut().enumerate() {
                    c *= s[j];
                }
                Ok(singular_values(&(r1s * r2.transpose())))
            }
        }
    }
}

/// Kronecker matrix times low-rank vector; the output rank is `rank(A)·rank(v)`.
pub fn kron_matvec<T: Scalar>(a: &KroneckerMatrix<T>, v: &LowRankVector<T>) -> Result<LowRankVector<T>> {
    if a.sizes() != v.sizes().as_slice() {
        return Err(Error::validation(format!(
            "operator sizes {:?} differ from vector sizes {:?}",
            a.sizes(),
            v.sizes()
        )));
    }
    match &v.repr {
        Repr::Plain(x) => Ok(LowRankVector::plain(a.matvec_dense(x)?)),
        Repr::Separated { u, w, s } => {
            let parts: Vec<(DMatrix<T>, DMatrix<T>)> = a
                .terms()
                .par_iter()
                .map(|term| (term[0].apply(u), term[1].apply(w)))
                .collect();
            let us: Vec<DMatrix<T>> = parts.iter().map(|p| p.0.clone()).collect();
            let ws: Vec<DMatrix<T>> = parts.iter().map(|p| p.1.clone()).collect();
            let ss: Vec<DVector<T>> = (0..parts.len()).map(|_| s.clone()).collect();
            Ok(LowRankVector {
                repr: Repr::Separated {
                    u: hcat(&us, u.nrows()),
                    w: hcat(&ws, w.nrows()),
                    s: vcat(&ss),
                },
            })
        }
    }
}

/// `sqrt(vᵀ Λ∘ v)`.
pub fn energy_norm<T: Scalar>(v: &LowRankVector<T>, lambda0: &KroneckerMatrix<T>) -> Result<T> {
    let av = kron_matvec(lambda0, v)?;
    let sq = v.inner(&av)?;
    let tol = scaled_tol::<T>(1e-14) * (T::one() + v.inner(v)?.abs());
    if sq < -tol {
        return Err(Error::breakdown(format!(
            "energy norm square is negative ({:.3e})",
            sq.as_f64()
        )));
    }
    Ok(sq.max(T::zero()).sqrt())
}
