//! Truncated Fock-space linear algebra.
//!
//! Operators are dense `dim x dim` complex matrices stored row-major. The
//! ladder operators, quadratures and parity used by the rest of the crate are
//! built here, together with the [`DensityMatrix`] and [`PureState`] types
//! whose constructors enforce the physical invariants.

use std::ops::{Add, Mul, Sub};

use faer::{Mat, Side};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Hermiticity tolerance for density matrices (max |A - A^dag|).
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Unit-trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest admissible eigenvalue of a density matrix.
pub const POSITIVITY_TOL: f64 = -1e-8;
/// Norm tolerance for pure states.
pub const NORM_TOL: f64 = 1e-12;

/// Default floor on the Fock cutoff `N_max`.
pub const MIN_CUTOFF: usize = 20;
/// Default cap on the Fock dimension chosen by [`truncation_dim`].
pub const DEFAULT_DIM_CAP: usize = 320;
/// Population threshold for the top decile of Fock levels.
pub const TOP_POPULATION_TOL: f64 = 1e-8;

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension { dim })
    } else {
        Ok(())
    }
}

/// `ln(n!)` accumulated in log space, valid far beyond `n = 170`.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Dense complex operator on a truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<C64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_fn(dim, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Result<Self> {
        check_dim(dim)?;
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Ok(Self { dim, data })
    }

    /// Builds an operator from row-major entries.
    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Result<Self> {
        check_dim(dim)?;
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    /// Diagonal operator with the given (real) entries.
    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let dim = values.len();
        Self::from_fn(dim, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.data[i * self.dim + j] = value;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        Self { dim: n, data }
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        Self { dim: n, data }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn matmul(&self, other: &Operator) -> Result<Operator> {
        self.check_same(other)?;
        let n = self.dim;
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &other.data[k * n..(k + 1) * n];
                let out = &mut data[i * n..(i + 1) * n];
                for (o, b) in out.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        Ok(Operator { dim: n, data })
    }

    /// `out = A v`.
    pub fn apply(&self, v: &[C64], out: &mut [C64]) {
        let n = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = self.data[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// Matrix exponential by scaling and squaring of a Taylor series.
    pub fn expm(&self) -> Result<Operator> {
        let n = self.dim;
        // induced 1-norm
        let norm = (0..n)
            .map(|j| (0..n).map(|i| self.data[i * n + j].norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let scaled = self.scale(C64::new(0.5f64.powi(squarings as i32), 0.0));
        let mut result = Operator::identity(n)?;
        let mut term = Operator::identity(n)?;
        for k in 1..=30 {
            term = term.matmul(&scaled)?.scale(C64::new(1.0 / k as f64, 0.0));
            result = &result + &term;
            if term.max_abs() <= f64::EPSILON * result.max_abs() {
                break;
            }
        }
        for _ in 0..squarings {
            result = result.matmul(&result)?;
        }
        if result.data.iter().any(|z| !z.is_finite()) {
            return Err(Error::Propagation("matrix exponential overflowed".into()));
        }
        Ok(result)
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        Ok(&self.matmul(other)? - &other.matmul(self)?)
    }

    pub fn scale(&self, factor: C64) -> Operator {
        Operator {
            dim: self.dim,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Max absolute deviation of `A - A^dag`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim;
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                err = err.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        err
    }

    /// `(A + A^dag) / 2`.
    pub fn hermitian_part(&self) -> Operator {
        let n = self.dim;
        let mut out = self.clone();
        for i in 0..n {
            for j in i..n {
                let v = (self.get(i, j) + self.get(j, i).conj()) * 0.5;
                out.set(i, j, v);
                out.set(j, i, v.conj());
            }
        }
        out
    }

    pub fn to_sparse(&self) -> SparseOperator {
        SparseOperator::from_dense(self)
    }

    pub fn to_faer(&self) -> Mat<C64> {
        Mat::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    fn check_same(&self, other: &Operator) -> Result<()> {
        if self.dim != other.dim {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            })
        } else {
            Ok(())
        }
    }

    fn zip_with(&self, other: &Operator, f: impl Fn(C64, C64) -> C64) -> Operator {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        Operator {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        self.scale(rhs)
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scale(C64::new(rhs, 0.0))
    }
}

/// Row-compressed operator used wherever the ladder structure makes dense
/// products wasteful (superoperator assembly, trajectory steps).
#[derive(Clone, Debug)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    pub fn from_dense(op: &Operator) -> Self {
        let n = op.dim();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = op.get(i, j);
                if v.re != 0.0 || v.im != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim: n,
            row_ptr,
            cols,
            vals,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzero entries `(row, col, value)` in row order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim)
            .flat_map(move |i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.vals[k])))
    }

    /// `out = A v`.
    pub fn apply(&self, v: &[C64], out: &mut [C64]) {
        for i in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * v[self.cols[k]];
            }
            out[i] = acc;
        }
    }

    /// `out += scale * A X` for a row-major `dim x dim` matrix `X`.
    pub fn left_mul_add(&self, x: &[C64], scale: C64, out: &mut [C64]) {
        let n = self.dim;
        for i in 0..n {
            let out_row = &mut out[i * n..(i + 1) * n];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.vals[k] * scale;
                let x_row = &x[self.cols[k] * n..(self.cols[k] + 1) * n];
                for (o, xv) in out_row.iter_mut().zip(x_row) {
                    *o += a * xv;
                }
            }
        }
    }

    /// `out += scale * X A` for a row-major `dim x dim` matrix `X`.
    pub fn right_mul_add(&self, x: &[C64], scale: C64, out: &mut [C64]) {
        let n = self.dim;
        // (X A)_{rj} = sum_i X_{ri} A_{ij}
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.vals[k] * scale;
                let j = self.cols[k];
                for r in 0..n {
                    out[r * n + j] += x[r * n + i] * a;
                }
            }
        }
    }
}

/// Annihilation operator: `<n-1|a|n> = sqrt(n)`.
pub fn annihilation(dim: usize) -> Result<Operator> {
    Operator::from_fn(dim, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn creation(dim: usize) -> Result<Operator> {
    Ok(annihilation(dim)?.adjoint())
}

/// Number operator `a^dag a`, built directly as a diagonal.
pub fn number(dim: usize) -> Result<Operator> {
    let values: Vec<f64> = (0..dim).map(|n| n as f64).collect();
    check_dim(dim)?;
    Operator::diagonal(&values)
}

/// Photon-number parity `(-1)^{a^dag a}`.
pub fn parity(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    let values: Vec<f64> = (0..dim).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 }).collect();
    Operator::diagonal(&values)
}

/// Quadrature `q_theta = a e^{-i theta} + a^dag e^{i theta}`.
///
/// `theta = 0` gives `x = a + a^dag`, `theta = pi/2` gives `p = i(a^dag - a)`.
/// The lower triangle is written as the exact conjugate of the upper one so
/// the result is Hermitian bit-for-bit.
pub fn quadrature(dim: usize, theta: f64) -> Result<Operator> {
    let phase = C64::from_polar(1.0, -theta);
    let mut q = Operator::zeros(dim)?;
    for n in 1..dim {
        let v = phase * (n as f64).sqrt();
        q.set(n - 1, n, v);
        q.set(n, n - 1, v.conj());
    }
    Ok(q)
}

/// Default Fock dimension for a state whose lobes sit at occupation `n0`.
///
/// The cutoff is `N_max = ceil(n0 + 6 sqrt(n0)) + 20` (six Poissonian standard
/// deviations above the lobe plus a fixed margin), floored at [`MIN_CUTOFF`]
/// and capped at `cap`. Returns `N_max + 1`.
pub fn truncation_dim(n0: f64, cap: usize) -> usize {
    let n0 = n0.max(0.0);
    let cutoff = (n0 + 6.0 * n0.sqrt()).ceil() as usize + 20;
    (cutoff.max(MIN_CUTOFF) + 1).min(cap.max(2))
}

/// Population summed over the top 10% of Fock levels (at least one level).
pub fn top_population(rho: &DensityMatrix) -> f64 {
    let dim = rho.dim();
    let count = ((dim as f64) * 0.1).ceil().max(1.0) as usize;
    (dim - count..dim).map(|n| rho.get(n, n).re).sum()
}

/// A density matrix whose constructor checks Hermiticity, unit trace and
/// numerical positivity.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
}

impl DensityMatrix {
    /// Validates `op` against all density-matrix invariants.
    pub fn new(op: Operator) -> Result<Self> {
        let herm = op.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("hermiticity error {herm:.3e}")));
        }
        let tr = op.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let rho = Self { op };
        let min_ev = rho.min_eigenvalue()?;
        if min_ev < POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("min eigenvalue {min_ev:.3e}")));
        }
        Ok(rho)
    }

    /// Symmetrizes and normalizes `op`, then validates it.
    pub fn from_hermitian_part(op: &Operator) -> Result<Self> {
        let h = op.hermitian_part();
        let tr = h.trace().re;
        if !(tr.is_finite() && tr.abs() > 0.0) {
            return Err(Error::InvalidState(format!("trace {tr} cannot be normalized")));
        }
        Self::new(h.scale(C64::new(1.0 / tr, 0.0)))
    }

    /// Skips the eigenvalue check; used on hot paths whose positivity is
    /// verified separately at checkpoints.
    pub(crate) fn new_unchecked(op: Operator) -> Self {
        Self { op }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        let amps = psi.amplitudes();
        let dim = amps.len();
        let op = Operator::from_fn(dim, |i, j| amps[i] * amps[j].conj()).expect("pure state dim >= 2");
        Self { op }
    }

    /// Fock basis projector `|n><n|`.
    pub fn fock(dim: usize, n: usize) -> Result<Self> {
        Ok(Self::from_pure(&PureState::basis(dim, n)?))
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::fock(dim, 0)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.op.get(i, j)
    }

    pub fn matrix(&self) -> &Operator {
        &self.op
    }

    pub fn into_matrix(self) -> Operator {
        self.op
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.op.get(n, n).re).collect()
    }

    pub fn purity(&self) -> f64 {
        self.op.as_slice().iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.op
            .to_faer()
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(0.0))
    }

    /// Extracts the state vector when the density matrix is rank one.
    pub fn as_pure(&self, tol: f64) -> Option<PureState> {
        if (1.0 - self.purity()).abs() > tol {
            return None;
        }
        let eig = self.op.to_faer().self_adjoint_eigen(Side::Lower).ok()?;
        let n = self.dim();
        let u = eig.U();
        let mut amps: Vec<C64> = (0..n).map(|i| u[(i, n - 1)]).collect();
        // fix the global phase on the largest component
        let (imax, _) = amps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))?;
        let phase = amps[imax].conj() / amps[imax].norm();
        amps.iter_mut().for_each(|z| *z *= phase);
        PureState::new(amps).ok()
    }
}

/// Normalized state vector in the Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("state norm {norm}")));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidState(format!("cannot normalize state of norm {norm}")));
        }
        amplitudes.iter_mut().for_each(|z| *z /= norm);
        Self::new(amplitudes)
    }

    pub fn basis(dim: usize, n: usize) -> Result<Self> {
        check_dim(dim)?;
        if n >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: n + 1,
            });
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[n] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes: amps })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `<psi|A|psi>`.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                found: self.dim(),
            });
        }
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            let mut row = C64::new(0.0, 0.0);
            for j in 0..n {
                row += op.get(i, j) * self.amplitudes[j];
            }
            acc += self.amplitudes[i].conj() * row;
        }
        Ok(acc)
    }
}

/// Coherent state `|alpha>` truncated to `dim` levels and renormalized.
///
/// Amplitudes are evaluated in log space. Requires `|alpha|^2 <= dim / 2`.
pub fn coherent_state(dim: usize, alpha: C64) -> Result<PureState> {
    check_dim(dim)?;
    let occupation = alpha.norm_sqr();
    if occupation > 0.5 * dim as f64 {
        return Err(Error::TruncationTooSmall {
            occupation,
            required: (2.0 * occupation).ceil() as usize,
        });
    }
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    if occupation == 0.0 {
        amps[0] = C64::new(1.0, 0.0);
        return PureState::new(amps);
    }
    let ln_r = alpha.norm().ln();
    let phase = alpha.arg();
    let mut ln_fact = 0.0;
    for (n, amp) in amps.iter_mut().enumerate() {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        let ln_mag = -0.5 * occupation + n as f64 * ln_r - 0.5 * ln_fact;
        *amp = C64::from_polar(ln_mag.exp(), n as f64 * phase);
    }
    PureState::normalized(amps)
}

/// `tr(op rho)`.
pub fn expectation(op: &Operator, rho: &DensityMatrix) -> Result<C64> {
    if op.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: rho.dim(),
        });
    }
    let n = op.dim();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += op.get(i, j) * rho.get(j, i);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn expm_matches_closed_forms() {
        // exp(-i t sigma_x) = cos t - i sin t sigma_x
        let t: f64 = 2.7;
        let sx = Operator::from_row_major(2, vec![c(0.0), c(1.0), c(1.0), c(0.0)]).unwrap();
        let e = sx.scale(C64::new(0.0, -t)).expm().unwrap();
        assert!((e.get(0, 0) - c(t.cos())).norm() < 1e-14);
        assert!((e.get(0, 1) - C64::new(0.0, -t.sin())).norm() < 1e-14);
        // diagonal with a large spread
        let d = Operator::diagonal(&[-40.0, 0.5, 3.0]).unwrap().expm().unwrap();
        for (k, v) in [-40.0f64, 0.5, 3.0].iter().enumerate() {
            assert!((d.get(k, k).re - v.exp()).abs() < 1e-13 * v.exp().max(1.0));
        }
        // nilpotent ladder: exp(a) |n> has coefficients sqrt(n!/(n-k)!)/k!
        let a = annihilation(6).unwrap();
        let e = a.expm().unwrap();
        let want = (5.0 * 4.0 * 3.0f64).sqrt() / 6.0;
        assert!((e.get(2, 5) - c(want)).norm() < 1e-14);
    }

    #[test]
    fn ladder_entries() {
        let a = annihilation(3).unwrap();
        assert_eq!(a.get(0, 1), c(1.0));
        assert_eq!(a.get(1, 2), c(2f64.sqrt()));
        let nonzero = a.as_slice().iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2);
        assert!(matches!(annihilation(1), Err(Error::InvalidDimension { dim: 1 })));
    }

    #[test]
    fn truncated_commutator_breaks_only_at_top() {
        for dim in [2, 5, 9] {
            let a = annihilation(dim).unwrap();
            let comm = a.commutator(&creation(dim).unwrap()).unwrap();
            for i in 0..dim {
                for j in 0..dim {
                    let expected = if i != j {
                        0.0
                    } else if i == dim - 1 {
                        -((dim - 1) as f64)
                    } else {
                        1.0
                    };
                    assert!((comm.get(i, j) - c(expected)).norm() < 1e-14, "dim {dim} ({i},{j})");
                }
            }
        }
        let comm2 = annihilation(2).unwrap().commutator(&creation(2).unwrap()).unwrap();
        assert_eq!(comm2.get(0, 0), c(1.0));
    }

    #[test]
    fn coherent_mean_field() {
        let psi = coherent_state(50, c(2.0)).unwrap();
        let a = annihilation(50).unwrap();
        let mean = psi.expectation(&a).unwrap();
        // direct series: sum_n sqrt(n) c_{n-1}^* c_n with c_n = e^{-2} 2^n / sqrt(n!)
        let mut series = 0.0;
        let mut ln_fact = 0.0;
        let mut prev = (-2.0f64).exp();
        for n in 1..50 {
            ln_fact += (n as f64).ln();
            let cn = (-2.0 + n as f64 * 2f64.ln() - 0.5 * ln_fact).exp();
            series += (n as f64).sqrt() * prev * cn;
            prev = cn;
        }
        assert!((series - 2.0).abs() < 1e-6);
        assert!((mean - c(2.0)).norm() < 1e-6);
    }

    #[test]
    fn quadrature_conventions() {
        let dim = 6;
        let a = annihilation(dim).unwrap();
        let ad = creation(dim).unwrap();
        let x = quadrature(dim, 0.0).unwrap();
        assert!((&x - &(&a + &ad)).max_abs() < 1e-15);
        let p = quadrature(dim, std::f64::consts::FRAC_PI_2).unwrap();
        let expected = (&ad - &a).scale(C64::new(0.0, 1.0));
        assert!((&p - &expected).max_abs() < 1e-15);
        for theta in [0.3, 1.1, -2.0, 4.0] {
            let q = quadrature(dim, theta).unwrap();
            assert_eq!(q, q.adjoint());
        }
    }

    #[test]
    fn coherent_overlaps() {
        let alpha = C64::from_polar(2f64.sqrt(), 0.4);
        let plus = coherent_state(40, alpha).unwrap();
        let minus = coherent_state(40, -alpha).unwrap();
        let overlap = plus.inner(&minus).unwrap().norm_sqr();
        assert!((overlap - (-8.0f64).exp()).abs() < 1e-8);

        let beta = C64::from_polar(3f64.sqrt(), -1.0);
        let vac = PureState::basis(40, 0).unwrap();
        let coh = coherent_state(40, beta).unwrap();
        assert!((vac.inner(&coh).unwrap().norm_sqr() - (-3.0f64).exp()).abs() < 1e-10);

        let zero = coherent_state(5, c(0.0)).unwrap();
        assert_eq!(zero, PureState::basis(5, 0).unwrap());
    }

    #[test]
    fn coherent_guard_names_required_dim() {
        match coherent_state(10, c(3.0)) {
            Err(Error::TruncationTooSmall { required, .. }) => assert_eq!(required, 18),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coherent_large_occupation_no_overflow() {
        // n beyond 170 would overflow a direct factorial
        let psi = coherent_state(400, c(12.0)).unwrap();
        let n = number(400).unwrap();
        assert!((psi.expectation(&n).unwrap().re - 144.0).abs() < 1e-8);
    }

    #[test]
    fn expectations() {
        let vac = DensityMatrix::vacuum(8).unwrap();
        assert_eq!(expectation(&number(8).unwrap(), &vac).unwrap(), c(0.0));
        let rho = DensityMatrix::from_pure(&coherent_state(50, c(2.0)).unwrap());
        let id = Operator::identity(50).unwrap();
        assert!((expectation(&id, &rho).unwrap() - c(1.0)).norm() < 1e-10);
        let n = expectation(&number(50).unwrap(), &rho).unwrap();
        assert!((n.re - 4.0).abs() < 1e-6);
        assert!(n.im.abs() < 1e-10);
        assert!(expectation(&number(4).unwrap(), &vac).is_err());
    }

    #[test]
    fn density_matrix_rejects_invalid() {
        let mut op = Operator::zeros(3).unwrap();
        op.set(0, 0, c(0.5));
        assert!(DensityMatrix::new(op.clone()).is_err());
        op.set(1, 1, c(0.5));
        op.set(0, 1, c(0.1));
        assert!(DensityMatrix::new(op.clone()).is_err(), "non-Hermitian");
        op.set(1, 0, c(0.1));
        assert!(DensityMatrix::new(op.clone()).is_ok());
        let neg = Operator::diagonal(&[1.5, -0.5, 0.0]).unwrap();
        assert!(DensityMatrix::new(neg).is_err(), "negative eigenvalue");
    }

    #[test]
    fn pure_extraction_round_trip() {
        let psi = coherent_state(12, C64::new(0.8, -0.6)).unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        let back = rho.as_pure(1e-10).unwrap();
        let overlap = psi.inner(&back).unwrap().norm();
        assert!((overlap - 1.0).abs() < 1e-12);
        let mixed = DensityMatrix::new(Operator::diagonal(&[0.5, 0.5]).unwrap()).unwrap();
        assert!(mixed.as_pure(1e-10).is_none());
    }

    #[test]
    fn truncation_rule() {
        assert_eq!(truncation_dim(0.0, 1000), 21);
        // 9 + 18 + 20 = 47 -> dim 48
        assert_eq!(truncation_dim(9.0, 1000), 48);
        assert_eq!(truncation_dim(9.0, 30), 30);
    }

    #[test]
    fn sparse_products_match_dense() {
        let dim = 7;
        let a = annihilation(dim).unwrap();
        let q = quadrature(dim, 0.7).unwrap();
        let x = Operator::from_fn(dim, |i, j| C64::new((i * 3 + j) as f64 * 0.1, (i as f64) - j as f64)).unwrap();
        let mut left = vec![C64::new(0.0, 0.0); dim * dim];
        q.to_sparse().left_mul_add(x.as_slice(), c(2.0), &mut left);
        let dense_left = q.matmul(&x).unwrap().scale(c(2.0));
        let mut right = vec![C64::new(0.0, 0.0); dim * dim];
        a.to_sparse().right_mul_add(x.as_slice(), c(1.0), &mut right);
        let dense_right = x.matmul(&a).unwrap();
        for k in 0..dim * dim {
            assert!((left[k] - dense_left.as_slice()[k]).norm() < 1e-13);
            assert!((right[k] - dense_right.as_slice()[k]).norm() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn coherent_norm_is_unity(dim in 2usize..60, re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let alpha = C64::new(re, im);
            prop_assume!(alpha.norm_sqr() <= 0.5 * dim as f64);
            let psi = coherent_state(dim, alpha).unwrap();
            let norm: f64 = psi.amplitudes().iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }

        #[test]
        fn adjoint_is_involution(dim in 2usize..8, seed in any::<u64>()) {
            let op = Operator::from_fn(dim, |i, j| {
                let h = seed.wrapping_mul(6364136223846793005).wrapping_add((i * 31 + j) as u64);
                C64::new((h % 1000) as f64 / 7.0, ((h >> 20) % 1000) as f64 / 13.0)
            }).unwrap();
            prop_assert_eq!(op.adjoint().adjoint(), op);
        }
    }
}
