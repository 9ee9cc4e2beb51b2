//! Vectorized superoperators on the doubled Hilbert space.
//!
//! Density matrices are column-stacked: entry `(i, j)` of a `dim x dim`
//! matrix lives at index `i + dim * j`. Under this convention the map
//! `X -> A X B` is the matrix `B^T (x) A`, which is how every superoperator
//! below is assembled.
//!
//! Linear solves go through faer's sparse LU. The steady state replaces the
//! redundant `(0,0)` row of `L` by the trace functional; the Drazin inverse is
//! applied through the bordered system
//! `[[L, |rho>], [<1|, 0]] [x; mu] = [(I - |rho><1|) y; 0]`.

use std::sync::Arc;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, Operator};

/// Largest superoperator dimension handled by dense eigendecomposition.
pub const DENSE_LIMIT: usize = 4096;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Compressed sparse row complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates. Explicit
    /// zeros are kept so that structural patterns (e.g. the diagonal) survive.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows)
            .flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k])))
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => ZERO,
        }
    }

    /// `out = M x`.
    pub fn matvec_into(&self, x: &[C64], out: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(out.len(), self.nrows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.nrows];
        self.matvec_into(x, &mut out);
        out
    }

    /// Row vector times matrix: `out_j = sum_i y_i M_ij`.
    pub fn vecmat(&self, y: &[C64]) -> Vec<C64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![ZERO; self.ncols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == ZERO {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[k]] += yr * self.vals[k];
            }
        }
        out
    }

    /// `self + factor * other` over the union of both patterns.
    pub fn add_scaled(&self, other: &SparseMatrix, factor: C64) -> SparseMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let triplets = self
            .triplets()
            .chain(other.triplets().map(|(r, c, v)| (r, c, v * factor)))
            .collect();
        SparseMatrix::from_triplets(self.nrows, self.ncols, triplets)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut sums = vec![0.0; self.ncols];
        for (_, c, v) in self.triplets() {
            sums[c] += v.norm();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    fn to_faer_triplets(&self) -> Vec<Triplet<usize, usize, C64>> {
        self.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect()
    }
}

fn faer_matrix(n: usize, triplets: &[Triplet<usize, usize, C64>]) -> Result<SparseColMat<usize, C64>> {
    SparseColMat::try_new_from_triplets(n, n, triplets).map_err(|_| Error::Solver {
        context: "sparse assembly",
        residual: f64::NAN,
    })
}

fn solve_dense_rhs(lu: &Lu<usize, C64>, rhs: &[C64]) -> Vec<C64> {
    let b = Mat::<C64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn all_finite(v: &[C64]) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Column-stacked density matrix (or any `dim x dim` matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorizedState {
    dim: usize,
    data: Vec<C64>,
}

impl VectorizedState {
    pub fn new(data: Vec<C64>) -> Result<Self> {
        let len = data.len();
        let dim = (len as f64).sqrt().round() as usize;
        if dim * dim != len || dim < 2 {
            return Err(Error::NotSquare { len });
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    /// Vectorized identity `|1>` (its conjugate transpose is the trace functional).
    pub fn identity(dim: usize) -> Self {
        let mut v = Self::zeros(dim);
        for i in 0..dim {
            v.data[i + dim * i] = ONE;
        }
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    /// `<1|v>`, the trace of the devectorized matrix.
    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i + self.dim * i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }
}

/// `vec(X)` under column stacking.
pub fn vectorize(x: &Operator) -> VectorizedState {
    let n = x.dim();
    let mut data = vec![ZERO; n * n];
    for j in 0..n {
        for i in 0..n {
            data[i + n * j] = x.get(i, j);
        }
    }
    VectorizedState { dim: n, data }
}

pub fn vectorize_state(rho: &DensityMatrix) -> VectorizedState {
    vectorize(rho.matrix())
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &VectorizedState) -> Operator {
    let n = v.dim;
    Operator::from_fn(n, |i, j| v.data[i + n * j]).expect("vectorized state has dim >= 2")
}

/// Sparse superoperator acting on column-stacked `dim x dim` matrices.
#[derive(Clone, Debug)]
pub struct SuperOperatorMatrix {
    dim: usize,
    matrix: Arc<SparseMatrix>,
}

impl SuperOperatorMatrix {
    pub fn from_sparse(dim: usize, matrix: SparseMatrix) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: matrix.nrows(),
            });
        }
        Ok(Self {
            dim,
            matrix: Arc::new(matrix),
        })
    }

    /// Superoperator of `X -> A X B`: entries `(i + N j, k + N l) = A_ik B_lj`.
    pub fn sandwich(left: &Operator, right: &Operator) -> Result<Self> {
        let n = left.dim();
        if right.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: right.dim(),
            });
        }
        let a = left.to_sparse();
        let b = right.to_sparse();
        let mut triplets = Vec::with_capacity(a.nnz() * b.nnz());
        for (i, k, aik) in a.entries() {
            for (l, j, blj) in b.entries() {
                triplets.push((i + n * j, k + n * l, aik * blj));
            }
        }
        Self::from_sparse(n, SparseMatrix::from_triplets(n * n, n * n, triplets))
    }

    /// Hilbert-space dimension.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Doubled-space dimension `dim^2`.
    #[inline]
    pub fn dim2(&self) -> usize {
        self.dim * self.dim
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn apply(&self, v: &VectorizedState) -> VectorizedState {
        assert_eq!(v.dim, self.dim, "superoperator/state dimension mismatch");
        VectorizedState {
            dim: self.dim,
            data: self.matrix.matvec(&v.data),
        }
    }

    pub fn apply_slice(&self, v: &[C64]) -> Vec<C64> {
        self.matrix.matvec(v)
    }

    /// `<1| S`, as a vector over the doubled space.
    pub fn left_trace(&self) -> Vec<C64> {
        self.matrix.vecmat(VectorizedState::identity(self.dim).as_slice())
    }

    /// `|| <1| S ||_max`; zero for trace-preserving generators.
    pub fn trace_preservation_error(&self) -> f64 {
        max_abs(&self.left_trace())
    }

    pub fn add(&self, other: &SuperOperatorMatrix) -> Result<Self> {
        self.add_scaled(other, ONE)
    }

    pub fn sub(&self, other: &SuperOperatorMatrix) -> Result<Self> {
        self.add_scaled(other, -ONE)
    }

    fn add_scaled(&self, other: &SuperOperatorMatrix, factor: C64) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Self::from_sparse(self.dim, self.matrix.add_scaled(&other.matrix, factor))
    }

    pub fn scale(&self, factor: C64) -> Self {
        let triplets = self.matrix.triplets().map(|(r, c, v)| (r, c, v * factor)).collect();
        Self {
            dim: self.dim,
            matrix: Arc::new(SparseMatrix::from_triplets(self.dim2(), self.dim2(), triplets)),
        }
    }

    pub fn to_dense(&self) -> Mat<C64> {
        self.matrix.to_dense()
    }
}

/// Lindblad generator `-i[H, .] + sum_k rate_k D[c_k]`.
///
/// The diagonal of the result is always stored (possibly as explicit zeros),
/// so frequency-shifted copies share one sparsity pattern.
pub fn liouvillian(h: &Operator, jumps: &[(Operator, f64)]) -> Result<SuperOperatorMatrix> {
    let n = h.dim();
    let id = Operator::identity(n)?;
    let i = C64::new(0.0, 1.0);
    let mut parts = vec![
        SuperOperatorMatrix::sandwich(&h.scale(-i), &id)?,
        SuperOperatorMatrix::sandwich(&id, &h.scale(i))?,
    ];
    for (c, rate) in jumps {
        if c.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: c.dim(),
            });
        }
        if *rate < 0.0 {
            return Err(Error::NegativeRate { rate: *rate });
        }
        let cd = c.adjoint();
        let cdc = cd.matmul(c)?.scale(C64::new(-0.5 * rate, 0.0));
        parts.push(SuperOperatorMatrix::sandwich(&c.scale(C64::new(*rate, 0.0)), &cd)?);
        parts.push(SuperOperatorMatrix::sandwich(&cdc, &id)?);
        parts.push(SuperOperatorMatrix::sandwich(&id, &cdc)?);
    }
    let n2 = n * n;
    let mut triplets: Vec<(usize, usize, C64)> = (0..n2).map(|k| (k, k, ZERO)).collect();
    for p in &parts {
        triplets.extend(p.matrix.triplets());
    }
    SuperOperatorMatrix::from_sparse(n, SparseMatrix::from_triplets(n2, n2, triplets))
}

/// Result of the steady-state solve.
#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    /// `|| L |rho_ss> ||_max` after symmetrization and normalization.
    pub residual: f64,
}

/// Smallest two singular values of `L` (dense; only for small systems).
fn smallest_singular_values(l: &SuperOperatorMatrix) -> Option<[f64; 2]> {
    if l.dim2() > DENSE_LIMIT {
        return None;
    }
    let sv = l.to_dense().singular_values().ok()?;
    let k = sv.len();
    (k >= 2).then(|| [sv[k - 1], sv[k - 2]])
}

/// Unique steady state of a trace-preserving generator.
///
/// The redundant `(0,0)` row of `L` is replaced by the trace functional
/// `<1|` with right-hand side `e_0`; the solution is then symmetrized and
/// normalized before the density-matrix invariants are checked.
pub fn steady_state(l: &SuperOperatorMatrix) -> Result<SteadyState> {
    let n = l.dim();
    let n2 = l.dim2();
    let mut triplets: Vec<Triplet<usize, usize, C64>> = l
        .matrix
        .triplets()
        .filter(|&(r, _, _)| r != 0)
        .map(|(r, c, v)| Triplet::new(r, c, v))
        .collect();
    triplets.extend((0..n).map(|i| Triplet::new(0, i + n * i, ONE)));
    let a = faer_matrix(n2, &triplets)?;
    let degenerate = || Error::DegenerateSteadyState {
        singular_values: smallest_singular_values(l),
    };
    let lu = a.sp_lu().map_err(|_| degenerate())?;
    let mut rhs = vec![ZERO; n2];
    rhs[0] = ONE;
    let x = solve_dense_rhs(&lu, &rhs);
    if !all_finite(&x) {
        return Err(degenerate());
    }
    let raw = devectorize(&VectorizedState { dim: n, data: x });
    let rho = DensityMatrix::from_hermitian_part(&raw).map_err(|e| match e {
        Error::InvalidState(_) => degenerate(),
        other => other,
    })?;
    let residual = max_abs(&l.apply(&vectorize_state(&rho)).data);
    let scale = l.matrix.norm_one().max(1.0);
    if residual > 1e-8 * scale {
        return Err(degenerate());
    }
    Ok(SteadyState { rho, residual })
}

/// Reusable Drazin-inverse application `x = L^+ y`.
pub struct DrazinSolver {
    l: SuperOperatorMatrix,
    rho: Vec<C64>,
    lu: Lu<usize, C64>,
    norm_l: f64,
}

impl DrazinSolver {
    /// Factorizes the bordered system for `L` and its steady state.
    pub fn new(l: &SuperOperatorMatrix, rho_ss: &DensityMatrix) -> Result<Self> {
        let n = l.dim();
        if rho_ss.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: rho_ss.dim(),
            });
        }
        let n2 = l.dim2();
        let rho = vectorize_state(rho_ss).into_vec();
        let mut triplets = l.matrix.to_faer_triplets();
        triplets.reserve(n2 + n + 1);
        for (r, &v) in rho.iter().enumerate() {
            if v != ZERO {
                triplets.push(Triplet::new(r, n2, v));
            }
        }
        triplets.extend((0..n).map(|i| Triplet::new(n2, i + n * i, ONE)));
        triplets.push(Triplet::new(n2, n2, ZERO));
        let a = faer_matrix(n2 + 1, &triplets)?;
        let lu = a.sp_lu().map_err(|_| Error::Solver {
            context: "bordered Drazin factorization",
            residual: f64::NAN,
        })?;
        Ok(Self {
            l: l.clone(),
            rho,
            lu,
            norm_l: l.matrix.norm_one(),
        })
    }

    /// `(I - |rho><1|) y`.
    pub fn project(&self, y: &[C64]) -> Vec<C64> {
        let n = self.l.dim();
        let tr: C64 = (0..n).map(|i| y[i + n * i]).sum();
        y.iter().zip(&self.rho).map(|(a, r)| a - tr * r).collect()
    }

    fn solve_bordered(&self, rhs: &[C64]) -> Vec<C64> {
        let mut full = rhs.to_vec();
        full.push(ZERO);
        let mut x = solve_dense_rhs(&self.lu, &full);
        x.pop();
        x
    }

    /// `L^+ y`. Applies one step of iterative refinement when the first
    /// solve misses the residual target.
    pub fn apply_slice(&self, y: &[C64]) -> Result<Vec<C64>> {
        let n = self.l.dim();
        let target = self.project(y);
        let mut x = self.solve_bordered(&target);
        // normwise backward error: |Lx - y| relative to |L| |x| + |y|
        let scale = |x: &[C64]| self.norm_l * max_abs(x) + max_abs(&target).max(1.0);
        let mut residual = self.residual(&x, &target);
        if residual > 1e-10 * scale(&x) {
            let r: Vec<C64> = {
                let lx = self.l.apply_slice(&x);
                target.iter().zip(&lx).map(|(t, v)| t - v).collect()
            };
            let dx = self.solve_bordered(&r);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            residual = self.residual(&x, &target);
        }
        if !all_finite(&x) || residual > 1e-8 * scale(&x) {
            return Err(Error::Solver {
                context: "Drazin inverse",
                residual,
            });
        }
        // remove any trace left by rounding: <1|x> = 0 exactly up to one ulp
        let tr: C64 = (0..n).map(|i| x[i + n * i]).sum();
        x.iter_mut().zip(&self.rho).for_each(|(a, r)| *a -= tr * r);
        Ok(x)
    }

    pub fn apply(&self, y: &VectorizedState) -> Result<VectorizedState> {
        Ok(VectorizedState {
            dim: y.dim,
            data: self.apply_slice(&y.data)?,
        })
    }

    fn residual(&self, x: &[C64], target: &[C64]) -> f64 {
        let lx = self.l.apply_slice(x);
        lx.iter().zip(target).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn liouvillian(&self) -> &SuperOperatorMatrix {
        &self.l
    }

    pub fn steady_state_vec(&self) -> &[C64] {
        &self.rho
    }
}

/// One-shot `L^+ y`.
pub fn drazin_apply(l: &SuperOperatorMatrix, rho_ss: &DensityMatrix, y: &VectorizedState) -> Result<VectorizedState> {
    DrazinSolver::new(l, rho_ss)?.apply(y)
}

/// Factorizes `L + s I` for arbitrary shifts `s`, reusing one symbolic
/// analysis of the sparsity pattern.
pub struct ShiftedFactorizer {
    l: SuperOperatorMatrix,
    base: SparseColMat<usize, C64>,
    symbolic: SymbolicLu<usize>,
}

impl ShiftedFactorizer {
    pub fn new(l: &SuperOperatorMatrix) -> Result<Self> {
        let base = faer_matrix(l.dim2(), &l.matrix.to_faer_triplets())?;
        let symbolic = SymbolicLu::try_new(base.symbolic()).map_err(|_| Error::Solver {
            context: "symbolic LU",
            residual: f64::NAN,
        })?;
        Ok(Self {
            l: l.clone(),
            base,
            symbolic,
        })
    }

    /// Numeric factorization of `L + shift I`.
    pub fn factor(&self, shift: C64) -> Result<Lu<usize, C64>> {
        let mut shifted = self.base.clone();
        {
            let n = shifted.ncols();
            let col_ptr: Vec<usize> = shifted.symbolic().col_ptr().to_vec();
            let row_idx: Vec<usize> = shifted.symbolic().row_idx().to_vec();
            let vals = shifted.val_mut();
            for c in 0..n {
                for k in col_ptr[c]..col_ptr[c + 1] {
                    if row_idx[k] == c {
                        vals[k] += shift;
                    }
                }
            }
        }
        Lu::try_new_with_symbolic(self.symbolic.clone(), shifted.as_ref()).map_err(|_| Error::Solver {
            context: "shifted LU",
            residual: f64::NAN,
        })
    }

    pub fn liouvillian(&self) -> &SuperOperatorMatrix {
        &self.l
    }
}

/// `L / (L^2 + omega^2)` at one fixed nonzero frequency.
pub struct ResolventSolver {
    l: SuperOperatorMatrix,
    omega: f64,
    minus: Lu<usize, C64>,
    plus: Lu<usize, C64>,
}

impl ResolventSolver {
    pub fn new(factorizer: &ShiftedFactorizer, omega: f64) -> Result<Self> {
        if omega == 0.0 || !omega.is_finite() {
            return Err(Error::ZeroFrequency);
        }
        let i_omega = C64::new(0.0, omega);
        Ok(Self {
            l: factorizer.l.clone(),
            omega,
            minus: factorizer.factor(-i_omega)?,
            plus: factorizer.factor(i_omega)?,
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// `x = (1/2)[(L - i w)^-1 + (L + i w)^-1] y`, with the residual check
    /// `||(L^2 + w^2) x - L y|| < 1e-7 ||y||`.
    pub fn apply_slice(&self, y: &[C64]) -> Result<Vec<C64>> {
        let a = solve_dense_rhs(&self.minus, y);
        let b = solve_dense_rhs(&self.plus, y);
        let x: Vec<C64> = a.iter().zip(&b).map(|(u, v)| (u + v) * 0.5).collect();
        let lx = self.l.apply_slice(&x);
        let llx = self.l.apply_slice(&lx);
        let ly = self.l.apply_slice(y);
        let w2 = self.omega * self.omega;
        let res: Vec<C64> = llx.iter().zip(&x).zip(&ly).map(|((p, q), r)| p + q * w2 - r).collect();
        let residual = norm2(&res);
        let scale = norm2(y).max(f64::MIN_POSITIVE);
        if !all_finite(&x) || residual > 1e-7 * scale {
            return Err(Error::Solver {
                context: "resolvent",
                residual: residual / scale,
            });
        }
        Ok(x)
    }

    pub fn apply(&self, y: &VectorizedState) -> Result<VectorizedState> {
        Ok(VectorizedState {
            dim: y.dim,
            data: self.apply_slice(&y.data)?,
        })
    }
}

/// One-shot `[L / (L^2 + omega^2)] y` for `omega != 0`.
pub fn resolvent_apply(l: &SuperOperatorMatrix, omega: f64, y: &VectorizedState) -> Result<VectorizedState> {
    if omega == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    ResolventSolver::new(&ShiftedFactorizer::new(l)?, omega)?.apply(y)
}

/// Biorthonormal eigendecomposition `L = sum_j lambda_j |x_j><y_j|`.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<C64>,
    /// Right eigenvectors as columns.
    pub right_vectors: Mat<C64>,
    /// Left eigenvectors as rows (`<y_j|`).
    pub left_vectors: Mat<C64>,
    /// `max |<y_j|x_k> - delta_jk|`.
    pub biorthogonality_residual: f64,
    /// Index of the steady-state eigenvalue (smallest modulus).
    pub zero_index: usize,
}

impl SpectralDecomposition {
    /// Number of eigenvalues with `|lambda| < tol`.
    pub fn zero_mode_count(&self, tol: f64) -> usize {
        self.eigenvalues.iter().filter(|l| l.norm() < tol).count()
    }

    /// Largest real part among the non-steady modes.
    pub fn spectral_gap_real(&self) -> f64 {
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != self.zero_index)
            .map(|(_, l)| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum_j f(lambda_j, j == zero_index) |x_j><y_j| v`.
    pub fn apply_fn(&self, v: &[C64], f: impl Fn(C64, bool) -> C64) -> Vec<C64> {
        let n = self.eigenvalues.len();
        let mut out = vec![ZERO; n];
        for j in 0..n {
            let mut overlap = ZERO;
            for k in 0..n {
                overlap += self.left_vectors[(j, k)] * v[k];
            }
            let coeff = f(self.eigenvalues[j], j == self.zero_index) * overlap;
            if coeff == ZERO {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o += self.right_vectors[(k, j)] * coeff;
            }
        }
        out
    }

    /// Right eigenvector of the steady state, normalized to unit trace.
    pub fn steady_state_vec(&self) -> Vec<C64> {
        let n = self.eigenvalues.len();
        (0..n).map(|k| self.right_vectors[(k, self.zero_index)]).collect()
    }
}

/// Dense eigendecomposition of a (small) superoperator. Left vectors are
/// the rows of the inverse right-eigenvector matrix, so biorthonormality
/// holds up to the conditioning of the eigenbasis.
pub fn spectral_decomposition(l: &SuperOperatorMatrix) -> Result<SpectralDecomposition> {
    spectral_decomposition_with_limit(l, DENSE_LIMIT)
}

pub fn spectral_decomposition_with_limit(l: &SuperOperatorMatrix, limit: usize) -> Result<SpectralDecomposition> {
    let n2 = l.dim2();
    if n2 > limit {
        return Err(Error::TooLarge { dim2: n2, limit });
    }
    let dense = l.to_dense();
    let eig = dense.eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let eigenvalues: Vec<C64> = (0..n2).map(|j| eig.S()[j]).collect();
    let mut right = eig.U().to_owned();
    let zero_index = eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(j, _)| j)
        .unwrap_or(0);
    let dim = l.dim();
    let tr: C64 = (0..dim).map(|i| right[(i + dim * i, zero_index)]).sum();
    if tr.norm() > 0.0 {
        for k in 0..n2 {
            right[(k, zero_index)] /= tr;
        }
    }
    let left = right.partial_piv_lu().inverse();
    let product = &left * &right;
    let mut residual: f64 = 0.0;
    for j in 0..n2 {
        for k in 0..n2 {
            let target = if j == k { ONE } else { ZERO };
            residual = residual.max((product[(j, k)] - target).norm());
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        right_vectors: right,
        left_vectors: left,
        biorthogonality_residual: residual,
        zero_index,
    })
}

/// Time propagation `v(t) = e^{L t} v(0)` by truncated Taylor series over
/// substeps with `h ||L||_1 <= 2`.
pub struct Propagator {
    l: SuperOperatorMatrix,
    norm: f64,
}

impl Propagator {
    const THETA: f64 = 2.0;
    const MAX_TERMS: usize = 80;

    pub fn new(l: &SuperOperatorMatrix) -> Self {
        Self {
            l: l.clone(),
            norm: l.matrix.norm_one(),
        }
    }

    /// Advances `v` in place by time `t >= 0`.
    pub fn advance(&self, v: &mut [C64], t: f64) -> Result<()> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Propagation(format!("invalid time step {t}")));
        }
        if t == 0.0 {
            return Ok(());
        }
        let steps = ((self.norm * t) / Self::THETA).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut term = vec![ZERO; v.len()];
        let mut next = vec![ZERO; v.len()];
        for step in 0..steps {
            term.copy_from_slice(v);
            let mut converged = false;
            for k in 1..=Self::MAX_TERMS {
                self.l.matrix.matvec_into(&term, &mut next);
                let factor = h / k as f64;
                let mut term_max: f64 = 0.0;
                for (t_k, n_k) in term.iter_mut().zip(&next) {
                    *t_k = n_k * factor;
                    term_max = term_max.max(t_k.norm());
                }
                let mut v_max: f64 = 0.0;
                for (a, b) in v.iter_mut().zip(&term) {
                    *a += b;
                    v_max = v_max.max(a.norm());
                }
                if term_max <= f64::EPSILON * 0.5 * v_max {
                    converged = true;
                    break;
                }
            }
            if !converged || !all_finite(v) {
                return Err(Error::Propagation(format!(
                    "Taylor series failed to converge at substep {step} of {steps} (h = {h:.3e})"
                )));
            }
        }
        Ok(())
    }

    pub fn propagate(&self, v: &VectorizedState, t: f64) -> Result<VectorizedState> {
        let mut data = v.data.clone();
        self.advance(&mut data, t)?;
        Ok(VectorizedState { dim: v.dim, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock;
    use crate::model::{build_hamiltonian, jump_operators, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decay_liouvillian(dim: usize, kappa: f64) -> SuperOperatorMatrix {
        let h = Operator::zeros(dim).unwrap();
        liouvillian(&h, &[(fock::annihilation(dim).unwrap(), kappa)]).unwrap()
    }

    fn ppk(delta: f64, g: f64, u: f64, dim: usize) -> SuperOperatorMatrix {
        let p = ModelParams::in_kappa_units(delta, g, u).unwrap();
        liouvillian(&build_hamiltonian(&p, dim).unwrap(), &jump_operators(&p, dim).unwrap()).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn column_stacking_golden() {
        let id = Operator::identity(2).unwrap();
        assert_eq!(vectorize(&id).as_slice(), &[ONE, ZERO, ZERO, ONE]);
        let x = Operator::from_row_major(
            2,
            vec![
                C64::new(1.0, 0.0),
                C64::new(2.0, 0.0),
                C64::new(3.0, 0.0),
                C64::new(4.0, 0.0),
            ],
        )
        .unwrap();
        // column stacking: (0,0), (1,0), (0,1), (1,1)
        let v = vectorize(&x);
        let re: Vec<f64> = v.as_slice().iter().map(|z| z.re).collect();
        assert_eq!(re, vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(devectorize(&v), x);
        assert_eq!(v.trace(), C64::new(5.0, 0.0));
        assert!(matches!(
            VectorizedState::new(vec![ZERO; 5]),
            Err(Error::NotSquare { len: 5 })
        ));
    }

    #[test]
    fn sandwich_matches_dense_product() {
        let dim = 4;
        let a = fock::quadrature(dim, 0.3).unwrap();
        let b = fock::annihilation(dim).unwrap();
        let x = Operator::from_fn(dim, |i, j| C64::new(i as f64 + 0.5, j as f64 - 1.0)).unwrap();
        let s = SuperOperatorMatrix::sandwich(&a, &b).unwrap();
        let lhs = devectorize(&s.apply(&vectorize(&x)));
        let rhs = a.matmul(&x).unwrap().matmul(&b).unwrap();
        assert!((&lhs - &rhs).max_abs() < 1e-13);
    }

    #[test]
    fn two_level_decay() {
        let l = decay_liouvillian(2, 0.7);
        let one = vectorize_state(&DensityMatrix::fock(2, 1).unwrap());
        let out = devectorize(&l.apply(&one));
        assert!((out.get(0, 0) - C64::new(0.7, 0.0)).norm() < 1e-15);
        assert!((out.get(1, 1) - C64::new(-0.7, 0.0)).norm() < 1e-15);
        assert!(out.get(0, 1).norm() < 1e-15 && out.get(1, 0).norm() < 1e-15);
    }

    #[test]
    fn trace_preserving_assembly() {
        assert!(ppk(1.0, 1.0, 1.0 / 3.0, 20).trace_preservation_error() < 1e-10);
        assert!(decay_liouvillian(5, 2.0).trace_preservation_error() < 1e-10);
        let h = fock::quadrature(6, 0.2).unwrap();
        assert!(matches!(
            liouvillian(&h, &[(fock::annihilation(6).unwrap(), -1.0)]),
            Err(Error::NegativeRate { .. })
        ));
        assert!(matches!(
            liouvillian(&h, &[(fock::annihilation(5).unwrap(), 1.0)]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn parity_conjugation_commutes_with_ppk() {
        let dim = 12;
        let l = ppk(2.0, 1.0, 0.3, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sign = |k: usize| if (k % dim + k / dim) % 2 == 0 { 1.0 } else { -1.0 };
        for _ in 0..4 {
            let v = random_vec(&mut rng, dim * dim);
            let pv: Vec<C64> = v.iter().enumerate().map(|(k, z)| z * sign(k)).collect();
            let lpv = l.apply_slice(&pv);
            let plv: Vec<C64> = l.apply_slice(&v).iter().enumerate().map(|(k, z)| z * sign(k)).collect();
            let err = lpv.iter().zip(&plv).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn undriven_steady_state_is_vacuum() {
        let ss = steady_state(&ppk(1.3, 0.0, 0.4, 10)).unwrap();
        assert!((ss.rho.get(0, 0).re - 1.0).abs() < 1e-12);
        assert!(ss.residual < 1e-10);
    }

    #[test]
    fn ppk_steady_state_invariants() {
        let dim = 30;
        let l = ppk(1.0, 1.0, 1.0 / 3.0, dim);
        let ss = steady_state(&l).unwrap();
        assert!(ss.residual < 1e-10, "residual {}", ss.residual);
        assert!(ss.rho.min_eigenvalue().unwrap() > -1e-8);
        let a = fock::annihilation(dim).unwrap();
        assert!(fock::expectation(&a, &ss.rho).unwrap().norm() < 1e-8);
    }

    #[test]
    fn steady_state_matches_long_time_evolution() {
        // independent route: propagate vacuum to t = 50 / kappa
        let dim = 30;
        let l = ppk(1.0, 1.0, 1.0 / 3.0, dim);
        let ss = steady_state(&l).unwrap();
        let prop = Propagator::new(&l);
        let evolved = prop
            .propagate(&vectorize_state(&DensityMatrix::vacuum(dim).unwrap()), 50.0)
            .unwrap();
        let n_op = fock::number(dim).unwrap();
        let n_ss = fock::expectation(&n_op, &ss.rho).unwrap().re;
        let n_t = fock::expectation(
            &n_op,
            &DensityMatrix::from_hermitian_part(&devectorize(&evolved)).unwrap(),
        )
        .unwrap()
        .re;
        assert!((n_ss - n_t).abs() < 1e-4 * n_ss.max(1.0), "{n_ss} vs {n_t}");
    }

    #[test]
    fn drazin_identities() {
        let dim = 10;
        let l = ppk(0.5, 1.0, 0.5, dim);
        let ss = steady_state(&l).unwrap();
        let solver = DrazinSolver::new(&l, &ss.rho).unwrap();
        let rho_vec = vectorize_state(&ss.rho);
        let x = solver.apply(&rho_vec).unwrap();
        assert!(x.max_abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let y = random_vec(&mut rng, dim * dim);
            // L^+ L y = (I - |rho><1|) y
            let ly = l.apply_slice(&y);
            let lply = solver.apply_slice(&ly).unwrap();
            let proj = solver.project(&y);
            let err = lply.iter().zip(&proj).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-8, "L+L err {err}");
            // L L^+ y = (I - |rho><1|) y
            let lpy = solver.apply_slice(&y).unwrap();
            let llp = l.apply_slice(&lpy);
            let err = llp.iter().zip(&proj).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-8, "LL+ err {err}");
            let tr: C64 = (0..dim).map(|i| lpy[i + dim * i]).sum();
            assert!(tr.norm() < 1e-10);
        }
    }

    #[test]
    fn resolvent_limits() {
        let dim = 10;
        let l = ppk(0.5, 1.0, 0.5, dim);
        let ss = steady_state(&l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = VectorizedState::new(random_vec(&mut rng, dim * dim)).unwrap();
        let far = resolvent_apply(&l, 1e6, &y).unwrap();
        assert!(far.norm() < 1e-5 * y.norm());
        let near = resolvent_apply(&l, 1e-4, &y).unwrap();
        let drazin = drazin_apply(&l, &ss.rho, &y).unwrap();
        let diff: f64 = near
            .as_slice()
            .iter()
            .zip(drazin.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-3 * drazin.norm(), "relative {}", diff / drazin.norm());
        assert!(matches!(resolvent_apply(&l, 0.0, &y), Err(Error::ZeroFrequency)));
    }

    #[test]
    fn two_level_spectrum() {
        let kappa = 0.8;
        let sd = spectral_decomposition(&decay_liouvillian(2, kappa)).unwrap();
        let mut re: Vec<f64> = sd.eigenvalues.iter().map(|l| l.re).collect();
        re.sort_by(|a, b| b.total_cmp(a));
        let expected = [0.0, -kappa / 2.0, -kappa / 2.0, -kappa];
        for (a, b) in re.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(sd.eigenvalues.iter().all(|l| l.im.abs() < 1e-12));
        assert_eq!(sd.zero_mode_count(1e-8), 1);
        let ss = sd.steady_state_vec();
        assert!((ss[0] - ONE).norm() < 1e-12);
    }

    #[test]
    fn spectral_guard() {
        let l = ppk(0.0, 1.0, 1.0, 9);
        assert!(matches!(
            spectral_decomposition_with_limit(&l, 64),
            Err(Error::TooLarge { dim2: 81, limit: 64 })
        ));
    }

    #[test]
    fn ppk_spectrum_is_stable() {
        let l = ppk(1.0, 1.0, 1.0, 8);
        let sd = spectral_decomposition(&l).unwrap();
        assert_eq!(sd.zero_mode_count(1e-8), 1);
        assert!(sd.spectral_gap_real() < 0.0);
        assert!(sd.biorthogonality_residual < 1e-8, "{}", sd.biorthogonality_residual);
    }

    #[test]
    fn propagator_matches_spectral_exponential() {
        let dim = 5;
        let l = ppk(0.3, 0.8, 0.7, dim);
        let sd = spectral_decomposition(&l).unwrap();
        let v = vectorize_state(&DensityMatrix::fock(dim, 2).unwrap());
        let t = 1.7;
        let spectral = sd.apply_fn(v.as_slice(), |lam, _| (lam * t).exp());
        let prop = Propagator::new(&l).propagate(&v, t).unwrap();
        let err = prop
            .as_slice()
            .iter()
            .zip(&spectral)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "err {err}");
    }
}
