//! Dense linear algebra kernels shared by the estimation pipeline.
//!
//! Matrices cross the public API as `ndarray` arrays; internally the heavy
//! operations go through `faer`. Symmetric matrices can be viewed through
//! either convention unchanged, which is what makes the zero-copy interop
//! below sound: every square matrix handed to `faer` here is symmetric at
//! the time of the call (a Cholesky factor is only ever read back through
//! the same view it was written through).

pub mod eigh;
pub mod nnls;

use std::sync::OnceLock;

use dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{self, LltRegularization};
use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use faer_ext::IntoFaer;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

static THREADS: OnceLock<usize> = OnceLock::new();

/// Number of worker threads, capped by the `KEM_THREADS` environment
/// variable. First call installs the global faer/rayon pools.
pub fn thread_count() -> usize {
    *THREADS.get_or_init(|| {
        let n = std::env::var("KEM_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
        faer::set_global_parallelism(if n == 1 { Par::Seq } else { Par::rayon(n) });
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        n
    })
}

pub fn par() -> Par {
    let n = thread_count();
    if n == 1 {
        Par::Seq
    } else {
        Par::rayon(n)
    }
}

pub fn as_faer(a: ArrayView2<'_, f64>) -> MatRef<'_, f64> {
    a.into_faer()
}

pub fn as_faer_mut<'a>(a: &'a mut Array2<f64>) -> MatMut<'a, f64> {
    let v: ArrayViewMut2<'a, f64> = a.view_mut();
    v.into_faer()
}

/// dst = alpha * a * b, or += when `accumulate`.
pub fn gemm_into(
    dst: MatMut<'_, f64>,
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    alpha: f64,
    accumulate: bool,
) {
    let beta = if accumulate { Accum::Add } else { Accum::Replace };
    matmul(dst, beta, a, b, alpha, par());
}

/// y = a * x for ndarray operands (x, y treated as column blocks).
pub fn matmul_nd(a: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.nrows(), x.ncols()));
    gemm_into(as_faer_mut(&mut out), as_faer(a), as_faer(x), 1.0, false);
    out
}

/// Cholesky factor of a symmetric positive-definite matrix, factored in
/// place (the input buffer is consumed and reused for the factor).
pub struct SpdFactor {
    data: Array2<f64>,
}

impl SpdFactor {
    /// Factors `a` (symmetric positive definite) in place.
    pub fn factor(mut a: Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::validation("cholesky: matrix must be square"));
        }
        let parallelism = par();
        let params = Default::default();
        let mut buf = MemBuffer::new(factor::cholesky_in_place_scratch::<f64>(
            n,
            parallelism,
            params,
        ));
        let stack = MemStack::new(&mut buf);
        factor::cholesky_in_place(
            as_faer_mut(&mut a),
            LltRegularization::default(),
            parallelism,
            stack,
            params,
        )
        .map_err(|_| Error::numeric("cholesky factorization failed: matrix not positive definite"))?;
        Ok(SpdFactor { data: a })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    fn l(&self) -> MatRef<'_, f64> {
        as_faer(self.data.view())
    }

    /// Solves A x = rhs in place for a block of right-hand sides.
    ///
    /// The triangular sweeps run sequentially: faer 0.24's parallel
    /// triangular solve corrupts wide right-hand sides (verified against
    /// the sequential path), and the sweeps are memory-bound anyway.
    pub fn solve_in_place(&self, rhs: MatMut<'_, f64>) {
        let mut rhs = rhs;
        triangular_solve::solve_lower_triangular_in_place(self.l(), rhs.rb_mut(), Par::Seq);
        triangular_solve::solve_upper_triangular_in_place(self.l().transpose(), rhs, Par::Seq);
    }

    pub fn solve_vec(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n());
        let m = MatMut::from_column_major_slice_mut(rhs, self.n(), 1);
        self.solve_in_place(m);
    }

    /// Solves A X = B for an ndarray right-hand side, returning X.
    pub fn solve_nd(&self, rhs: &ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.n();
        let k = rhs.ncols();
        // column-major scratch so the triangular solves stream contiguously
        let mut scratch = Mat::<f64>::from_fn(n, k, |i, j| rhs[[i, j]]);
        self.solve_in_place(scratch.as_mut());
        Array2::from_shape_fn((n, k), |(i, j)| scratch[(i, j)])
    }
}

use faer::prelude::ReborrowMut;

/// Symmetric linear operator applied to blocks of vectors.
pub trait SymOp: Sync {
    fn dim(&self) -> usize;
    /// y = S x, column blocks.
    fn apply_block(&self, x: MatRef<'_, f64>, y: MatMut<'_, f64>);

    /// S · 1 (row sums for an explicitly symmetric operator).
    fn row_sums(&self) -> Vec<f64> {
        let n = self.dim();
        let ones = Mat::<f64>::from_fn(n, 1, |_, _| 1.0);
        let mut out = Mat::<f64>::zeros(n, 1);
        self.apply_block(ones.as_ref(), out.as_mut());
        (0..n).map(|i| out[(i, 0)]).collect()
    }
}

/// Dense symmetric matrix as an operator.
pub struct DenseSym<'a> {
    pub a: ArrayView2<'a, f64>,
}

impl SymOp for DenseSym<'_> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply_block(&self, x: MatRef<'_, f64>, y: MatMut<'_, f64>) {
        gemm_into(y, as_faer(self.a.view()), x, 1.0, false);
    }
}

pub(crate) fn faer_to_nd(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}
