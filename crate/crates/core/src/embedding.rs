//! Conditional-distribution embedding: the regularized weight system
//! `(G^X + eps I) Omega = G^X`, the causal-state Gram matrix
//! `G^S = Omega^T G^Y Omega`, and the MMD two-sample statistic.

use faer::{Mat, MatMut, MatRef};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{eval_window, Direction, GramMatrix, KernelSpec};
use crate::linalg::{self, as_faer, as_faer_mut, SpdFactor, SymOp};

/// Solution of the full-matrix conditional weight system; column `j` holds
/// the weight vector of training past `x_j`.
#[derive(Debug, Clone)]
pub struct ConditionalWeights {
    pub omega: Array2<f64>,
    pub epsilon: f64,
}

impl ConditionalWeights {
    /// Relative Frobenius residual of `(G^X + eps I) Omega = G^X`.
    pub fn residual(&self, gx: &GramMatrix) -> f64 {
        let n = gx.n();
        let mut lhs = linalg::matmul_nd(gx.entries.view(), self.omega.view());
        for i in 0..n {
            for j in 0..n {
                lhs[[i, j]] += self.epsilon * self.omega[[i, j]];
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += (lhs[[i, j]] - gx.entries[[i, j]]).powi(2);
                den += gx.entries[[i, j]].powi(2);
            }
        }
        (num / den).sqrt()
    }
}

/// Solves `(G^X + eps I) Omega = G^X` for all right-hand sides at once via
/// a symmetric positive-definite factorization.
pub fn solve_weights(gx: &GramMatrix, epsilon: f64) -> Result<ConditionalWeights> {
    if !(epsilon > 0.0) {
        return Err(Error::validation(format!(
            "regularization epsilon must be positive, got {epsilon}"
        )));
    }
    let n = gx.n();
    let mut a = gx.entries.clone();
    for i in 0..n {
        a[[i, i]] += epsilon;
    }
    let factor = SpdFactor::factor(a)?;
    let omega = factor.solve_nd(&gx.entries.view());
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("conditional weights are not finite"));
    }
    Ok(ConditionalWeights { omega, epsilon })
}

/// Gram matrix of the estimated causal states,
/// `G^S = Omega^T G^Y Omega`, symmetrized after the products.
#[derive(Debug, Clone)]
pub struct StateGram {
    pub entries: Array2<f64>,
    pub epsilon: f64,
}

impl StateGram {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }
}

pub fn state_gram(weights: &ConditionalWeights, gy: &GramMatrix) -> Result<StateGram> {
    let n = weights.omega.nrows();
    if gy.n() != n {
        return Err(Error::validation(format!(
            "state_gram: Omega is {n} x {n} but G^Y is {} x {}",
            gy.n(),
            gy.n()
        )));
    }
    let tmp = linalg::matmul_nd(gy.entries.view(), weights.omega.view());
    let mut gs = Array2::<f64>::zeros((n, n));
    {
        let omega_t = weights.omega.t();
        let mut dst = as_faer_mut(&mut gs);
        linalg::gemm_into(dst.rb_mut(), as_faer(omega_t), as_faer(tmp.view()), 1.0, false);
    }
    // control the asymmetry accumulated by finite-precision solves
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (gs[[i, j]] + gs[[j, i]]);
            gs[[i, j]] = s;
            gs[[j, i]] = s;
        }
    }
    Ok(StateGram { entries: gs, epsilon: weights.epsilon })
}

use faer::prelude::ReborrowMut;

/// The causal-state Gram matrix as an implicit symmetric operator.
///
/// With `A = G^X + eps I`, the weight matrix is `Omega = A^{-1} G^X
/// = I - eps A^{-1}`, which is symmetric, so
/// `G^S v = Omega (G^Y (Omega v))` needs only the Cholesky factor of `A`
/// and `G^Y`. This avoids materializing two N x N products on the large
/// runs; the dense [`state_gram`] route remains for moderate N.
pub struct ImplicitStateGram {
    chol: SpdFactor,
    gy: Array2<f64>,
    epsilon: f64,
}

impl ImplicitStateGram {
    /// Consumes `gx` (its buffer becomes the Cholesky factor).
    pub fn new(gx: GramMatrix, gy: GramMatrix, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::validation("regularization epsilon must be positive"));
        }
        if gx.n() != gy.n() {
            return Err(Error::validation("gram matrices must have matching sizes"));
        }
        let mut a = gx.entries;
        for i in 0..a.nrows() {
            a[[i, i]] += epsilon;
        }
        let chol = SpdFactor::factor(a)?;
        Ok(ImplicitStateGram { chol, gy: gy.entries, epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// u = (I - eps A^{-1}) x
    fn apply_omega(&self, x: MatRef<'_, f64>, out: MatMut<'_, f64>) {
        let mut out = out;
        let mut t = Mat::<f64>::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                t[(i, j)] = x[(i, j)];
            }
        }
        self.chol.solve_in_place(t.as_mut());
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                out[(i, j)] = x[(i, j)] - self.epsilon * t[(i, j)];
            }
        }
    }
}

impl SymOp for ImplicitStateGram {
    fn dim(&self) -> usize {
        self.gy.nrows()
    }

    fn apply_block(&self, x: MatRef<'_, f64>, y: MatMut<'_, f64>) {
        let n = self.dim();
        let b = x.ncols();
        let mut u = Mat::<f64>::zeros(n, b);
        self.apply_omega(x, u.as_mut());
        let mut w = Mat::<f64>::zeros(n, b);
        linalg::gemm_into(w.as_mut(), as_faer(self.gy.view()), u.as_ref(), 1.0, false);
        self.apply_omega(w.as_ref(), y);
    }
}

/// Squared maximum mean discrepancy between two sample sets under the
/// window kernel (biased V-statistic, clamped to be nonnegative).
pub fn mmd2(
    samples_a: ArrayView2<'_, f64>,
    samples_b: ArrayView2<'_, f64>,
    spec: &KernelSpec,
    direction: Direction,
) -> Result<f64> {
    spec.validate()?;
    let (na, nb) = (samples_a.nrows(), samples_b.nrows());
    if na == 0 || nb == 0 {
        return Err(Error::validation("mmd2: both sample sets must be non-empty"));
    }
    let dim = spec.window_dim();
    if samples_a.ncols() != dim || samples_b.ncols() != dim {
        return Err(Error::validation(format!(
            "mmd2: expected {dim} columns, got {} and {}",
            samples_a.ncols(),
            samples_b.ncols()
        )));
    }
    let mean_block = |a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>| -> Result<f64> {
        let total: f64 = (0..a.nrows())
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                let ri = a.row(i);
                let ri = ri.as_slice().unwrap();
                for j in 0..b.nrows() {
                    let rj = b.row(j);
                    acc += eval_window(ri, rj.as_slice().unwrap(), spec, direction).unwrap();
                }
                acc
            })
            .sum();
        Ok(total / (a.nrows() as f64 * b.nrows() as f64))
    };
    let aa = mean_block(samples_a, samples_a)?;
    let bb = mean_block(samples_b, samples_b)?;
    let ab = mean_block(samples_a, samples_b)?;
    let v = aa + bb - 2.0 * ab;
    Ok(if v < 0.0 { 0.0 } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, KernelSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn gram_of(points: &Array2<f64>, xi: f64) -> GramMatrix {
        let spec = KernelSpec::gaussian(xi, 1.0, 1, points.ncols()).unwrap();
        gram(points.view(), &spec, Direction::Past).unwrap()
    }

    #[test]
    fn identity_gram_scales_by_regularization() {
        // orthogonal limit: G = I implies Omega = I / (1 + eps)
        let spec = KernelSpec::gaussian(1.0, 1.0, 1, 1).unwrap();
        let g = GramMatrix {
            entries: Array2::eye(4),
            spec,
            direction: Direction::Past,
        };
        let w = solve_weights(&g, 0.5).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 / 1.5 } else { 0.0 };
                assert_abs_diff_eq!(w.omega[[i, j]], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn well_separated_points_approach_identity_weights() {
        let points = array![[0.0], [100.0], [200.0]];
        let g = gram_of(&points, 1.0);
        let w = solve_weights(&g, 1e-10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(w.omega[[i, j]], expect, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn duplicated_sample_hand_solve() {
        // all-ones 2x2 Gram with eps = 1: every Omega entry is 1/3
        let spec = KernelSpec::gaussian(1.0, 1.0, 1, 1).unwrap();
        let g = GramMatrix {
            entries: array![[1.0, 1.0], [1.0, 1.0]],
            spec,
            direction: Direction::Past,
        };
        let w = solve_weights(&g, 1.0).unwrap();
        for v in w.omega.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn residual_is_tiny() {
        let points = array![[0.0], [0.7], [1.1], [3.0], [3.1]];
        let g = gram_of(&points, 1.0);
        let w = solve_weights(&g, 1e-3).unwrap();
        assert!(w.residual(&g) <= 1e-8, "residual {}", w.residual(&g));
    }

    #[test]
    fn state_gram_identity_weights_pass_through() {
        let points = array![[0.0], [1.0], [2.5]];
        let gy = gram_of(&points, 1.0);
        let w = ConditionalWeights { omega: Array2::eye(3), epsilon: 1e-3 };
        let gs = state_gram(&w, &gy).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(gs.entries[[i, j]], gy.entries[[i, j]], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn state_gram_matches_triple_loop() {
        // N = 3 case against brute-force evaluation of
        // sum_ab omega_a(x_i) omega_b(x_j) k^Y(y_a, y_b)
        let x_points = array![[0.0], [1.0], [2.0]];
        let y_points = array![[0.5], [1.5], [0.0]];
        let gx = gram_of(&x_points, 1.0);
        let gy = gram_of(&y_points, 1.0);
        let w = solve_weights(&gx, 1e-2).unwrap();
        let gs = state_gram(&w, &gy).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut direct = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        direct += w.omega[[a, i]] * w.omega[[b, j]] * gy.entries[[a, b]];
                    }
                }
                assert_abs_diff_eq!(gs.entries[[i, j]], direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn equal_pasts_share_state_gram_rows() {
        let x_points = array![[0.0], [0.0], [5.0]];
        let y_points = array![[1.0], [2.0], [3.0]];
        let gx = gram_of(&x_points, 1.0);
        let gy = gram_of(&y_points, 1.0);
        let w = solve_weights(&gx, 1e-3).unwrap();
        let gs = state_gram(&w, &gy).unwrap();
        assert_abs_diff_eq!(gs.entries[[0, 0]], gs.entries[[1, 1]], epsilon = 1e-12);
        assert_abs_diff_eq!(gs.entries[[0, 0]], gs.entries[[0, 1]], epsilon = 1e-12);
    }

    #[test]
    fn implicit_operator_matches_dense_route() {
        let x_points = array![[0.0], [0.4], [1.1], [2.0], [2.2]];
        let y_points = array![[1.0], [0.2], [0.9], [1.4], [2.0]];
        let eps = 1e-2;
        let gx = gram_of(&x_points, 1.0);
        let gy = gram_of(&y_points, 1.0);
        let w = solve_weights(&gx, eps).unwrap();
        let gs = state_gram(&w, &gy).unwrap();

        let op = ImplicitStateGram::new(gx, gy, eps).unwrap();
        let probe = Array2::from_shape_fn((5, 2), |(i, j)| (i + 2 * j) as f64 / 3.0);
        let mut out = Mat::<f64>::zeros(5, 2);
        op.apply_block(as_faer(probe.view()), out.as_mut());
        let dense_out = linalg::matmul_nd(gs.entries.view(), probe.view());
        for i in 0..5 {
            for j in 0..2 {
                assert_abs_diff_eq!(out[(i, j)], dense_out[[i, j]], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn mmd_zero_on_identical_multisets() {
        let spec = KernelSpec::gaussian(1.0, 1.0, 1, 1).unwrap();
        let a = array![[0.0], [1.0], [2.0]];
        assert_eq!(mmd2(a.view(), a.view(), &spec, Direction::Past).unwrap(), 0.0);
    }

    #[test]
    fn mmd_hand_value_two_singletons() {
        // A = {0}, B = {1}: 1 + 1 - 2 e^{-1/2}
        let spec = KernelSpec::gaussian(1.0, 1.0, 1, 1).unwrap();
        let a = array![[0.0]];
        let b = array![[1.0]];
        let v = mmd2(a.view(), b.view(), &spec, Direction::Past).unwrap();
        assert_abs_diff_eq!(v, 2.0 - 2.0 * (-0.5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.786938680574733, epsilon = 1e-9);
    }

    #[test]
    fn mmd_permutation_invariant_and_symmetric() {
        let spec = KernelSpec::gaussian(0.8, 1.0, 1, 1).unwrap();
        let a = array![[0.1], [0.5], [0.9]];
        let a_perm = array![[0.9], [0.1], [0.5]];
        let b = array![[2.0], [2.2]];
        let v1 = mmd2(a.view(), b.view(), &spec, Direction::Past).unwrap();
        let v2 = mmd2(a_perm.view(), b.view(), &spec, Direction::Past).unwrap();
        let v3 = mmd2(b.view(), a.view(), &spec, Direction::Past).unwrap();
        assert_abs_diff_eq!(v1, v2, epsilon = 1e-14);
        assert_abs_diff_eq!(v1, v3, epsilon = 1e-14);
        assert!(v1 >= 0.0);
    }
}
