//! Symmetric eigensolvers: dense for small problems, block-Krylov
//! Rayleigh-Ritz for the large ones where only the leading eigenpairs
//! are needed.

use faer::{Mat, MatMut, MatRef, Side};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gemm_into, SymOp};
use crate::error::{Error, Result};

/// Leading eigenpairs of a symmetric operator, eigenvalues descending,
/// eigenvectors orthonormal in the columns.
pub struct Eigs {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

/// Full dense decomposition, truncated to the top `k` pairs.
pub fn eigs_dense(a: MatRef<'_, f64>, k: usize) -> Result<Eigs> {
    let n = a.nrows();
    let k = k.min(n);
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::numeric(format!("symmetric eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    // faer returns nondecreasing order
    let values: Vec<f64> = (0..k).map(|i| s[n - 1 - i]).collect();
    let vectors = Mat::from_fn(n, k, |i, j| u[(i, n - 1 - j)]);
    Ok(Eigs { values, vectors })
}

/// Orthonormalizes the columns of `m` in place with modified Gram-Schmidt
/// (two passes). Returns the indices of columns that survived; columns with
/// negligible norm after projection are dropped.
fn mgs_orthonormalize(m: &mut Mat<f64>, against: Option<(&Mat<f64>, usize)>) -> Vec<usize> {
    let n = m.nrows();
    let b = m.ncols();
    // project out the accumulated basis, twice for stability
    if let Some((v, cols)) = against {
        for _ in 0..2 {
            let vk = v.as_ref().subcols(0, cols);
            let mut coef = Mat::<f64>::zeros(cols, b);
            gemm_into(coef.as_mut(), vk.transpose(), m.as_ref(), 1.0, false);
            let mut delta = Mat::<f64>::zeros(n, b);
            gemm_into(delta.as_mut(), vk, coef.as_ref(), 1.0, false);
            for j in 0..b {
                for i in 0..n {
                    m[(i, j)] -= delta[(i, j)];
                }
            }
        }
    }
    let mut kept = Vec::new();
    for j in 0..b {
        for _pass in 0..2 {
            for &p in &kept {
                let dot: f64 = (0..n).map(|i| m[(i, p)] * m[(i, j)]).sum();
                for i in 0..n {
                    m[(i, j)] -= dot * m[(i, p)];
                }
            }
        }
        let norm: f64 = (0..n).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let inv = 1.0 / norm;
            for i in 0..n {
                m[(i, j)] *= inv;
            }
            kept.push(j);
        }
    }
    kept
}

fn compact_columns(m: &Mat<f64>, kept: &[usize]) -> Mat<f64> {
    Mat::from_fn(m.nrows(), kept.len(), |i, j| m[(i, kept[j])])
}

/// Top-`k` eigenpairs of a symmetric operator by block-Krylov iteration with
/// full reorthogonalization and an explicit Rayleigh-Ritz projection.
///
/// The operator products of every finalized basis block are kept, so the
/// projected matrix and the Ritz residuals are exact and no extra operator
/// applications are needed for convergence checks. Deterministic for a fixed
/// seed.
pub fn eigs_topk(op: &dyn SymOp, k: usize, seed: u64, tol: f64) -> Result<Eigs> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::validation("eigensolver: empty operator"));
    }
    let k = k.min(n);
    let block = k.clamp(2, 16).min(n);
    let max_dim = n.min((4 * k + 24).max(96));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b65_6d5f_6569_6773);
    let mut v = Mat::<f64>::zeros(n, max_dim);
    let mut p = Mat::<f64>::zeros(n, max_dim);
    let mut cols = 0usize;

    let mut b = Mat::<f64>::from_fn(n, block, |_, _| rng.random::<f64>() - 0.5);
    let mut best: Option<(Vec<f64>, Mat<f64>)> = None;

    while cols < max_dim {
        let kept = mgs_orthonormalize(&mut b, if cols > 0 { Some((&v, cols)) } else { None });
        if kept.is_empty() {
            // Krylov space exhausted; restart with fresh randomness
            b = Mat::from_fn(n, block, |_, _| rng.random::<f64>() - 0.5);
            let kept2 = mgs_orthonormalize(&mut b, Some((&v, cols)));
            if kept2.is_empty() {
                break;
            }
            b = compact_columns(&b, &kept2);
        } else if kept.len() < b.ncols() {
            b = compact_columns(&b, &kept);
        }
        let bw = b.ncols().min(max_dim - cols);
        let b_act = b.as_ref().subcols(0, bw);

        // finalize block: copy into V and record S*V exactly
        for j in 0..bw {
            for i in 0..n {
                v[(i, cols + j)] = b_act[(i, j)];
            }
        }
        let mut prod = Mat::<f64>::zeros(n, bw);
        op.apply_block(b_act, prod.as_mut());
        for j in 0..bw {
            for i in 0..n {
                p[(i, cols + j)] = prod[(i, j)];
            }
        }
        cols += bw;

        // Rayleigh-Ritz on the accumulated space
        let vk = v.as_ref().subcols(0, cols);
        let pk = p.as_ref().subcols(0, cols);
        let mut h = Mat::<f64>::zeros(cols, cols);
        gemm_into(h.as_mut(), vk.transpose(), pk, 1.0, false);
        for i in 0..cols {
            for j in 0..i {
                let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        let ritz = eigs_dense(h.as_ref(), cols)?;
        let kk = k.min(cols);

        // exact residuals: || (P - theta V) u ||
        let mut u_top = Mat::<f64>::zeros(cols, kk);
        for j in 0..kk {
            for i in 0..cols {
                u_top[(i, j)] = ritz.vectors[(i, j)];
            }
        }
        let mut xv = Mat::<f64>::zeros(n, kk);
        gemm_into(xv.as_mut(), vk, u_top.as_ref(), 1.0, false);
        let mut xp = Mat::<f64>::zeros(n, kk);
        gemm_into(xp.as_mut(), pk, u_top.as_ref(), 1.0, false);
        let mut worst = 0.0f64;
        for j in 0..kk {
            let theta = ritz.values[j];
            let mut r2 = 0.0;
            for i in 0..n {
                let r = xp[(i, j)] - theta * xv[(i, j)];
                r2 += r * r;
            }
            worst = worst.max(r2.sqrt());
        }
        best = Some((ritz.values[..kk].to_vec(), xv));
        if (worst <= tol && cols >= k) || cols >= n {
            break;
        }

        // next Krylov block seeds from the latest operator products
        b = prod;
    }

    let (values, vectors) = best.ok_or_else(|| Error::numeric("eigensolver: no Ritz pairs produced"))?;
    Ok(Eigs { values, vectors })
}

/// Convenience: multiplies `vectors` by the operator once; used by callers
/// that want to verify residuals independently.
pub fn residual_norms(op: &dyn SymOp, eigs: &Eigs) -> Vec<f64> {
    let n = op.dim();
    let k = eigs.values.len();
    let mut out = Mat::<f64>::zeros(n, k);
    op.apply_block(eigs.vectors.as_ref(), out.as_mut());
    (0..k)
        .map(|j| {
            let mut r2 = 0.0;
            for i in 0..n {
                let r = out[(i, j)] - eigs.values[j] * eigs.vectors[(i, j)];
                r2 += r * r;
            }
            r2.sqrt()
        })
        .collect()
}

#[allow(unused)]
fn unused_matmut_lint(_: MatMut<'_, f64>) {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseSym;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn gaussian_sym(n: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| {
            (-((i as f64 - j as f64).powi(2)) / scale).exp()
        })
    }

    #[test]
    fn krylov_matches_dense() {
        let a = gaussian_sym(300, 30.0);
        let dense = eigs_dense(crate::linalg::as_faer(a.view()), 8).unwrap();
        let op = DenseSym { a: a.view() };
        let kry = eigs_topk(&op, 8, 7, 1e-12).unwrap();
        for j in 0..8 {
            assert_abs_diff_eq!(dense.values[j], kry.values[j], epsilon = 1e-9);
        }
        // eigenvectors match up to sign
        for j in 0..8 {
            let mut dot = 0.0;
            for i in 0..300 {
                dot += dense.vectors[(i, j)] * kry.vectors[(i, j)];
            }
            assert_abs_diff_eq!(dot.abs(), 1.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn krylov_handles_degenerate_pairs() {
        // two-block structure with an exactly repeated leading eigenvalue
        let n = 120;
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if (i < n / 2) == (j < n / 2) {
                    a[[i, j]] = 1.0;
                }
            }
        }
        let op = DenseSym { a: a.view() };
        let res = eigs_topk(&op, 4, 11, 1e-12).unwrap();
        assert_abs_diff_eq!(res.values[0], 60.0, epsilon = 1e-8);
        assert_abs_diff_eq!(res.values[1], 60.0, epsilon = 1e-8);
        assert!(res.values[2].abs() < 1e-8);
    }

    #[test]
    fn krylov_exact_when_space_saturates() {
        let a = gaussian_sym(24, 5.0);
        let dense = eigs_dense(crate::linalg::as_faer(a.view()), 24).unwrap();
        let op = DenseSym { a: a.view() };
        let kry = eigs_topk(&op, 24, 3, 1e-13).unwrap();
        for j in 0..24 {
            assert_abs_diff_eq!(dense.values[j], kry.values[j], epsilon = 1e-9);
        }
    }
}
