//! Nonnegative least squares, Lawson-Hanson active-set variant.
//!
//! The design matrix is abstracted behind [`ColumnSource`] so callers can
//! either pass a dense matrix or synthesize columns on demand (the
//! prediction path regenerates kernel columns instead of materializing an
//! N x N Gram matrix). Restricting the candidate set is also supported:
//! for localized kernels, columns whose right-hand-side entry is at the
//! numerical floor can never enter the passive set at the solver tolerance.

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::SpdFactor;
use crate::error::{Error, Result};

pub trait ColumnSource: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn column(&self, j: usize, out: &mut [f64]);

    /// Dot product of column `j` with `r`; overridable to skip the copy.
    fn dot_column(&self, j: usize, r: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.nrows()];
        self.column(j, &mut buf);
        buf.iter().zip(r).map(|(a, b)| a * b).sum()
    }
}

pub struct DenseColumns<'a> {
    pub a: ArrayView2<'a, f64>,
}

impl ColumnSource for DenseColumns<'_> {
    fn nrows(&self) -> usize {
        self.a.nrows()
    }

    fn ncols(&self) -> usize {
        self.a.ncols()
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.a[[i, j]];
        }
    }

    fn dot_column(&self, j: usize, r: &[f64]) -> f64 {
        self.a.column(j).iter().zip(r).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    /// Dense solution vector (zeros off the support).
    pub x: Vec<f64>,
    /// || A x - b ||_2
    pub residual_norm: f64,
    pub support: Vec<usize>,
    pub iterations: usize,
}

struct Passive {
    idx: Vec<usize>,
    cols: Vec<Vec<f64>>,
}

impl Passive {
    fn least_squares(&self, b: &[f64]) -> Result<Vec<f64>> {
        let p = self.idx.len();
        let mut gram = ndarray::Array2::<f64>::zeros((p, p));
        for i in 0..p {
            for j in i..p {
                let d: f64 = self.cols[i].iter().zip(&self.cols[j]).map(|(a, b)| a * b).sum();
                gram[[i, j]] = d;
                gram[[j, i]] = d;
            }
        }
        let mut rhs: Vec<f64> = self
            .cols
            .iter()
            .map(|c| c.iter().zip(b).map(|(a, b)| a * b).sum())
            .collect();
        let f = SpdFactor::factor(gram)
            .map_err(|_| Error::numeric("nnls: passive-set normal equations are singular"))?;
        f.solve_vec(&mut rhs);
        Ok(rhs)
    }
}

/// Solves `argmin_x || A x - b ||^2` subject to `x >= 0`.
///
/// `tol` is the dual-feasibility tolerance relative to `max_j |A_j . b|`.
/// `candidates` limits which columns may enter the support (all when `None`).
pub fn nnls(
    src: &dyn ColumnSource,
    b: &[f64],
    tol: f64,
    candidates: Option<Vec<usize>>,
    max_outer: usize,
) -> Result<NnlsSolution> {
    let n = src.nrows();
    let m = src.ncols();
    if b.len() != n {
        return Err(Error::validation(format!(
            "nnls: rhs length {} does not match {} rows",
            b.len(),
            n
        )));
    }
    let cand: Vec<usize> = candidates.unwrap_or_else(|| (0..m).collect());
    if cand.iter().any(|&j| j >= m) {
        return Err(Error::validation("nnls: candidate index out of range"));
    }

    let mut x = vec![0.0f64; m];
    let mut passive = Passive { idx: Vec::new(), cols: Vec::new() };
    let mut in_passive = vec![false; m];
    let mut residual: Vec<f64> = b.to_vec();

    // gradient scale for the stopping rule
    let g0 = cand
        .par_iter()
        .map(|&j| src.dot_column(j, b).abs())
        .reduce(|| 0.0, f64::max);
    let w_tol = tol * g0.max(1e-300);

    let mut iterations = 0usize;
    loop {
        // dual vector over free candidates
        let grads: Vec<(usize, f64)> = cand
            .par_iter()
            .filter(|&&j| !in_passive[j])
            .map(|&j| (j, src.dot_column(j, &residual)))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for &(j, w) in &grads {
            if w > best.map_or(w_tol, |(_, bw)| bw) {
                best = Some((j, w));
            }
        }
        let Some((enter, _)) = best else { break };
        if iterations >= max_outer {
            break;
        }
        iterations += 1;

        let mut col = vec![0.0; n];
        src.column(enter, &mut col);
        passive.idx.push(enter);
        passive.cols.push(col);
        in_passive[enter] = true;

        // inner feasibility loop
        loop {
            let z = passive.least_squares(b)?;
            if z.iter().all(|&v| v > 0.0) {
                for (slot, &j) in passive.idx.iter().enumerate() {
                    x[j] = z[slot];
                }
                break;
            }
            // step toward z until the first coordinate hits zero
            let mut alpha = f64::INFINITY;
            for (slot, &zv) in z.iter().enumerate() {
                if zv <= 0.0 {
                    let xj = x[passive.idx[slot]];
                    let denom = xj - zv;
                    if denom > 0.0 {
                        alpha = alpha.min(xj / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            for (slot, &j) in passive.idx.iter().enumerate() {
                x[j] += alpha * (z[slot] - x[j]);
            }
            // drop coordinates pinned at zero
            let mut keep_idx = Vec::with_capacity(passive.idx.len());
            let mut keep_cols = Vec::with_capacity(passive.cols.len());
            for (slot, &j) in passive.idx.iter().enumerate() {
                if x[j] > 1e-14 * g0.max(1.0) {
                    keep_idx.push(j);
                    keep_cols.push(std::mem::take(&mut passive.cols[slot]));
                } else {
                    x[j] = 0.0;
                    in_passive[j] = false;
                }
            }
            passive.idx = keep_idx;
            passive.cols = keep_cols;
            if passive.idx.is_empty() {
                break;
            }
        }

        // refresh the residual from scratch (keeps error accumulation down)
        residual.copy_from_slice(b);
        for (slot, &j) in passive.idx.iter().enumerate() {
            let xj = x[j];
            for (r, c) in residual.iter_mut().zip(&passive.cols[slot]) {
                *r -= xj * c;
            }
        }
    }

    let residual_norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
    let mut support: Vec<usize> = passive.idx.clone();
    support.sort_unstable();
    Ok(NnlsSolution { x, residual_norm, support, iterations })
}
