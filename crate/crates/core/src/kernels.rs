//! Gaussian product kernels over observation windows and Gram matrix
//! assembly.
//!
//! Window kernels multiply per-step Gaussian factors, each raised to a
//! geometrically decaying weight so that the most distant step of the
//! window contributes with exponent `gamma` and the step nearest the
//! present contributes with full weight. Everything is evaluated in log
//! space: the log kernel is a weighted sum of per-step squared distances,
//! which also lets Gram assembly run through matrix products.

use faer::Mat;
use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, as_faer_mut};

pub const GRAM_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum KernelFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    Past,
    Future,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Gaussian bandwidth xi.
    pub bandwidth: f64,
    /// Decay gamma in (0, 1]: weight of the most distant window step.
    pub decay: f64,
    pub window_len: usize,
    pub per_step_dim: usize,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64, decay: f64, window_len: usize, per_step_dim: usize) -> Result<Self> {
        let spec = KernelSpec { family: KernelFamily::Gaussian, bandwidth, decay, window_len, per_step_dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::validation(format!(
                "kernel bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::validation(format!(
                "kernel decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.window_len == 0 || self.per_step_dim == 0 {
            return Err(Error::validation("kernel window length and step dimension must be positive"));
        }
        Ok(())
    }

    pub fn window_dim(&self) -> usize {
        self.window_len * self.per_step_dim
    }

    /// Per-step exponents in window storage order (oldest-first for pasts,
    /// nearest-first for futures). The present-adjacent step always has
    /// weight 1 and the most distant has weight `decay`.
    pub fn step_weights(&self, direction: Direction) -> Vec<f64> {
        let l = self.window_len;
        if l == 1 {
            return vec![1.0];
        }
        let denom = (l - 1) as f64;
        (0..l)
            .map(|j| {
                let offset = match direction {
                    Direction::Past => (l - 1 - j) as f64,
                    Direction::Future => j as f64,
                };
                self.decay.powf(offset / denom)
            })
            .collect()
    }
}

/// Gaussian kernel between two equally sized vectors,
/// `exp(-||a - b||^2 / (2 xi^2))`.
pub fn eval_scalar(a: &[f64], b: &[f64], bandwidth: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "kernel arguments have dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::validation("kernel bandwidth must be positive"));
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((-d2 / (2.0 * bandwidth * bandwidth)).exp())
}

/// Weighted product kernel between two windows.
pub fn eval_window(x1: &[f64], x2: &[f64], spec: &KernelSpec, direction: Direction) -> Result<f64> {
    spec.validate()?;
    let dim = spec.window_dim();
    if x1.len() != dim || x2.len() != dim {
        return Err(Error::validation(format!(
            "window kernel expects {} entries, got {} and {}",
            dim,
            x1.len(),
            x2.len()
        )));
    }
    let weights = spec.step_weights(direction);
    let d = spec.per_step_dim;
    let mut log_k = 0.0;
    for (step, w) in weights.iter().enumerate() {
        let mut d2 = 0.0;
        for c in 0..d {
            let diff = x1[step * d + c] - x2[step * d + c];
            d2 += diff * diff;
        }
        log_k -= w * d2 / (2.0 * spec.bandwidth * spec.bandwidth);
    }
    Ok(log_k.exp().clamp(GRAM_FLOOR, 1.0))
}

/// Symmetric kernel Gram matrix with unit diagonal and entries clamped to
/// `[GRAM_FLOOR, 1]`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: Array2<f64>,
    pub spec: KernelSpec,
    pub direction: Direction,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }
}

/// Assembles the Gram matrix of window samples (rows). The weighted sum of
/// per-step squared distances is accumulated through per-step Gramians:
/// `sum_j w_j ||a_j - b_j||^2 = nu_a + nu_b - 2 sum_j w_j <a_j, b_j>`.
/// The upper triangle is evaluated and mirrored.
pub fn gram(samples: ArrayView2<'_, f64>, spec: &KernelSpec, direction: Direction) -> Result<GramMatrix> {
    spec.validate()?;
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::validation("gram: no samples"));
    }
    if samples.ncols() != spec.window_dim() {
        return Err(Error::validation(format!(
            "gram: samples have {} columns, kernel expects {}",
            samples.ncols(),
            spec.window_dim()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("gram: samples contain non-finite values"));
    }

    let weights = spec.step_weights(direction);
    let d = spec.per_step_dim;
    let mut cross = Array2::<f64>::zeros((n, n));
    let mut nu = Array1::<f64>::zeros(n);
    {
        let mut block = Mat::<f64>::zeros(n, d);
        for (step, &w) in weights.iter().enumerate() {
            for i in 0..n {
                for c in 0..d {
                    block[(i, c)] = samples[[i, step * d + c]];
                }
            }
            linalg::gemm_into(as_faer_mut(&mut cross), block.as_ref(), block.transpose(), w, step > 0);
            for i in 0..n {
                let mut s = 0.0;
                for c in 0..d {
                    s += block[(i, c)] * block[(i, c)];
                }
                nu[i] += w * s;
            }
        }
    }

    let inv_two_xi2 = 1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
    {
        let nu_ref = &nu;
        let rows: Vec<_> = cross.axis_iter_mut(ndarray::Axis(0)).collect();
        rows.into_par_iter().enumerate().for_each(|(i, mut row)| {
            for k in i..n {
                let log_k = (2.0 * row[k] - nu_ref[i] - nu_ref[k]) * inv_two_xi2;
                row[k] = if k == i { 1.0 } else { log_k.min(0.0).exp().clamp(GRAM_FLOOR, 1.0) };
            }
        });
    }
    mirror_upper_to_lower(&mut cross);

    Ok(GramMatrix { entries: cross, spec: spec.clone(), direction })
}

/// Copies the strict upper triangle onto the lower one.
fn mirror_upper_to_lower(a: &mut Array2<f64>) {
    let n = a.nrows();
    struct Cell(*mut f64);
    unsafe impl Sync for Cell {}
    let base = Cell(a.as_mut_ptr());
    let ptr = &base;
    (0..n).into_par_iter().for_each(|i| {
        let p = ptr.0;
        for k in 0..i {
            // row i, col k <- row k, col i; rows are disjoint per task and
            // the source upper triangle is read-only in this phase
            unsafe { *p.add(i * n + k) = *p.add(k * n + i) };
        }
    });
}

/// Serializes a Gram matrix as little-endian f64, row major, preceded by an
/// 8-byte little-endian row count.
pub fn write_gram_binary(path: &std::path::Path, gram: &GramMatrix) -> Result<()> {
    use std::io::Write;
    let n = gram.n() as u64;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(&n.to_le_bytes())?;
    for v in gram.entries.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}
