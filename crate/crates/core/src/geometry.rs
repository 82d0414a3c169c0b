//! Diffusion-map geometry of the causal-state set: density-normalized
//! spectral decomposition of the state similarity matrix, spectral-gap
//! detection, limit density, and state self-information.

use faer::{Mat, MatMut, MatRef};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{self, eigh, SymOp};

/// Reduced spectral basis of the causal-state set.
///
/// Column 0 of `psi` is the constant vector 1, column 0 of `phi` is the
/// stationary (limit) density; nontrivial right eigenvectors are scaled to
/// unit norm in L2 of the limit density, which makes
/// `psi^T phi = I` hold for the stored columns.
#[derive(Debug, Clone)]
pub struct DiffusionBasis {
    /// Length M+1, descending, `eigenvalues[0] = 1`.
    pub eigenvalues: Vec<f64>,
    /// N x (M+1) right eigenvectors of the Markov-normalized similarity.
    pub psi: Array2<f64>,
    /// N x (M+1) left eigenvectors (densities).
    pub phi: Array2<f64>,
    /// Computed eigenvalues beyond the retained components (at or below
    /// the numerical floor, or truncated by the residual threshold),
    /// clamped to be nonnegative. Kept for spectrum reporting.
    pub dropped: Vec<f64>,
}

impl DiffusionBasis {
    pub fn n(&self) -> usize {
        self.psi.nrows()
    }

    /// Number of retained nontrivial components.
    pub fn m(&self) -> usize {
        self.eigenvalues.len() - 1
    }

    /// Diffusion coordinates `lambda_m psi_{i,m}`, m = 1..=M (N x M).
    pub fn coords(&self) -> Array2<f64> {
        let n = self.n();
        let m = self.m();
        Array2::from_shape_fn((n, m), |(i, c)| self.eigenvalues[c + 1] * self.psi[[i, c + 1]])
    }

    /// Raw nontrivial right-eigenvector coordinates `psi_{i,m}` (N x M).
    pub fn psi_coords(&self) -> Array2<f64> {
        let n = self.n();
        let m = self.m();
        Array2::from_shape_fn((n, m), |(i, c)| self.psi[[i, c + 1]])
    }

    /// Retained eigenvalues followed by the dropped tail.
    pub fn spectrum_with_tail(&self) -> Vec<f64> {
        let mut out = self.eigenvalues.clone();
        out.extend_from_slice(&self.dropped);
        out
    }

    /// Verifies the normalization conventions and bi-orthogonality.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n();
        let k = self.eigenvalues.len();
        if (self.eigenvalues[0] - 1.0).abs() > 1e-9 {
            return Err(Error::numeric(format!(
                "trivial eigenvalue is {}, expected 1",
                self.eigenvalues[0]
            )));
        }
        for w in self.eigenvalues.windows(2) {
            if w[1] > w[0] + 1e-12 {
                return Err(Error::numeric("eigenvalues are not sorted descending"));
            }
        }
        for (m, &l) in self.eigenvalues.iter().enumerate().skip(1) {
            if !(l > 0.0) || l >= 1.0 {
                return Err(Error::numeric(format!(
                    "nontrivial eigenvalue {m} = {l} outside (0, 1)"
                )));
            }
        }
        if self.psi.column(0).iter().any(|&v| (v - 1.0).abs() > 1e-9) {
            return Err(Error::numeric("trivial right eigenvector is not constant 1"));
        }
        let phi0_sum: f64 = self.phi.column(0).sum();
        if (phi0_sum - 1.0).abs() > 1e-10 {
            return Err(Error::numeric(format!("limit density sums to {phi0_sum}")));
        }
        for a in 0..k {
            for b in 0..k {
                let dot: f64 = (0..n).map(|i| self.psi[[i, a]] * self.phi[[i, b]]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-8 {
                    return Err(Error::numeric(format!(
                        "bi-orthogonality violated: <psi_{a}, phi_{b}> = {dot}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// State similarity input: either a materialized Gram matrix or an
/// implicit symmetric operator for the large runs.
pub enum StateSimilarity<'a> {
    Dense(ArrayView2<'a, f64>),
    Operator(&'a dyn SymOp),
}

impl StateSimilarity<'_> {
    fn dim(&self) -> usize {
        match self {
            StateSimilarity::Dense(a) => a.nrows(),
            StateSimilarity::Operator(op) => op.dim(),
        }
    }

    fn row_sums(&self) -> Vec<f64> {
        match self {
            StateSimilarity::Dense(a) => a.rows().into_iter().map(|r| r.sum()).collect(),
            StateSimilarity::Operator(op) => op.row_sums(),
        }
    }

    fn apply_scaled(&self, scale: &[f64], x: MatRef<'_, f64>, y: MatMut<'_, f64>) {
        // y = S_scaled x with S_scaled = diag(scale) S diag(scale)
        let n = self.dim();
        let b = x.ncols();
        let mut u = Mat::<f64>::zeros(n, b);
        for j in 0..b {
            for i in 0..n {
                u[(i, j)] = scale[i] * x[(i, j)];
            }
        }
        let mut y = y;
        match self {
            StateSimilarity::Dense(a) => {
                linalg::gemm_into(y.rb_mut(), linalg::as_faer(a.view()), u.as_ref(), 1.0, false)
            }
            StateSimilarity::Operator(op) => op.apply_block(u.as_ref(), y.rb_mut()),
        }
        for j in 0..b {
            for i in 0..n {
                y[(i, j)] *= scale[i];
            }
        }
    }
}

use faer::prelude::ReborrowMut;

struct NormalizedOp<'a, 'b> {
    sim: &'a StateSimilarity<'b>,
    /// 1 / (q_i sqrt(d_i))
    scale: Vec<f64>,
}

impl SymOp for NormalizedOp<'_, '_> {
    fn dim(&self) -> usize {
        self.sim.dim()
    }

    fn apply_block(&self, x: MatRef<'_, f64>, y: MatMut<'_, f64>) {
        self.sim.apply_scaled(&self.scale, x, y);
    }
}

const DENSE_EIG_LIMIT: usize = 1200;
/// Nontrivial eigenvalues at or below this are eigensolver noise
/// (the leading eigenvalue sets the scale at exactly 1).
const EIG_FLOOR: f64 = 1e-12;

/// Builds the diffusion basis from the state similarity.
///
/// Density normalization uses exponent one (entry (i,j) divided by
/// `q_i q_j` with `q` the row sums), removing the sampling density; the
/// row-normalized Markov matrix is then decomposed through its symmetric
/// conjugate `D^{-1/2} K D^{-1/2}`, so eigenvalues are provably real.
/// `theta = 0` retains `m_max` components; a positive `theta` truncates
/// where the residual diffusion distance over sampled index pairs drops
/// below it.
pub fn diffusion_basis(
    sim: StateSimilarity<'_>,
    m_max: usize,
    theta: f64,
    seed: u64,
) -> Result<DiffusionBasis> {
    let n = sim.dim();
    if n < 2 {
        return Err(Error::validation("diffusion basis needs at least two samples"));
    }
    if m_max + 1 > n {
        return Err(Error::validation(format!(
            "m_max = {m_max} must be below the sample count {n}"
        )));
    }
    if theta < 0.0 {
        return Err(Error::validation("theta must be nonnegative"));
    }

    // density normalization (exponent one)
    let q = sim.row_sums();
    if q.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::numeric(
            "degenerate input: similarity row sums must be finite and positive",
        ));
    }
    // row sums of the normalized kernel: d_i = (1/q_i) sum_j G_ij / q_j
    let qinv = Mat::<f64>::from_fn(n, 1, |i, _| 1.0 / q[i]);
    let mut u = Mat::<f64>::zeros(n, 1);
    match &sim {
        StateSimilarity::Dense(a) => {
            linalg::gemm_into(u.as_mut(), linalg::as_faer(a.view()), qinv.as_ref(), 1.0, false)
        }
        StateSimilarity::Operator(op) => op.apply_block(qinv.as_ref(), u.as_mut()),
    }
    let d: Vec<f64> = (0..n).map(|i| u[(i, 0)] / q[i]).collect();
    if d.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::numeric("degenerate input: normalized row sums are not positive"));
    }

    // spectral decomposition of the symmetric conjugate
    let k = m_max + 1;
    let scale: Vec<f64> = (0..n).map(|i| 1.0 / (q[i] * d[i].sqrt())).collect();
    let eigs = match &sim {
        StateSimilarity::Dense(a) if n <= DENSE_EIG_LIMIT => {
            let conj = Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] * scale[i] * scale[j]);
            eigh::eigs_dense(linalg::as_faer(conj.view()), k)?
        }
        _ => {
            let op = NormalizedOp { sim: &sim, scale: scale.clone() };
            eigh::eigs_topk(&op, k, seed, 1e-12)?
        }
    };

    if (eigs.values[0] - 1.0).abs() > 1e-6 {
        return Err(Error::numeric(format!(
            "leading eigenvalue is {}, expected 1; eigensolver did not converge",
            eigs.values[0]
        )));
    }
    let mut vectors = eigs.vectors;
    let values = eigs.values;

    // The trivial eigenvector of the conjugate is known in closed form.
    // When lambda_1 sits within eigensolver tolerance of 1 (nearly
    // disconnected similarity graphs) the solver returns an arbitrary
    // rotation of the degenerate subspace, so project the exact trivial
    // direction out of every other vector and restore orthonormality.
    let d_total: f64 = d.iter().sum();
    {
        let v0: Vec<f64> = d.iter().map(|di| (di / d_total).sqrt()).collect();
        let k_have = vectors.ncols();
        for a in 1..k_have {
            for _ in 0..2 {
                let mut coef = 0.0;
                for i in 0..n {
                    coef += v0[i] * vectors[(i, a)];
                }
                for i in 0..n {
                    vectors[(i, a)] -= coef * v0[i];
                }
                for b in 1..a {
                    let mut c2 = 0.0;
                    for i in 0..n {
                        c2 += vectors[(i, b)] * vectors[(i, a)];
                    }
                    for i in 0..n {
                        vectors[(i, a)] -= c2 * vectors[(i, b)];
                    }
                }
            }
            let norm: f64 = (0..n).map(|i| vectors[(i, a)].powi(2)).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for i in 0..n {
                    vectors[(i, a)] /= norm;
                }
            }
        }
        for i in 0..n {
            vectors[(i, 0)] = v0[i];
        }
    }

    // map back: psi = D^{-1/2} v, phi = D^{1/2} v, then rescale so that
    // psi_0 = 1 and phi_0 sums to 1 (s = sqrt(sum d) gives both at once
    // and normalizes nontrivial psi in L2 of the limit density)
    let s = d_total.sqrt();
    let mut eigenvalues = vec![1.0f64.min(values[0])];
    let mut psi = Array2::<f64>::zeros((n, k));
    let mut phi = Array2::<f64>::zeros((n, k));

    // trivial pair, pinned exactly to the conventions
    for i in 0..n {
        psi[[i, 0]] = 1.0;
        phi[[i, 0]] = d[i] / d_total;
    }

    let mut retained = 0usize;
    let mut dropped: Vec<f64> = Vec::new();
    let k_have = vectors.ncols().min(k);
    for a in 1..k_have {
        let mut lambda = values[a];
        if lambda > 1.0 + 1e-9 {
            return Err(Error::numeric(format!("eigenvalue {a} = {lambda} exceeds 1")));
        }
        lambda = lambda.min(1.0 - f64::EPSILON);
        if lambda <= EIG_FLOOR {
            // the conjugate operator is PSD: anything at or below the
            // floor is eigensolver noise, reported but not retained
            dropped = values[a..k_have].iter().map(|&l| l.clamp(0.0, 1.0)).collect();
            break;
        }
        let col = retained + 1;
        for i in 0..n {
            let v = vectors[(i, a)];
            psi[[i, col]] = v * s / d[i].sqrt();
            phi[[i, col]] = v * d[i].sqrt() / s;
        }
        // sign convention: largest-magnitude psi entry is positive
        let mut idx = 0;
        let mut best = 0.0f64;
        for i in 0..n {
            let m = psi[[i, col]].abs();
            if m > best {
                best = m;
                idx = i;
            }
        }
        if psi[[idx, col]] < 0.0 {
            for i in 0..n {
                psi[[i, col]] = -psi[[i, col]];
                phi[[i, col]] = -phi[[i, col]];
            }
        }
        eigenvalues.push(lambda);
        retained += 1;
    }

    let mut m = retained;
    if theta > 0.0 && m > 0 {
        m = residual_truncation(&eigenvalues, &psi, m, theta);
    }
    let mut tail: Vec<f64> = eigenvalues[m + 1..].to_vec();
    tail.extend(dropped);
    let eigenvalues = eigenvalues[..m + 1].to_vec();
    let psi = psi.slice(ndarray::s![.., ..m + 1]).to_owned();
    let phi = phi.slice(ndarray::s![.., ..m + 1]).to_owned();

    let basis = DiffusionBasis { eigenvalues, psi, phi, dropped: tail };
    basis.check_invariants()?;
    Ok(basis)
}

/// Smallest M <= `m` whose residual diffusion distance
/// `sum_{alpha > M} lambda_alpha^2 (psi_i,alpha - psi_j,alpha)^2`, maximized
/// over a deterministic subsample of index pairs, stays below `theta`.
/// Only computed components enter the residual.
fn residual_truncation(eigenvalues: &[f64], psi: &Array2<f64>, m: usize, theta: f64) -> usize {
    let n = psi.nrows();
    let max_pts = 64.min(n);
    let stride = (n / max_pts).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).take(max_pts).collect();
    for keep in 0..=m {
        let mut worst = 0.0f64;
        for (a, &i) in idx.iter().enumerate() {
            for &j in idx.iter().skip(a + 1) {
                let mut r = 0.0;
                for alpha in keep + 1..=m {
                    let l = eigenvalues[alpha];
                    let diff = psi[[i, alpha]] - psi[[j, alpha]];
                    r += l * l * diff * diff;
                }
                worst = worst.max(r);
            }
        }
        if worst <= theta {
            return keep;
        }
    }
    m
}

/// Location and size of the largest ratio between consecutive nontrivial
/// eigenvalues. `eigenvalues` includes the trivial leading 1; the returned
/// index counts components before the gap (ties take the smaller index).
pub fn spectral_gap(eigenvalues: &[f64]) -> Result<(usize, f64)> {
    if eigenvalues.len() < 3 {
        return Err(Error::validation(
            "spectral gap needs at least two nontrivial eigenvalues",
        ));
    }
    let mut best_idx = 1;
    let mut best_ratio = -1.0f64;
    for m in 1..eigenvalues.len() - 1 {
        let denom = eigenvalues[m + 1];
        let ratio = if denom > 0.0 { eigenvalues[m] / denom } else { f64::INFINITY };
        if ratio > best_ratio {
            best_ratio = ratio;
            best_idx = m;
        }
    }
    Ok((best_idx, best_ratio))
}

/// The estimated limit density over reference states (left eigenvector of
/// the trivial component).
pub fn limit_density(basis: &DiffusionBasis) -> Vec<f64> {
    basis.phi.column(0).to_vec()
}

/// Self-information `-log l_i` (natural log) of a state under a density.
pub fn self_information(density: &[f64], i: usize) -> f64 {
    let l = density[i];
    if l <= 0.0 {
        f64::INFINITY
    } else {
        -l.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseSym;
    use approx::assert_abs_diff_eq;

    /// Two dense blocks of near-one similarity with weak cross terms.
    fn two_cluster_sim(n1: usize, n2: usize, cross: f64) -> Array2<f64> {
        let n = n1 + n2;
        Array2::from_shape_fn((n, n), |(i, j)| {
            let same = (i < n1) == (j < n1);
            if same {
                1.0
            } else {
                cross
            }
        })
    }

    #[test]
    fn uniform_similarity_is_rank_one() {
        let sim = Array2::from_elem((6, 6), 0.8);
        let basis = diffusion_basis(StateSimilarity::Dense(sim.view()), 3, 0.0, 1).unwrap();
        assert_eq!(basis.m(), 0, "all states identical: no nontrivial components");
        assert_abs_diff_eq!(basis.eigenvalues[0], 1.0, epsilon = 1e-12);
        for &l in limit_density(&basis).iter() {
            assert_abs_diff_eq!(l, 1.0 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_cluster_second_eigenvalue_approaches_one() {
        // brute-force constructed 8x8 case: as the cross terms vanish the
        // two-cluster indicator eigenvalue moves to 1
        let weak = diffusion_basis(
            StateSimilarity::Dense(two_cluster_sim(4, 4, 1e-6).view()),
            3,
            0.0,
            1,
        )
        .unwrap();
        assert!(weak.eigenvalues[1] > 0.999_99, "lambda_1 = {}", weak.eigenvalues[1]);
        let strong = diffusion_basis(
            StateSimilarity::Dense(two_cluster_sim(4, 4, 0.3).view()),
            3,
            0.0,
            1,
        )
        .unwrap();
        assert!(strong.eigenvalues[1] < weak.eigenvalues[1]);
        // indicator geometry: psi_1 separates the blocks with consistent signs
        let psi1: Vec<f64> = weak.psi.column(1).to_vec();
        assert!(psi1[..4].iter().all(|&v| v * psi1[0] > 0.0));
        assert!(psi1[4..].iter().all(|&v| v * psi1[0] < 0.0));
    }

    #[test]
    fn limit_density_matches_stationary_oracle() {
        // cross terms large enough that the oracle chain actually mixes
        let sim = two_cluster_sim(6, 2, 1e-3);
        let basis = diffusion_basis(StateSimilarity::Dense(sim.view()), 3, 0.0, 1).unwrap();
        let l = limit_density(&basis);
        // the exponent-one normalization removes sampling multiplicity, so
        // the two cluster locations carry equal stationary mass no matter
        // how many samples landed on each
        let mass_a: f64 = l[..6].iter().sum();
        let mass_b: f64 = l[6..].iter().sum();
        assert_abs_diff_eq!(mass_a, 0.5, epsilon = 0.01);
        assert_abs_diff_eq!(mass_b, 0.5, epsilon = 0.01);

        // independent oracle: stationary vector of the row-normalized matrix
        let n = 8;
        let q: Vec<f64> = (0..n).map(|i| sim.row(i).sum()).collect();
        let mut k = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                k[[i, j]] = sim[[i, j]] / (q[i] * q[j]);
            }
        }
        let d: Vec<f64> = (0..n).map(|i| k.row(i).sum()).collect();
        let mut p = k.clone();
        for i in 0..n {
            for j in 0..n {
                p[[i, j]] /= d[i];
            }
        }
        // power iteration on the left
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..200_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += pi[i] * p[[i, j]];
                }
            }
            let s: f64 = next.iter().sum();
            for v in next.iter_mut() {
                *v /= s;
            }
            pi = next;
        }
        for i in 0..n {
            assert_abs_diff_eq!(l[i], pi[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn oversampling_barely_moves_the_spectrum() {
        // duplicate a block of samples: alpha = 1 normalization keeps the
        // retained nontrivial eigenvalues within 5%
        let base = two_cluster_sim(5, 5, 0.05);
        let basis_a = diffusion_basis(StateSimilarity::Dense(base.view()), 2, 0.0, 1).unwrap();
        // oversample the first cluster by duplicating its rows/columns
        let n2 = 15;
        let idx = |i: usize| -> usize { if i < 10 { i.min(4) } else { i - 10 + 5 } };
        let over = Array2::from_shape_fn((n2, n2), |(i, j)| base[[idx(i), idx(j)]]);
        let basis_b = diffusion_basis(StateSimilarity::Dense(over.view()), 2, 0.0, 1).unwrap();
        let la = basis_a.eigenvalues[1];
        let lb = basis_b.eigenvalues[1];
        assert!((la - lb).abs() / la < 0.05, "eigenvalue moved from {la} to {lb}");
    }

    #[test]
    fn krylov_and_dense_paths_agree() {
        let sim = two_cluster_sim(30, 20, 0.02);
        let dense = diffusion_basis(StateSimilarity::Dense(sim.view()), 4, 0.0, 3).unwrap();
        let op = DenseSym { a: sim.view() };
        let kry = diffusion_basis(StateSimilarity::Operator(&op), 4, 0.0, 3).unwrap();
        assert_eq!(dense.m(), kry.m());
        for (a, b) in dense.eigenvalues.iter().zip(&kry.eigenvalues) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        for c in 0..=dense.m() {
            for i in 0..50 {
                assert_abs_diff_eq!(dense.psi[[i, c]], kry.psi[[i, c]], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn spectral_gap_constructed() {
        let (idx, ratio) = spectral_gap(&[1.0, 0.5, 0.49, 0.01]).unwrap();
        assert_eq!(idx, 2);
        assert_abs_diff_eq!(ratio, 49.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_gap_tie_breaks_small() {
        let (idx, _) = spectral_gap(&[1.0, 0.4, 0.04, 0.004]).unwrap();
        assert_eq!(idx, 1);
    }

    #[test]
    fn self_information_hand_values() {
        assert_eq!(self_information(&[1.0], 0), 0.0);
        assert_abs_diff_eq!(self_information(&[1.0 / std::f64::consts::E], 0), 1.0, epsilon = 1e-15);
        let uniform = vec![0.25; 4];
        for i in 0..4 {
            assert_abs_diff_eq!(self_information(&uniform, i), 4.0f64.ln(), epsilon = 1e-12);
        }
        assert!(self_information(&[0.0], 0).is_infinite());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let sim = Array2::<f64>::zeros((4, 4));
        assert!(diffusion_basis(StateSimilarity::Dense(sim.view()), 2, 0.0, 1).is_err());
    }

    #[test]
    fn theta_truncation_drops_negligible_components() {
        let sim = two_cluster_sim(4, 4, 0.2);
        let full = diffusion_basis(StateSimilarity::Dense(sim.view()), 5, 0.0, 1).unwrap();
        assert!(full.m() >= 1);
        // a generous threshold keeps only the dominant structure
        let cut = diffusion_basis(StateSimilarity::Dense(sim.view()), 5, 1e-3, 1).unwrap();
        assert!(cut.m() <= full.m());
    }
}
