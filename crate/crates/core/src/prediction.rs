//! Forecasting through the fitted model: functions of the data in the
//! reduced basis, projection of new observations onto state distributions
//! by nonnegative least squares, and the evolution-operator forecast.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::dynamics::{evolve, EvolutionOperator, StateDistribution};
use crate::error::{Error, Result};
use crate::geometry::DiffusionBasis;
use crate::kernels::{eval_window, Direction, KernelSpec, GRAM_FLOOR};
use crate::linalg::nnls::{self, ColumnSource};
use crate::processes::SamplePairSet;

/// A function of the data, represented by its values at every training
/// sample and by its projection onto the reduced basis.
#[derive(Debug, Clone)]
pub struct FittedFunction {
    /// N x D values of the function at the training samples.
    pub values: Array2<f64>,
    /// (M+1) x D projection coefficients `f_m = <f, Phi_m>`.
    pub coeffs: Array2<f64>,
    /// Future-window offset the function was read at, in sample steps.
    pub tau_steps: usize,
}

impl FittedFunction {
    /// Builds the function from explicit per-sample values.
    pub fn from_values(values: Array2<f64>, basis: &DiffusionBasis) -> Result<Self> {
        if values.nrows() != basis.n() {
            return Err(Error::validation(format!(
                "function has {} rows, basis expects {}",
                values.nrows(),
                basis.n()
            )));
        }
        let k = basis.eigenvalues.len();
        let d = values.ncols();
        let mut coeffs = Array2::zeros((k, d));
        for m in 0..k {
            for c in 0..d {
                let mut acc = 0.0;
                for i in 0..basis.n() {
                    acc += basis.phi[[i, m]] * values[[i, c]];
                }
                coeffs[[m, c]] = acc;
            }
        }
        Ok(FittedFunction { values, coeffs, tau_steps: 0 })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Expected value of the function under a state distribution: the
    /// bi-orthogonal pairing of the coefficient vectors.
    pub fn apply(&self, q: &StateDistribution) -> Result<Vec<f64>> {
        let k = self.coeffs.nrows();
        if q.coeffs.len() != k {
            return Err(Error::validation(format!(
                "distribution has {} coefficients, function expects {k}",
                q.coeffs.len()
            )));
        }
        let d = self.dim();
        let mut out = vec![0.0; d];
        for c in 0..d {
            let mut acc = 0.0;
            for m in 0..k {
                acc += self.coeffs[[m, c]] * q.coeffs[m];
            }
            out[c] = acc;
        }
        Ok(out)
    }

    /// In-sample reconstruction through the diffusion coordinates
    /// (`sum_m f_m lambda_m psi_{i,m}`), reported as R^2 per output
    /// dimension. A diagnostic of how much of the function the retained
    /// basis captures.
    pub fn reconstruction_r2(&self, basis: &DiffusionBasis) -> Vec<f64> {
        let n = basis.n();
        let d = self.dim();
        let k = basis.eigenvalues.len();
        let mut r2 = Vec::with_capacity(d);
        for c in 0..d {
            let mean: f64 = self.values.column(c).sum() / n as f64;
            let mut ss_res = 0.0;
            let mut ss_tot = 0.0;
            for i in 0..n {
                let mut pred = 0.0;
                for m in 0..k {
                    pred += self.coeffs[[m, c]] * basis.eigenvalues[m] * basis.psi[[i, m]];
                }
                ss_res += (self.values[[i, c]] - pred).powi(2);
                ss_tot += (self.values[[i, c]] - mean).powi(2);
            }
            r2.push(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 });
        }
        r2
    }
}

/// Reads the observation at future offset `tau` (a multiple of the sample
/// step within the future window) for every sample and projects it.
pub fn fit_function(
    pairs: &SamplePairSet,
    basis: &DiffusionBasis,
    tau: f64,
) -> Result<FittedFunction> {
    if pairs.len() != basis.n() {
        return Err(Error::validation("sample pairs and basis have different sizes"));
    }
    let steps = tau / pairs.dt;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-6 {
        return Err(Error::validation(format!(
            "tau = {tau} is not a multiple of the sample step {}",
            pairs.dt
        )));
    }
    let step_idx = rounded as i64;
    if step_idx < 1 || step_idx as usize > pairs.ly {
        return Err(Error::validation(format!(
            "tau = {tau} lies outside the future window (1..={} steps of {})",
            pairs.ly, pairs.dt
        )));
    }
    let offset = (step_idx as usize - 1) * pairs.dim;
    let values = pairs
        .y
        .slice(ndarray::s![.., offset..offset + pairs.dim])
        .to_owned();
    let mut f = FittedFunction::from_values(values, basis)?;
    f.tau_steps = step_idx as usize;
    Ok(f)
}

/// Nonnegative projection of a new past window onto the training states.
#[derive(Debug, Clone)]
pub struct NewStateEstimate {
    /// Nonnegative solution of the moment-matching system.
    pub weights: Vec<f64>,
    /// Normalized weights (sums to 1).
    pub q_hat: Vec<f64>,
    /// Expected reduced coordinates `lambda_m sum_i q_i psi_{i,m}`.
    pub coords: Vec<f64>,
    /// NNLS residual norm.
    pub residual: f64,
}

/// Training-side context for projecting new observations.
pub struct ProjectionContext<'a> {
    pub train_x: ArrayView2<'a, f64>,
    pub spec: &'a KernelSpec,
    pub epsilon: f64,
    /// Candidate pruning: columns with `K_j < rel_tol * max(K)` cannot
    /// enter the support at the solver tolerance. Zero keeps every column.
    pub candidate_rel_tol: f64,
    /// Dual-feasibility tolerance of the NNLS solver.
    pub nnls_tol: f64,
}

impl<'a> ProjectionContext<'a> {
    pub fn new(train_x: ArrayView2<'a, f64>, spec: &'a KernelSpec, epsilon: f64) -> Self {
        ProjectionContext {
            train_x,
            spec,
            epsilon,
            candidate_rel_tol: 1e-16,
            nnls_tol: 1e-10,
        }
    }
}

/// Columns of `G^X + eps I` synthesized from the training windows.
struct RegularizedKernelColumns<'a, 'b> {
    ctx: &'a ProjectionContext<'b>,
}

impl ColumnSource for RegularizedKernelColumns<'_, '_> {
    fn nrows(&self) -> usize {
        self.ctx.train_x.nrows()
    }

    fn ncols(&self) -> usize {
        self.ctx.train_x.nrows()
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        let xj = self.ctx.train_x.row(j);
        let xj = xj.as_slice().unwrap();
        for (i, o) in out.iter_mut().enumerate() {
            let xi = self.ctx.train_x.row(i);
            *o = eval_window(xi.as_slice().unwrap(), xj, self.ctx.spec, Direction::Past).unwrap();
        }
        out[j] += self.ctx.epsilon;
    }
}

/// Kernel similarities of a new window to every training window.
pub fn kernel_moments(x_new: &[f64], ctx: &ProjectionContext<'_>) -> Result<Vec<f64>> {
    if x_new.len() != ctx.spec.window_dim() {
        return Err(Error::validation(format!(
            "new window has {} entries, expected {}",
            x_new.len(),
            ctx.spec.window_dim()
        )));
    }
    let n = ctx.train_x.nrows();
    let k: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = ctx.train_x.row(i);
            eval_window(xi.as_slice().unwrap(), x_new, ctx.spec, Direction::Past).unwrap()
        })
        .collect();
    Ok(k)
}

/// Solves `argmin_w |(G^X + eps I) w - K(x_new)|^2` subject to `w >= 0`
/// and normalizes into a distribution over reference states.
pub fn project_new(
    x_new: &[f64],
    ctx: &ProjectionContext<'_>,
    basis: &DiffusionBasis,
) -> Result<NewStateEstimate> {
    let n = ctx.train_x.nrows();
    if basis.n() != n {
        return Err(Error::validation("basis and training set sizes differ"));
    }
    if !(ctx.epsilon > 0.0) {
        return Err(Error::validation("epsilon must be positive"));
    }
    let k_new = kernel_moments(x_new, ctx)?;
    let k_max = k_new.iter().cloned().fold(0.0f64, f64::max);
    if k_max <= GRAM_FLOOR * 10.0 {
        return Err(Error::OutOfSupport(
            "kernel similarities to every training sample are at the numerical floor".into(),
        ));
    }
    let candidates: Option<Vec<usize>> = if ctx.candidate_rel_tol > 0.0 {
        Some(
            (0..n)
                .filter(|&i| k_new[i] >= ctx.candidate_rel_tol * k_max)
                .collect(),
        )
    } else {
        None
    };
    let source = RegularizedKernelColumns { ctx };
    let sol = nnls::nnls(&source, &k_new, ctx.nnls_tol, candidates, 4 * n.min(400))?;
    let total: f64 = sol.x.iter().sum();
    if !(total > 0.0) {
        return Err(Error::OutOfSupport("nonnegative projection collapsed to zero".into()));
    }
    let q_hat: Vec<f64> = sol.x.iter().map(|w| w / total).collect();
    let dist = StateDistribution::from_weights(&q_hat, basis)?;
    let coords = dist.coords(basis);
    Ok(NewStateEstimate { weights: sol.x, q_hat, coords, residual: sol.residual_norm })
}

/// Full forecast: project the new window, advance the state distribution
/// `horizon_steps` operator applications, and evaluate the function.
pub fn forecast(
    x_new: &[f64],
    ctx: &ProjectionContext<'_>,
    basis: &DiffusionBasis,
    operator: &EvolutionOperator,
    f: &FittedFunction,
    horizon_steps: usize,
) -> Result<Vec<f64>> {
    let estimate = project_new(x_new, ctx, basis)?;
    let q0 = StateDistribution::from_weights(&estimate.q_hat, basis)?;
    let q = evolve(&q0, operator, horizon_steps)?;
    f.apply(&q)
}
