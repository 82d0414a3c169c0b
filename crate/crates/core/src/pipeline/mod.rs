//! End-to-end experiment orchestration: configuration, fitting, the
//! holdout prediction protocol, artifact persistence, and cross-validation.

pub mod bundle;
pub mod experiment;
pub mod predictor;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discrete::{self, TransitionGraph};
use crate::dynamics::{self, estimate_operator, EvolutionOperator, StateDistribution};
use crate::embedding::ImplicitStateGram;
use crate::error::{Error, Result};
use crate::geometry::{diffusion_basis, DiffusionBasis, StateSimilarity};
use crate::kernels::{gram, write_gram_binary, Direction, KernelSpec};
use crate::prediction::ProjectionContext;
use crate::processes::{
    generate_hmm, integrate_sde_paths, random_embed, window_pairs, window_pairs_multi, DriftField,
    HmmSpec, SamplePairSet, SdePaths, SdeSpec, Series,
};

pub use experiment::{cross_validate, run_experiment, CvReport, CvRow, Summary};
pub use predictor::{predict_holdout, PredictionRun, TruthSource};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProcessConfig {
    EvenProcess,
    Mess3 {
        a: f64,
        x: f64,
    },
    Lorenz63 {
        eta: f64,
        nu: f64,
        dt: f64,
        transient: usize,
    },
    Lorenz96 {
        dim: usize,
        forcing: f64,
        dt: f64,
        transient: usize,
        runs: usize,
        embed_dim: usize,
        embed_noise_var: f64,
    },
    InputCsv {
        path: PathBuf,
    },
}

impl ProcessConfig {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ProcessConfig::EvenProcess | ProcessConfig::Mess3 { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub process: ProcessConfig,
    /// Number of (past, future) training pairs.
    pub n_pairs: usize,
    pub lx: usize,
    pub ly: usize,
    pub stride: usize,
    /// Past-kernel bandwidth.
    pub xi_x: f64,
    /// Future-kernel bandwidth.
    pub xi_y: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub m_max: usize,
    pub theta: f64,
    pub cluster_radius: f64,
    pub cluster_min_pts: usize,
    /// Leading psi coordinates used for clustering discrete processes.
    pub cluster_dims: usize,
    /// Operator estimation spacing in sample steps (forecasts advance
    /// `every * dt` per operator application).
    pub every: usize,
    pub horizon_steps: usize,
    pub probes: usize,
    pub probe_spacing: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<ExperimentConfig> {
        match name {
            "even-process" => Ok(ExperimentConfig {
                process: ProcessConfig::EvenProcess,
                n_pairs: 30_000,
                lx: 10,
                ly: 5,
                stride: 1,
                xi_x: 1.0,
                xi_y: 1.0,
                gamma: 0.01,
                epsilon: 1e-3,
                m_max: 8,
                theta: 0.0,
                cluster_radius: 0.1,
                cluster_min_pts: 5,
                cluster_dims: 1,
                every: 1,
                horizon_steps: 0,
                probes: 0,
                probe_spacing: 1,
                seed: 7,
            }),
            "mess3" => Ok(ExperimentConfig {
                process: ProcessConfig::Mess3 { a: 0.6, x: 0.15 },
                n_pairs: 25_000,
                lx: 15,
                ly: 1,
                stride: 1,
                xi_x: 0.1,
                xi_y: 0.1,
                gamma: 0.01,
                epsilon: 1e-3,
                m_max: 8,
                theta: 0.0,
                cluster_radius: 0.05,
                cluster_min_pts: 5,
                cluster_dims: 2,
                every: 1,
                horizon_steps: 0,
                probes: 0,
                probe_spacing: 1,
                seed: 7,
            }),
            "lorenz63" => Ok(ExperimentConfig {
                process: ProcessConfig::Lorenz63 { eta: 0.0, nu: 0.0, dt: 0.01, transient: 1000 },
                n_pairs: 20_000,
                lx: 5,
                ly: 5,
                stride: 1,
                xi_x: 10.0,
                xi_y: 10.0,
                gamma: 0.5,
                epsilon: 1e-3,
                m_max: 16,
                theta: 0.0,
                cluster_radius: 0.1,
                cluster_min_pts: 5,
                cluster_dims: 3,
                every: 5,
                horizon_steps: 500,
                probes: 100,
                probe_spacing: 50,
                seed: 7,
            }),
            "lorenz96" => Ok(ExperimentConfig {
                process: ProcessConfig::Lorenz96 {
                    dim: 5,
                    forcing: 8.0,
                    dt: 0.01,
                    transient: 1000,
                    runs: 10,
                    embed_dim: 1000,
                    embed_noise_var: 1.0 / 5.0,
                },
                n_pairs: 10_000,
                lx: 5,
                ly: 5,
                stride: 1,
                xi_x: 40.0,
                xi_y: 40.0,
                gamma: 0.5,
                epsilon: 1e-3,
                m_max: 12,
                theta: 0.0,
                cluster_radius: 0.1,
                cluster_min_pts: 5,
                cluster_dims: 3,
                every: 1,
                horizon_steps: 0,
                probes: 0,
                probe_spacing: 1,
                seed: 7,
            }),
            other => Err(Error::validation(format!(
                "unknown preset '{other}'; expected even-process, mess3, lorenz63 or lorenz96"
            ))),
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["even-process", "mess3", "lorenz63", "lorenz96"]
    }

    /// Shrinks the training size for desk-scale runs.
    pub fn scale(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::validation("scale must lie in (0, 1]"));
        }
        self.n_pairs = ((self.n_pairs as f64 * factor).round() as usize).max(self.lx + self.ly);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 2 {
            return Err(Error::validation("n_pairs must be at least 2"));
        }
        if self.lx == 0 || self.ly == 0 || self.stride == 0 {
            return Err(Error::validation("lx, ly and stride must be positive"));
        }
        if !(self.xi_x > 0.0) || !(self.xi_y > 0.0) {
            return Err(Error::validation(format!(
                "kernel bandwidths must be positive (xi_x = {}, xi_y = {})",
                self.xi_x, self.xi_y
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.m_max == 0 || self.m_max + 1 > self.n_pairs {
            return Err(Error::validation("m_max must be in [1, n_pairs)"));
        }
        if self.theta < 0.0 {
            return Err(Error::validation("theta must be nonnegative"));
        }
        if !(self.cluster_radius > 0.0) {
            return Err(Error::validation("cluster radius must be positive"));
        }
        if self.every == 0 {
            return Err(Error::validation("every must be at least 1"));
        }
        if let ProcessConfig::InputCsv { path } = &self.process {
            if !path.exists() {
                return Err(Error::validation(format!(
                    "input data path {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Stable hash of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn steps_for_pairs(&self, pairs: usize) -> usize {
        (pairs - 1) * self.stride + self.lx + self.ly
    }
}

/// Training data plus everything the holdout protocol needs to synthesize
/// matching test trajectories.
pub struct Model {
    pub config: ExperimentConfig,
    pub pairs: SamplePairSet,
    pub kx: KernelSpec,
    pub ky: KernelSpec,
    pub basis: DiffusionBasis,
    /// Operator at `every` sample steps (the forecasting step).
    pub operator: EvolutionOperator,
    /// Unit-step operator, kept for diagnostics and the evolve interface.
    pub operator_unit: EvolutionOperator,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Deviation of the evolved limit density from itself (ten steps).
    pub fixed_point_error: f64,
    /// Mean relative discrepancy between the direct `every`-step operator
    /// and the composed unit-step operator (when `every > 1`).
    pub power_consistency: Option<f64>,
}

impl Model {
    pub fn epsilon(&self) -> f64 {
        self.config.epsilon
    }

    pub fn projection_context(&self) -> ProjectionContext<'_> {
        ProjectionContext::new(self.pairs.x.view(), &self.kx, self.config.epsilon)
    }

    /// Clusters the leading raw psi coordinates and extracts the
    /// symbol-labeled transition graph (discrete processes).
    pub fn graph(&self, radius: f64, min_pts: usize, dims: usize) -> Result<(Vec<isize>, TransitionGraph)> {
        let m = self.basis.m();
        if m == 0 {
            return Err(Error::validation("no nontrivial components to cluster"));
        }
        let dims = dims.clamp(1, m);
        let psi = self.basis.psi_coords();
        let view = psi.slice(ndarray::s![.., ..dims]);
        let labels = discrete::cluster_states(view, radius, min_pts)?;
        let symbols = discrete::next_symbols(&self.pairs);
        let coords = self.basis.coords();
        let graph = discrete::extract_graph(&labels, &self.pairs, &symbols, coords.view())?;
        Ok((labels, graph))
    }
}

/// Options controlling side outputs of the fit.
#[derive(Default)]
pub struct FitOptions {
    /// Write the past-window Gram matrix in the binary dump format.
    pub dump_gram: Option<PathBuf>,
}

/// Generates the training series prescribed by the configuration.
pub fn generate_training(config: &ExperimentConfig) -> Result<SamplePairSet> {
    config.validate()?;
    match &config.process {
        ProcessConfig::EvenProcess => {
            let steps = config.steps_for_pairs(config.n_pairs);
            let series = generate_hmm(&HmmSpec::even_process(), steps, config.seed)?;
            window_pairs(&series, config.lx, config.ly, config.stride)
        }
        ProcessConfig::Mess3 { a, x } => {
            let steps = config.steps_for_pairs(config.n_pairs);
            let series = generate_hmm(&HmmSpec::mess3(*a, *x), steps, config.seed)?;
            window_pairs(&series, config.lx, config.ly, config.stride)
        }
        ProcessConfig::Lorenz63 { eta, nu, dt, transient } => {
            let steps = config.steps_for_pairs(config.n_pairs);
            let paths = lorenz63_paths(config.seed, *eta, *nu, *dt, *transient, steps)?;
            window_pairs(&paths.observed, config.lx, config.ly, config.stride)
        }
        ProcessConfig::Lorenz96 {
            dim,
            forcing,
            dt,
            transient,
            runs,
            embed_dim,
            embed_noise_var,
        } => {
            let runs = (*runs).max(1);
            let per_run = config.n_pairs.div_ceil(runs);
            let mut remaining = config.n_pairs;
            let mut all = Vec::new();
            // a single projection is shared by every run
            let probe = Series::new(ndarray::Array2::zeros((1, *dim)), *dt, 0.0)?;
            let shared = random_embed(&probe, *embed_dim, 0.0, config.seed ^ 0xe4be_d001)?;
            for run in 0..runs {
                let pairs_here = per_run.min(remaining);
                if pairs_here == 0 {
                    break;
                }
                remaining -= pairs_here;
                let steps = config.steps_for_pairs(pairs_here);
                let series = lorenz96_run(
                    config.seed,
                    run as u64,
                    *dim,
                    *forcing,
                    *dt,
                    *transient,
                    steps,
                )?;
                let embedded = crate::processes::embed_with_projection(
                    &series,
                    &shared.projection,
                    *embed_noise_var,
                    config.seed ^ (0x0b5e_55ed + run as u64),
                )?;
                all.push(embedded);
            }
            window_pairs_multi(&all, config.lx, config.ly, config.stride)
        }
        ProcessConfig::InputCsv { path } => {
            let series = crate::io::read_series_csv(path)?;
            window_pairs(&series, config.lx, config.ly, config.stride)
        }
    }
}

pub(crate) fn lorenz63_paths(
    seed: u64,
    eta: f64,
    nu: f64,
    dt: f64,
    transient: usize,
    steps: usize,
) -> Result<SdePaths> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x1096_3a7c);
    let initial = [
        rng.random_range(-15.0..15.0),
        rng.random_range(-15.0..15.0),
        rng.random_range(10.0..40.0),
    ];
    let spec = SdeSpec { drift: DriftField::lorenz63_standard(), eta, nu, dt, seed };
    integrate_sde_paths(&spec, steps, &initial, transient)
}

fn lorenz96_run(
    seed: u64,
    run: u64,
    dim: usize,
    forcing: f64,
    dt: f64,
    transient: usize,
    steps: usize,
) -> Result<Series> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (0x96_0000 + run));
    let initial: Vec<f64> = (0..dim).map(|_| forcing + rng.random_range(-0.5..0.5)).collect();
    let spec = SdeSpec {
        drift: DriftField::Lorenz96 { dim, forcing },
        eta: 0.0,
        nu: 0.0,
        dt,
        seed: seed ^ (0x96_0000 + run),
    };
    integrate_sde_paths(&spec, steps, &initial, transient).map(|p| p.observed)
}

/// Fits the full model: Gram matrices, conditional embedding, diffusion
/// basis, and evolution operators.
pub fn fit(config: &ExperimentConfig, options: &FitOptions) -> Result<Model> {
    config.validate()?;
    let pairs = generate_training(config)?;
    fit_pairs(config, pairs, options)
}

/// Fits from an existing sample pair set (shared by `fit` and the
/// cross-validation loop, which reuses data across grid points).
pub fn fit_pairs(
    config: &ExperimentConfig,
    pairs: SamplePairSet,
    options: &FitOptions,
) -> Result<Model> {
    crate::linalg::thread_count();
    let kx = KernelSpec::gaussian(config.xi_x, config.gamma, config.lx, pairs.dim)?;
    let ky = KernelSpec::gaussian(config.xi_y, config.gamma, config.ly, pairs.dim)?;
    let gx = gram(pairs.x.view(), &kx, Direction::Past)?;
    if let Some(path) = &options.dump_gram {
        write_gram_binary(path, &gx)?;
    }
    let gy = gram(pairs.y.view(), &ky, Direction::Future)?;
    let implicit = ImplicitStateGram::new(gx, gy, config.epsilon)?;
    let basis = diffusion_basis(
        StateSimilarity::Operator(&implicit),
        config.m_max.min(pairs.len() - 1),
        config.theta,
        config.seed,
    )?;
    drop(implicit);

    let operator_unit = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 1)?;
    let operator = if config.every == 1 {
        operator_unit.clone()
    } else {
        estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, config.every)?
    };

    let fixed_point_error = {
        let limit = StateDistribution::limit(&basis);
        let evolved = dynamics::evolve(&limit, &operator_unit, 10)?;
        evolved.coeffs[1..]
            .iter()
            .map(|c| c.abs())
            .fold(0.0f64, f64::max)
    };
    let power_consistency = if config.every > 1 {
        let probes: Vec<StateDistribution> = (0..20)
            .map(|k| StateDistribution::delta(k * (pairs.len() / 20).max(1), &basis))
            .collect::<Result<_>>()?;
        Some(dynamics::power_consistency(&operator, &operator_unit, &probes)?)
    } else {
        None
    };

    Ok(Model {
        config: config.clone(),
        pairs,
        kx,
        ky,
        basis,
        operator,
        operator_unit,
        diagnostics: FitDiagnostics { fixed_point_error, power_consistency },
    })
}
