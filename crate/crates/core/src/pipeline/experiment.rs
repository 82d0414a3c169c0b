//! Experiment runner (artifact emission) and the (xi, epsilon)
//! cross-validation grid.

use std::path::Path;

use serde::Serialize;

use super::predictor::{generate_test, predict_holdout, TruthSource};
use super::{fit, fit_pairs, ExperimentConfig, FitOptions, Model, ProcessConfig};
use crate::discrete::TransitionGraph;
use crate::error::{Error, Result};
use crate::geometry::spectral_gap;
use crate::io;

#[derive(Debug, Clone, Serialize)]
pub struct GraphSummary {
    pub n_clusters: usize,
    pub noise_count: usize,
    pub cluster_probabilities: Vec<f64>,
    pub graph: TransitionGraph,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionSummary {
    pub horizons: Vec<usize>,
    pub model_rmse: Vec<f64>,
    pub persistence_rmse: Vec<f64>,
}

/// Machine-readable experiment outcome; deterministic for a fixed config
/// (no timestamps on purpose).
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub n_pairs: usize,
    pub eigenvalues: Vec<f64>,
    pub retained_components: usize,
    pub spectral_gap_index: Option<usize>,
    pub spectral_gap_ratio: Option<f64>,
    pub fixed_point_error: f64,
    pub power_consistency: Option<f64>,
    pub graph: Option<GraphSummary>,
    pub prediction: Option<PredictionSummary>,
}

/// Fits the configured model and writes the artifact directory:
/// `spectrum.csv`, `coords.csv`, `graph.json`/`graph.dot` for discrete
/// processes, `predictions.csv` for the continuous benchmark, and
/// `summary.json`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let model = fit(config, &FitOptions::default())?;
    let summary = summarize(&model, out_dir)?;
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out_dir.join("summary.json"), json)?;
    Ok(summary)
}

/// Emits per-stage artifacts for an already fitted model and assembles the
/// summary.
pub fn summarize(model: &Model, out_dir: &Path) -> Result<Summary> {
    let config = &model.config;
    write_spectrum_csv(model, &out_dir.join("spectrum.csv"))?;
    write_coords_csv(model, &out_dir.join("coords.csv"))?;

    let graph = if config.process.is_discrete() {
        let (_, graph) =
            model.graph(config.cluster_radius, config.cluster_min_pts, config.cluster_dims)?;
        std::fs::write(out_dir.join("graph.json"), serde_json::to_string_pretty(&graph)?)?;
        std::fs::write(out_dir.join("graph.dot"), graph.to_dot())?;
        let mut probs: Vec<f64> = graph.clusters.iter().map(|c| c.probability).collect();
        probs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Some(GraphSummary {
            n_clusters: graph.clusters.len(),
            noise_count: graph.noise_count,
            cluster_probabilities: probs,
            graph,
        })
    } else {
        None
    };

    let prediction = if matches!(config.process, ProcessConfig::Lorenz63 { .. })
        && config.probes > 0
        && config.horizon_steps > 0
    {
        let (observed, clean) =
            generate_test(model, config.horizon_steps, config.probes, config.probe_spacing)?;
        let thermal = matches!(
            config.process,
            ProcessConfig::Lorenz63 { eta, .. } if eta > 0.0
        );
        let run = if thermal {
            let ProcessConfig::Lorenz63 { dt, .. } = config.process else { unreachable!() };
            let truth = TruthSource::OdeFromProbe {
                drift: crate::processes::DriftField::lorenz63_standard(),
                dt,
            };
            predict_holdout(
                model,
                &observed,
                &truth,
                config.horizon_steps,
                config.probes,
                config.probe_spacing,
            )?
        } else {
            predict_holdout(
                model,
                &observed,
                &TruthSource::CleanSeries(&clean),
                config.horizon_steps,
                config.probes,
                config.probe_spacing,
            )?
        };
        write_predictions_csv(&run, &out_dir.join("predictions.csv"))?;
        Some(PredictionSummary {
            horizons: run.horizons,
            model_rmse: run.model_rmse,
            persistence_rmse: run.persistence_rmse,
        })
    } else {
        None
    };

    let (gap_index, gap_ratio) = match spectral_gap(&model.basis.eigenvalues) {
        Ok((i, r)) => (Some(i), Some(r)),
        Err(_) => (None, None),
    };

    Ok(Summary {
        config: config.clone(),
        config_hash: config.hash(),
        n_pairs: model.pairs.len(),
        eigenvalues: model.basis.eigenvalues.clone(),
        retained_components: model.basis.m(),
        spectral_gap_index: gap_index,
        spectral_gap_ratio: gap_ratio,
        fixed_point_error: model.diagnostics.fixed_point_error,
        power_consistency: model.diagnostics.power_consistency,
        graph,
        prediction,
    })
}

pub fn write_spectrum_csv(model: &Model, path: &Path) -> Result<()> {
    let rows: Vec<Vec<f64>> = model
        .basis
        .spectrum_with_tail()
        .iter()
        .enumerate()
        .map(|(i, &l)| vec![i as f64, l])
        .collect();
    io::write_vec_csv(path, "index,eigenvalue", &rows)
}

pub fn write_coords_csv(model: &Model, path: &Path) -> Result<()> {
    let coords = model.basis.coords();
    let m = coords.ncols();
    let header = (1..=m).map(|c| format!("s{c}")).collect::<Vec<_>>().join(",");
    let rows: Vec<Vec<f64>> = (0..coords.nrows()).map(|i| coords.row(i).to_vec()).collect();
    io::write_vec_csv(path, &header, &rows)
}

fn write_predictions_csv(run: &super::PredictionRun, path: &Path) -> Result<()> {
    let d = run.rows.first().map_or(0, |r| r.truth.len());
    let mut header = String::from("probe,step");
    for c in 0..d {
        header.push_str(&format!(",truth{c}"));
    }
    for c in 0..d {
        header.push_str(&format!(",pred{c}"));
    }
    header.push_str(",err");
    let rows: Vec<Vec<f64>> = run
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.probe as f64, r.step as f64];
            row.extend(&r.truth);
            row.extend(&r.pred);
            row.push(r.err);
            row
        })
        .collect();
    io::write_vec_csv(path, &header, &rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct CvRow {
    pub xi: f64,
    pub epsilon: f64,
    pub rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub best_xi: f64,
    pub best_epsilon: f64,
    pub best_rmse: f64,
    pub rows: Vec<CvRow>,
}

/// Exhaustive grid search over kernel bandwidth and regularization,
/// scored by held-out forecast error at the configured horizon. Ties
/// break toward smaller epsilon, then smaller xi.
pub fn cross_validate(base: &ExperimentConfig, xis: &[f64], epsilons: &[f64]) -> Result<CvReport> {
    base.validate()?;
    if xis.is_empty() || epsilons.is_empty() {
        return Err(Error::validation("cross-validation grid must be non-empty"));
    }
    if !matches!(base.process, ProcessConfig::Lorenz63 { .. }) {
        return Err(Error::validation(
            "cross-validation scores held-out forecasts and needs a continuous process",
        ));
    }
    let pairs = super::generate_training(base)?;

    let mut grid: Vec<(f64, f64)> = Vec::new();
    for &eps in epsilons {
        for &xi in xis {
            grid.push((eps, xi));
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for (eps, xi) in grid {
        let mut cfg = base.clone();
        cfg.xi_x = xi;
        cfg.xi_y = xi;
        cfg.epsilon = eps;
        let outcome = (|| -> Result<f64> {
            cfg.validate()?;
            let model = fit_pairs(&cfg, pairs.clone(), &FitOptions::default())?;
            let (observed, clean) =
                generate_test(&model, cfg.horizon_steps, cfg.probes, cfg.probe_spacing)?;
            let run = predict_holdout(
                &model,
                &observed,
                &TruthSource::CleanSeries(&clean),
                cfg.horizon_steps,
                cfg.probes,
                cfg.probe_spacing,
            )?;
            Ok(*run.model_rmse.last().expect("at least one horizon"))
        })();
        match outcome {
            Ok(rmse) => {
                if rmse.is_finite() && best.map_or(true, |(_, _, b)| rmse < b) {
                    best = Some((xi, eps, rmse));
                }
                rows.push(CvRow { xi, epsilon: eps, rmse: Some(rmse), error: None });
            }
            Err(e) => rows.push(CvRow { xi, epsilon: eps, rmse: None, error: Some(e.to_string()) }),
        }
    }
    let (best_xi, best_epsilon, best_rmse) = best
        .ok_or_else(|| Error::numeric("cross-validation: every grid point failed"))?;
    Ok(CvReport { best_xi, best_epsilon, best_rmse, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_grid_returns_that_point() {
        let mut cfg = ExperimentConfig::preset("lorenz63").unwrap();
        cfg.n_pairs = 600;
        cfg.m_max = 8;
        cfg.horizon_steps = 25;
        cfg.probes = 8;
        cfg.probe_spacing = 20;
        let report = cross_validate(&cfg, &[10.0], &[1e-3]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.best_xi, 10.0);
        assert_eq!(report.best_epsilon, 1e-3);
        assert!(report.best_rmse.is_finite());
    }

    #[test]
    fn degenerate_bandwidth_scores_worse() {
        let mut cfg = ExperimentConfig::preset("lorenz63").unwrap();
        cfg.n_pairs = 900;
        cfg.m_max = 8;
        cfg.horizon_steps = 25;
        cfg.probes = 10;
        cfg.probe_spacing = 20;
        let report = cross_validate(&cfg, &[1e-6, 10.0], &[1e-3]).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.best_xi, 10.0, "near-diagonal Gram should lose: {:?}", report.rows);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let cfg = ExperimentConfig::preset("lorenz63").unwrap();
        assert!(cross_validate(&cfg, &[], &[1e-3]).is_err());
    }
}
