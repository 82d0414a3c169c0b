//! Model persistence: a directory of binary matrices plus JSON metadata.
//! Matrices round-trip bit-exactly, so a reloaded model forecasts
//! identically to the freshly fitted one.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, FitDiagnostics, Model};
use crate::dynamics::EvolutionOperator;
use crate::error::{Error, Result};
use crate::geometry::DiffusionBasis;
use crate::io::{read_matrix_bin, write_matrix_bin};
use crate::kernels::KernelSpec;
use crate::processes::SamplePairSet;

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    format_version: u32,
    package_version: String,
    config: ExperimentConfig,
    config_hash: String,
    kx: KernelSpec,
    ky: KernelSpec,
    lx: usize,
    ly: usize,
    dim: usize,
    dt: f64,
    times: Vec<f64>,
    segment_starts: Vec<usize>,
    eigenvalues: Vec<f64>,
    dropped_eigenvalues: Vec<f64>,
    operator_step: usize,
    operator_n_train: usize,
    operator_unit_n_train: usize,
    diagnostics: FitDiagnostics,
}

pub fn save(model: &Model, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = BundleMeta {
        format_version: 1,
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        config: model.config.clone(),
        config_hash: model.config.hash(),
        kx: model.kx.clone(),
        ky: model.ky.clone(),
        lx: model.pairs.lx,
        ly: model.pairs.ly,
        dim: model.pairs.dim,
        dt: model.pairs.dt,
        times: model.pairs.t.clone(),
        segment_starts: model.pairs.segment_starts.clone(),
        eigenvalues: model.basis.eigenvalues.clone(),
        dropped_eigenvalues: model.basis.dropped.clone(),
        operator_step: model.operator.step,
        operator_n_train: model.operator.n_train,
        operator_unit_n_train: model.operator_unit.n_train,
        diagnostics: model.diagnostics.clone(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    write_matrix_bin(&dir.join("pairs_x.bin"), &model.pairs.x)?;
    write_matrix_bin(&dir.join("pairs_y.bin"), &model.pairs.y)?;
    write_matrix_bin(&dir.join("psi.bin"), &model.basis.psi)?;
    write_matrix_bin(&dir.join("phi.bin"), &model.basis.phi)?;
    write_matrix_bin(&dir.join("operator.bin"), &model.operator.matrix)?;
    write_matrix_bin(&dir.join("operator_unit.bin"), &model.operator_unit.matrix)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Model> {
    let meta_path = dir.join("meta.json");
    let meta: BundleMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path).map_err(
        |e| Error::validation(format!("cannot read {}: {e}", meta_path.display())),
    )?)?;
    if meta.format_version != 1 {
        return Err(Error::validation(format!(
            "unsupported bundle format version {}",
            meta.format_version
        )));
    }
    let x = read_matrix_bin(&dir.join("pairs_x.bin"))?;
    let y = read_matrix_bin(&dir.join("pairs_y.bin"))?;
    let psi = read_matrix_bin(&dir.join("psi.bin"))?;
    let phi = read_matrix_bin(&dir.join("phi.bin"))?;
    let op = read_matrix_bin(&dir.join("operator.bin"))?;
    let op_unit = read_matrix_bin(&dir.join("operator_unit.bin"))?;

    let n = x.nrows();
    if y.nrows() != n || psi.nrows() != n || phi.nrows() != n || meta.times.len() != n {
        return Err(Error::validation("bundle matrices have inconsistent row counts"));
    }
    let k = meta.eigenvalues.len();
    if psi.ncols() != k || phi.ncols() != k || op.nrows() != k || op.ncols() != k {
        return Err(Error::validation("bundle basis and operator sizes disagree"));
    }

    let pairs = SamplePairSet {
        x,
        y,
        t: meta.times,
        lx: meta.lx,
        ly: meta.ly,
        dim: meta.dim,
        dt: meta.dt,
        segment_starts: meta.segment_starts,
    };
    let basis = DiffusionBasis { eigenvalues: meta.eigenvalues, psi, phi, dropped: meta.dropped_eigenvalues };
    basis.check_invariants()?;
    let operator = EvolutionOperator {
        matrix: op,
        dt: meta.dt,
        step: meta.operator_step,
        n_train: meta.operator_n_train,
    };
    let operator_unit = EvolutionOperator {
        matrix: op_unit,
        dt: meta.dt,
        step: 1,
        n_train: meta.operator_unit_n_train,
    };
    Ok(Model {
        config: meta.config,
        pairs,
        kx: meta.kx,
        ky: meta.ky,
        basis,
        operator,
        operator_unit,
        diagnostics: meta.diagnostics,
    })
}

/// Convenience for tests: true when two matrices are bitwise identical.
pub fn bitwise_equal(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.dim() == b.dim()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{fit, FitOptions};
    use crate::prediction::{fit_function, forecast};

    #[test]
    fn save_load_forecast_is_bit_identical() {
        let mut cfg = ExperimentConfig::preset("lorenz63").unwrap();
        cfg.n_pairs = 700;
        cfg.m_max = 8;
        let model = fit(&cfg, &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&model, dir.path()).unwrap();
        let loaded = load(dir.path()).unwrap();

        assert!(bitwise_equal(&model.basis.psi, &loaded.basis.psi));
        assert!(bitwise_equal(&model.operator.matrix, &loaded.operator.matrix));

        let f_a = fit_function(&model.pairs, &model.basis, 0.05).unwrap();
        let f_b = fit_function(&loaded.pairs, &loaded.basis, 0.05).unwrap();
        let ctx_a = model.projection_context();
        let ctx_b = loaded.projection_context();
        let probe = model.pairs.x.row(321).to_vec();
        let ya = forecast(&probe, &ctx_a, &model.basis, &model.operator, &f_a, 3).unwrap();
        let yb = forecast(&probe, &ctx_b, &loaded.basis, &loaded.operator, &f_b, 3).unwrap();
        for (a, b) in ya.iter().zip(&yb) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
