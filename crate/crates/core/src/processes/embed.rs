//! Random high-dimensional embedding of a low-dimensional series,
//! W = U R + noise, with R a random projection matrix.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Series;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct EmbeddedSeries {
    pub series: Series,
    /// D x target projection, kept for back-projection diagnostics.
    pub projection: Array2<f64>,
}

/// Embeds into `target_dim` dimensions using a projection with i.i.d.
/// normal entries of standard deviation 1/D, then adds Gaussian noise of
/// variance `noise_var` per entry.
pub fn random_embed(
    series: &Series,
    target_dim: usize,
    noise_var: f64,
    seed: u64,
) -> Result<EmbeddedSeries> {
    let d = series.dim();
    if target_dim < d {
        return Err(Error::validation(format!(
            "embed: target dimension {target_dim} is below the source dimension {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 1.0 / d as f64;
    let projection = Array2::from_shape_fn((d, target_dim), |_| {
        let g: f64 = StandardNormal.sample(&mut rng);
        std * g
    });
    let embedded = embed_with_projection(series, &projection, noise_var, seed)?;
    Ok(EmbeddedSeries { series: embedded, projection })
}

/// Embedding with an explicitly supplied projection matrix (test hook and
/// reproducibility path).
pub fn embed_with_projection(
    series: &Series,
    projection: &Array2<f64>,
    noise_var: f64,
    seed: u64,
) -> Result<Series> {
    let d = series.dim();
    if projection.nrows() != d {
        return Err(Error::validation(format!(
            "embed: projection has {} rows, series dimension is {d}",
            projection.nrows()
        )));
    }
    if noise_var < 0.0 {
        return Err(Error::validation("embed: noise variance must be nonnegative"));
    }
    let mut values = linalg::matmul_nd(series.values.view(), projection.view());
    if noise_var > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x517c_c1b7_2722_0a95);
        let std = noise_var.sqrt();
        for v in values.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += std * g;
        }
    }
    Series::new(values, series.dt, series.t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{integrate_sde, DriftField, SdeSpec};
    use ndarray::Array1;

    #[test]
    fn identity_projection_without_noise_is_identity() {
        let series = Series::new(
            Array2::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f64),
            0.1,
            0.0,
        )
        .unwrap();
        let eye = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let out = embed_with_projection(&series, &eye, 0.0, 9).unwrap();
        assert_eq!(out.values, series.values);
    }

    #[test]
    fn shape_contract() {
        let series = Series::new(Array2::ones((40, 5)), 0.1, 0.0).unwrap();
        let out = random_embed(&series, 1000, 0.0, 1).unwrap();
        assert_eq!(out.series.values.nrows(), 40);
        assert_eq!(out.series.values.ncols(), 1000);
        assert_eq!(out.projection.dim(), (5, 1000));
    }

    /// Monte-Carlo pseudo-inverse oracle: reconstructing U from the noisy
    /// embedding via the right pseudo-inverse of R keeps the per-component
    /// mean squared error within 3x the injected noise variance.
    #[test]
    fn pseudo_inverse_reconstruction_error_is_bounded() {
        let spec = SdeSpec {
            drift: DriftField::Lorenz96 { dim: 5, forcing: 8.0 },
            eta: 0.0,
            nu: 0.0,
            dt: 0.01,
            seed: 5,
        };
        let mut init = vec![8.0; 5];
        init[0] += 0.3;
        let u = integrate_sde(&spec, 200, &init, 500).unwrap();
        let noise_var = 1.0 / 5.0;

        let mut total_mse = 0.0;
        let n_seeds = 20;
        for seed in 0..n_seeds {
            let emb = random_embed(&u, 1000, noise_var, seed).unwrap();
            // right pseudo-inverse via nalgebra SVD (independent oracle)
            let r = nalgebra::DMatrix::from_fn(5, 1000, |i, j| emb.projection[[i, j]]);
            let pinv = r.pseudo_inverse(1e-12).unwrap(); // 1000 x 5
            let w = nalgebra::DMatrix::from_fn(200, 1000, |i, j| emb.series.values[[i, j]]);
            let rec = &w * &pinv; // 200 x 5
            let mut mse = 0.0;
            for i in 0..200 {
                for j in 0..5 {
                    mse += (rec[(i, j)] - u.values[[i, j]]).powi(2);
                }
            }
            total_mse += mse / (200.0 * 5.0);
        }
        let avg = total_mse / n_seeds as f64;
        assert!(avg < 3.0 * noise_var, "avg reconstruction mse {avg} vs bound {}", 3.0 * noise_var);
    }

    #[test]
    fn projection_rows_have_expected_scale() {
        let series = Series::new(Array2::ones((5, 4)), 1.0, 0.0).unwrap();
        let emb = random_embed(&series, 2000, 0.0, 3).unwrap();
        let row: Array1<f64> = emb.projection.row(0).to_owned();
        let var = row.mapv(|v| v * v).sum() / 2000.0;
        let expect = (1.0f64 / 4.0).powi(2);
        assert!((var - expect).abs() < 0.2 * expect, "row variance {var} vs {expect}");
    }
}
