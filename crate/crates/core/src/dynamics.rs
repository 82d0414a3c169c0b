//! The causal-state evolution operator: estimation from time-shifted
//! eigenvector products and application to state distributions.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::DiffusionBasis;

/// Reduced-basis evolution operator advancing distributions by `step * dt`.
/// Row/column 0 carry the trivial component so that a posteriori
/// normalization is a plain divide by the first coefficient.
#[derive(Debug, Clone)]
pub struct EvolutionOperator {
    pub matrix: Array2<f64>,
    /// Sample spacing of the underlying series.
    pub dt: f64,
    /// The operator advances `step` sample intervals per application.
    pub step: usize,
    /// Index pairs that entered the estimate.
    pub n_train: usize,
}

impl EvolutionOperator {
    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }

    /// Time advanced by one application.
    pub fn dt_advanced(&self) -> f64 {
        self.dt * self.step as f64
    }

    /// Matrix power by repeated squaring.
    pub fn power(&self, steps: usize) -> Array2<f64> {
        let k = self.order();
        let mut result = Array2::eye(k);
        if steps == 0 {
            return result;
        }
        let mut base = self.matrix.clone();
        let mut e = steps;
        while e > 0 {
            if e & 1 == 1 {
                result = result.dot(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.dot(&base);
            }
        }
        result
    }
}

/// Distribution over causal states expressed by its coefficients in the
/// left-eigenvector basis; optionally carries the raw weights over the
/// reference states it was built from.
#[derive(Debug, Clone)]
pub struct StateDistribution {
    /// Length M+1; first coefficient is 1 after normalization.
    pub coeffs: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl StateDistribution {
    /// Coefficients of a distribution given as nonnegative weights over the
    /// training samples: `c_a = sum_i w_i psi_{i,a}` with `w` normalized.
    pub fn from_weights(weights: &[f64], basis: &DiffusionBasis) -> Result<Self> {
        let n = basis.n();
        if weights.len() != n {
            return Err(Error::validation(format!(
                "weights length {} does not match {} reference states",
                weights.len(),
                n
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::validation("weights must sum to a positive finite value"));
        }
        let k = basis.eigenvalues.len();
        let mut coeffs = vec![0.0; k];
        for (i, &w) in weights.iter().enumerate() {
            let wn = w / total;
            for a in 0..k {
                coeffs[a] += wn * basis.psi[[i, a]];
            }
        }
        Ok(StateDistribution {
            coeffs,
            weights: Some(weights.iter().map(|w| w / total).collect()),
        })
    }

    /// Dirac distribution concentrated on training sample `i`.
    pub fn delta(i: usize, basis: &DiffusionBasis) -> Result<Self> {
        let n = basis.n();
        if i >= n {
            return Err(Error::validation(format!("sample index {i} out of range {n}")));
        }
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        StateDistribution::from_weights(&w, basis)
    }

    /// The limit density: coefficient vector (1, 0, ..., 0).
    pub fn limit(basis: &DiffusionBasis) -> Self {
        let mut coeffs = vec![0.0; basis.eigenvalues.len()];
        coeffs[0] = 1.0;
        StateDistribution { coeffs, weights: None }
    }

    /// Divides by the first coefficient.
    pub fn normalize(&mut self) -> Result<()> {
        let c0 = self.coeffs[0];
        if !c0.is_finite() || c0.abs() < 1e-300 {
            return Err(Error::DegenerateEvolution(format!(
                "first coefficient is {c0}; cannot normalize"
            )));
        }
        for c in self.coeffs.iter_mut() {
            *c /= c0;
        }
        Ok(())
    }

    /// Expected reduced coordinates `lambda_m c_m`, m = 1..=M.
    pub fn coords(&self, basis: &DiffusionBasis) -> Vec<f64> {
        (1..basis.eigenvalues.len())
            .map(|m| basis.eigenvalues[m] * self.coeffs[m])
            .collect()
    }
}

/// Estimates the evolution operator over `n` sample intervals from the
/// time-shifted product `psi_{n:N}^T Phi_{1:N-n}`.
///
/// Index pairs must be consecutive samples of the same source series at
/// spacing `n * dt`; pairs spanning series boundaries are excluded.
/// `times` and `segment_starts` come from the sample pair set the basis
/// was fitted on.
pub fn estimate_operator(
    basis: &DiffusionBasis,
    times: &[f64],
    segment_starts: &[usize],
    dt: f64,
    n: usize,
) -> Result<EvolutionOperator> {
    let n_samples = basis.n();
    if times.len() != n_samples {
        return Err(Error::validation("times length does not match the basis"));
    }
    if n == 0 || n >= n_samples {
        return Err(Error::validation(format!(
            "shift n = {n} must lie in [1, {})",
            n_samples
        )));
    }
    let seg_of = |i: usize| -> usize {
        match segment_starts.binary_search(&i) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
    };
    let k = basis.eigenvalues.len();
    let mut matrix = Array2::<f64>::zeros((k, k));
    let mut pairs = 0usize;
    for i in 0..n_samples - n {
        let j = i + n;
        if seg_of(i) != seg_of(j) {
            continue;
        }
        if (times[j] - times[i] - n as f64 * dt).abs() > 1e-9 {
            continue;
        }
        pairs += 1;
        for a in 0..k {
            let shifted = basis.psi[[j, a]];
            for b in 0..k {
                matrix[[a, b]] += shifted * basis.phi[[i, b]];
            }
        }
    }
    if pairs == 0 {
        return Err(Error::validation(
            "no valid consecutive sample pairs available for the operator estimate",
        ));
    }
    Ok(EvolutionOperator { matrix, dt, step: n, n_train: pairs })
}

/// Applies the evolution operator `steps` times and renormalizes.
pub fn evolve(
    q: &StateDistribution,
    operator: &EvolutionOperator,
    steps: usize,
) -> Result<StateDistribution> {
    let k = operator.order();
    if q.coeffs.len() != k {
        return Err(Error::validation(format!(
            "distribution has {} coefficients, operator order is {k}",
            q.coeffs.len()
        )));
    }
    let mut coeffs = q.coeffs.clone();
    if steps > 0 && steps <= 32 {
        for _ in 0..steps {
            coeffs = apply(&operator.matrix, &coeffs);
        }
    } else if steps > 32 {
        let pow = operator.power(steps);
        coeffs = apply(&pow, &coeffs);
    }
    let mut out = StateDistribution { coeffs, weights: None };
    out.normalize()?;
    Ok(out)
}

fn apply(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    let k = m.nrows();
    let mut out = vec![0.0; k];
    for a in 0..k {
        let mut acc = 0.0;
        for b in 0..k {
            acc += m[[a, b]] * v[b];
        }
        out[a] = acc;
    }
    out
}

/// Relative discrepancy between the direct `n`-step estimate and the
/// composed one-step operator applied `n` times, averaged over probe
/// distributions. Exposed as a fit diagnostic.
pub fn power_consistency(
    direct: &EvolutionOperator,
    single: &EvolutionOperator,
    probes: &[StateDistribution],
) -> Result<f64> {
    if direct.step % single.step != 0 {
        return Err(Error::validation("operator steps are not commensurate"));
    }
    let reps = direct.step / single.step;
    let mut total = 0.0;
    let mut count = 0usize;
    for q in probes {
        let a = evolve(q, direct, 1)?;
        let b = evolve(q, single, reps)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            num += (x - y).powi(2);
            den += x.powi(2);
        }
        if den > 0.0 {
            total += (num / den).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::numeric("no usable probes for the consistency diagnostic"));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{solve_weights, state_gram, ImplicitStateGram};
    use crate::geometry::{diffusion_basis, StateSimilarity};
    use crate::kernels::{gram, Direction, KernelSpec};
    use crate::processes::{window_pairs, SamplePairSet, Series};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Ornstein-Uhlenbeck test process (test-only oracle data source).
    fn ou_series(n: usize, dt: f64, seed: u64) -> Series {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = 1.0;
        let sigma = 0.6;
        let mut x = 0.0f64;
        let mut values = Array2::zeros((n, 1));
        for i in 0..n {
            let g: f64 = StandardNormal.sample(&mut rng);
            x += -theta * x * dt + sigma * dt.sqrt() * g;
            values[[i, 0]] = x;
        }
        Series::new(values, dt, 0.0).unwrap()
    }

    fn fit_ou(n_pairs: usize, seed: u64) -> (SamplePairSet, crate::geometry::DiffusionBasis) {
        let series = ou_series(n_pairs + 4, 0.05, seed);
        let pairs = window_pairs(&series, 2, 2, 1).unwrap();
        let spec = KernelSpec::gaussian(0.4, 0.5, 2, 1).unwrap();
        let gx = gram(pairs.x.view(), &spec, Direction::Past).unwrap();
        let gy = gram(pairs.y.view(), &spec, Direction::Future).unwrap();
        let op = ImplicitStateGram::new(gx, gy, 1e-3).unwrap();
        let basis = diffusion_basis(StateSimilarity::Operator(&op), 6, 0.0, 1).unwrap();
        (pairs, basis)
    }

    #[test]
    fn degenerate_single_cluster_operator_is_identity() {
        // all states identical: M = 0 and E reduces to the trivial [c]
        let sim = Array2::from_elem((40, 40), 1.0);
        let basis = diffusion_basis(StateSimilarity::Dense(sim.view()), 3, 0.0, 1).unwrap();
        assert_eq!(basis.m(), 0);
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let op = estimate_operator(&basis, &times, &[0], 0.1, 1).unwrap();
        assert_eq!(op.order(), 1);
        let q = StateDistribution::limit(&basis);
        let evolved = evolve(&q, &op, 5).unwrap();
        assert_abs_diff_eq!(evolved.coeffs[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn limit_density_is_a_fixed_point() {
        let (pairs, basis) = fit_ou(900, 5);
        let op = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 1).unwrap();
        let q = StateDistribution::limit(&basis);
        for steps in [1usize, 4, 16] {
            let evolved = evolve(&q, &op, steps).unwrap();
            assert_abs_diff_eq!(evolved.coeffs[0], 1.0, epsilon = 1e-12);
            for m in 1..evolved.coeffs.len() {
                assert!(
                    evolved.coeffs[m].abs() < 1e-3,
                    "coefficient {m} = {} after {steps} steps",
                    evolved.coeffs[m]
                );
            }
        }
    }

    #[test]
    fn mixing_pulls_any_distribution_to_the_limit() {
        let (pairs, basis) = fit_ou(900, 6);
        let op = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 1).unwrap();
        let q0 = StateDistribution::delta(17, &basis).unwrap();
        let far = evolve(&q0, &op, 4000).unwrap();
        for m in 1..far.coeffs.len() {
            assert!(far.coeffs[m].abs() < 0.05, "coefficient {m} = {}", far.coeffs[m]);
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let (pairs, basis) = fit_ou(400, 7);
        let op = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 1).unwrap();
        let q = StateDistribution::delta(3, &basis).unwrap();
        let same = evolve(&q, &op, 0).unwrap();
        for (a, b) in q.coeffs.iter().zip(&same.coeffs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut q = StateDistribution { coeffs: vec![2.0, 0.5, -0.2], weights: None };
        q.normalize().unwrap();
        let once = q.coeffs.clone();
        q.normalize().unwrap();
        assert_eq!(once, q.coeffs);
    }

    #[test]
    fn evolution_is_linear_before_normalization() {
        let (pairs, basis) = fit_ou(400, 8);
        let op = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 1).unwrap();
        let qa = StateDistribution::delta(5, &basis).unwrap();
        let qb = StateDistribution::delta(50, &basis).unwrap();
        let combo: Vec<f64> = qa
            .coeffs
            .iter()
            .zip(&qb.coeffs)
            .map(|(a, b)| 0.3 * a + 0.7 * b)
            .collect();
        let lhs = apply(&op.matrix, &combo);
        let ra = apply(&op.matrix, &qa.coeffs);
        let rb = apply(&op.matrix, &qb.coeffs);
        for i in 0..lhs.len() {
            assert_abs_diff_eq!(lhs[i], 0.3 * ra[i] + 0.7 * rb[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_segment_pairs_are_excluded() {
        let (pairs_a, _) = fit_ou(60, 9);
        let pairs = SamplePairSet::concat(vec![pairs_a.clone(), pairs_a]).unwrap();
        let spec = KernelSpec::gaussian(0.4, 0.5, 2, 1).unwrap();
        let gx = gram(pairs.x.view(), &spec, Direction::Past).unwrap();
        let gy = gram(pairs.y.view(), &spec, Direction::Future).unwrap();
        let w = solve_weights(&gx, 1e-3).unwrap();
        let gs = state_gram(&w, &gy).unwrap();
        let basis = diffusion_basis(StateSimilarity::Dense(gs.entries.view()), 4, 0.0, 1).unwrap();
        let op = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 1).unwrap();
        // one boundary pair dropped
        assert_eq!(op.n_train, pairs.len() - 2);
    }

    #[test]
    fn no_valid_pairs_is_an_error() {
        let (_, basis) = fit_ou(50, 10);
        // corrupt the time vector so no pair is consecutive
        let times: Vec<f64> = (0..basis.n()).map(|i| i as f64 * 7.77).collect();
        assert!(estimate_operator(&basis, &times, &[0], 0.05, 1).is_err());
    }

    #[test]
    fn two_step_direct_vs_squared_on_ou() {
        // consistency of E(2 dt) against E(dt)^2 over random distributions,
        // improving with sample size
        let mut discrepancies = Vec::new();
        for &n in &[2000usize, 8000] {
            let (pairs, basis) = fit_ou(n, 11);
            let e1 = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 1).unwrap();
            let e2 = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let probes: Vec<StateDistribution> = (0..50)
                .map(|_| {
                    let w: Vec<f64> = (0..basis.n())
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            g.abs()
                        })
                        .collect();
                    StateDistribution::from_weights(&w, &basis).unwrap()
                })
                .collect();
            let d = power_consistency(&e2, &e1, &probes).unwrap();
            discrepancies.push(d);
        }
        assert!(
            discrepancies[1] < 0.15,
            "mean relative discrepancy {} at N=8000",
            discrepancies[1]
        );
        assert!(
            discrepancies[1] <= discrepancies[0] + 0.02,
            "discrepancy should shrink with N: {discrepancies:?}"
        );
    }

    #[test]
    fn delta_evolves_toward_observed_successor() {
        let (pairs, basis) = fit_ou(900, 12);
        let op = estimate_operator(&basis, &pairs.t, &pairs.segment_starts, pairs.dt, 1).unwrap();
        let mut cosines = Vec::new();
        for i in (10..800).step_by(13) {
            let q = StateDistribution::delta(i, &basis).unwrap();
            let next = evolve(&q, &op, 1).unwrap();
            let predicted = next.coords(&basis);
            let actual: Vec<f64> = (1..basis.eigenvalues.len())
                .map(|m| basis.eigenvalues[m] * basis.psi[[i + 1, m]])
                .collect();
            let dot: f64 = predicted.iter().zip(&actual).map(|(a, b)| a * b).sum();
            let na: f64 = predicted.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb: f64 = actual.iter().map(|a| a * a).sum::<f64>().sqrt();
            if na > 1e-12 && nb > 1e-12 {
                cosines.push(dot / (na * nb));
            }
        }
        cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = cosines[cosines.len() / 2];
        assert!(median > 0.9, "median successor cosine similarity {median}");
    }
}
