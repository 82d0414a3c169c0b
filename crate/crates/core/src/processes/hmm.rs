//! Edge-emitting hidden Markov model generators for the discrete benchmark
//! processes.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Series;
use crate::error::{Error, Result};

/// One labeled transition: from state, to state, emitted symbol, probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub symbol: u32,
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct HmmSpec {
    pub states: Vec<String>,
    pub transitions: Vec<Transition>,
    pub initial: Vec<f64>,
}

impl HmmSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::validation("hmm: no states"));
        }
        if self.initial.len() != n {
            return Err(Error::validation("hmm: initial distribution length mismatch"));
        }
        if self.initial.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::validation("hmm: initial probabilities must lie in [0,1]"));
        }
        let init_sum: f64 = self.initial.iter().sum();
        if (init_sum - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "hmm: initial distribution sums to {init_sum}, expected 1"
            )));
        }
        let mut out = vec![0.0f64; n];
        for tr in &self.transitions {
            if tr.from >= n || tr.to >= n {
                return Err(Error::validation("hmm: transition references unknown state"));
            }
            if !(0.0..=1.0).contains(&tr.prob) {
                return Err(Error::validation(format!(
                    "hmm: transition probability {} out of [0,1]",
                    tr.prob
                )));
            }
            out[tr.from] += tr.prob;
        }
        for (s, &total) in out.iter().enumerate() {
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::validation(format!(
                    "hmm: outgoing probabilities from state {} sum to {}, expected 1",
                    self.states[s], total
                )));
            }
        }
        Ok(())
    }

    /// The Even Process: binary output where 1s occur in even-length blocks.
    /// Stationary when started from Pr = (2/3, 1/3).
    pub fn even_process() -> HmmSpec {
        HmmSpec {
            states: vec!["s0".into(), "s1".into()],
            transitions: vec![
                Transition { from: 0, to: 0, symbol: 0, prob: 0.5 },
                Transition { from: 0, to: 1, symbol: 1, prob: 0.5 },
                Transition { from: 1, to: 0, symbol: 1, prob: 1.0 },
            ],
            initial: vec![2.0 / 3.0, 1.0 / 3.0],
        }
    }

    /// The mess3 nonunifilar generator over three symbols and three states.
    /// Standard parameters are a = 0.6, x = 0.15.
    pub fn mess3(a: f64, x: f64) -> HmmSpec {
        let b = (1.0 - a) / 2.0;
        let y = 1.0 - 2.0 * x;
        let mut transitions = Vec::new();
        let wrap = |i: i64| -> usize { i.rem_euclid(3) as usize };
        for i in 0..3i64 {
            let s = wrap(i);
            let next = wrap(i + 1);
            let prev = wrap(i - 1);
            let sym = |j: i64| -> u32 { wrap(j) as u32 };
            // self loop, total a*y + 2*b*x
            transitions.push(Transition { from: s, to: s, symbol: sym(i), prob: a * y });
            transitions.push(Transition { from: s, to: s, symbol: sym(i - 1), prob: b * x });
            transitions.push(Transition { from: s, to: s, symbol: sym(i + 1), prob: b * x });
            // forward
            transitions.push(Transition { from: s, to: next, symbol: sym(i), prob: a * x });
            transitions.push(Transition { from: s, to: next, symbol: sym(i - 1), prob: b * x });
            transitions.push(Transition { from: s, to: next, symbol: sym(i + 1), prob: b * y });
            // backward
            transitions.push(Transition { from: s, to: prev, symbol: sym(i), prob: a * x });
            transitions.push(Transition { from: s, to: prev, symbol: sym(i - 1), prob: b * y });
            transitions.push(Transition { from: s, to: prev, symbol: sym(i + 1), prob: b * x });
        }
        HmmSpec {
            states: vec!["s0".into(), "s1".into(), "s2".into()],
            transitions,
            initial: vec![1.0 / 3.0; 3],
        }
    }
}

/// Samples a symbol sequence from the HMM; the hidden state path is
/// discarded. Bit-reproducible for a fixed seed.
pub fn generate_hmm(spec: &HmmSpec, n_steps: usize, seed: u64) -> Result<Series> {
    spec.validate()?;
    if n_steps == 0 {
        return Err(Error::validation("hmm: n_steps must be at least 1"));
    }
    let n_states = spec.states.len();
    // per-state cumulative edge tables
    let mut edges: Vec<Vec<&Transition>> = vec![Vec::new(); n_states];
    for tr in &spec.transitions {
        edges[tr.from].push(tr);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sample_index(&spec.initial, rng.random::<f64>());
    let mut values = Array2::zeros((n_steps, 1));
    for k in 0..n_steps {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = edges[state].last().copied();
        for tr in &edges[state] {
            acc += tr.prob;
            if u < acc {
                chosen = Some(tr);
                break;
            }
        }
        let tr = chosen.ok_or_else(|| Error::numeric("hmm: state with no outgoing edges"))?;
        values[[k, 0]] = tr.symbol as f64;
        state = tr.to;
    }
    Series::new(values, 1.0, 0.0)
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_process_symbol_frequencies() {
        let series = generate_hmm(&HmmSpec::even_process(), 100_000, 42).unwrap();
        let ones = series.values.iter().filter(|&&v| v == 1.0).count() as f64;
        let p1 = ones / 100_000.0;
        assert!((p1 - 2.0 / 3.0).abs() < 0.01, "P(1) = {p1}");
    }

    #[test]
    fn even_process_blocks_are_even() {
        // start pinned to s0 so every maximal completed block of 1s is even
        let mut spec = HmmSpec::even_process();
        spec.initial = vec![1.0, 0.0];
        let series = generate_hmm(&spec, 20_000, 3).unwrap();
        let mut run = 0usize;
        for &v in series.values.column(0) {
            if v == 1.0 {
                run += 1;
            } else {
                assert_eq!(run % 2, 0, "odd block of 1s before a 0");
                run = 0;
            }
        }
    }

    #[test]
    fn mess3_self_transition_probability() {
        // hand evaluation: alpha = a*y + 2*b*x = 0.48 for a=0.6, x=0.15
        let spec = HmmSpec::mess3(0.6, 0.15);
        spec.validate().unwrap();
        let alpha: f64 = spec
            .transitions
            .iter()
            .filter(|t| t.from == 0 && t.to == 0)
            .map(|t| t.prob)
            .sum();
        assert!((alpha - 0.48).abs() < 1e-12, "alpha = {alpha}");
    }

    #[test]
    fn invalid_probability_sum_is_rejected() {
        let spec = HmmSpec {
            states: vec!["a".into()],
            transitions: vec![Transition { from: 0, to: 0, symbol: 0, prob: 0.7 }],
            initial: vec![1.0],
        };
        assert!(matches!(generate_hmm(&spec, 10, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = generate_hmm(&HmmSpec::mess3(0.6, 0.15), 5000, 11).unwrap();
        let b = generate_hmm(&HmmSpec::mess3(0.6, 0.15), 5000, 11).unwrap();
        assert_eq!(a.values, b.values);
    }
}
