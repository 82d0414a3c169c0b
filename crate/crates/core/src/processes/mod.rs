//! Benchmark process generators and the windowing step that turns raw
//! series into aligned (past, future, time) sample pairs.

pub mod embed;
pub mod hmm;
pub mod sde;

pub use embed::{embed_with_projection, random_embed, EmbeddedSeries};
pub use hmm::{generate_hmm, HmmSpec, Transition};
pub use sde::{integrate_sde, integrate_sde_paths, DriftField, SdePaths, SdeSpec};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A regularly sampled multivariate time series, T rows by D columns.
#[derive(Debug, Clone)]
pub struct Series {
    pub values: Array2<f64>,
    pub dt: f64,
    pub t0: f64,
}

impl Series {
    pub fn new(values: Array2<f64>, dt: f64, t0: f64) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::validation("series must contain at least one row"));
        }
        if !(dt > 0.0) {
            return Err(Error::validation(format!("series dt must be positive, got {dt}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("series contains non-finite values"));
        }
        Ok(Series { values, dt, t0 })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn time_at(&self, row: usize) -> f64 {
        self.t0 + row as f64 * self.dt
    }
}

/// Aligned past/future window pairs. Row `i` of `x` holds the `lx` most
/// recent observations up to the present time `t[i]` (most recent last);
/// row `i` of `y` holds the next `ly` observations.
#[derive(Debug, Clone)]
pub struct SamplePairSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub t: Vec<f64>,
    pub lx: usize,
    pub ly: usize,
    pub dim: usize,
    pub dt: f64,
    /// Row offsets at which each source series begins; consecutive-sample
    /// logic never crosses these boundaries.
    pub segment_starts: Vec<usize>,
}

impl SamplePairSet {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Segment index containing sample `i`.
    pub fn segment_of(&self, i: usize) -> usize {
        match self.segment_starts.binary_search(&i) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
    }

    /// True when samples `i` and `i + n` are consecutive draws of the same
    /// source series at spacing `n * dt`.
    pub fn consecutive(&self, i: usize, n: usize) -> bool {
        let j = i + n;
        if j >= self.len() || self.segment_of(i) != self.segment_of(j) {
            return false;
        }
        (self.t[j] - self.t[i] - n as f64 * self.dt).abs() <= 1e-9
    }

    /// Concatenates pair sets from independent series realizations.
    pub fn concat(parts: Vec<SamplePairSet>) -> Result<SamplePairSet> {
        let Some(first) = parts.first() else {
            return Err(Error::validation("concat: no sample pair sets given"));
        };
        let (lx, ly, dim, dt) = (first.lx, first.ly, first.dim, first.dt);
        for p in &parts {
            if p.lx != lx || p.ly != ly || p.dim != dim || (p.dt - dt).abs() > 1e-12 {
                return Err(Error::validation(
                    "concat: window shapes and dt must match across series",
                ));
            }
        }
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut x = Array2::zeros((n, lx * dim));
        let mut y = Array2::zeros((n, ly * dim));
        let mut t = Vec::with_capacity(n);
        let mut segment_starts = Vec::new();
        let mut row = 0;
        for p in &parts {
            for s in &p.segment_starts {
                segment_starts.push(row + s);
            }
            x.slice_mut(ndarray::s![row..row + p.len(), ..]).assign(&p.x);
            y.slice_mut(ndarray::s![row..row + p.len(), ..]).assign(&p.y);
            t.extend_from_slice(&p.t);
            row += p.len();
        }
        Ok(SamplePairSet { x, y, t, lx, ly, dim, dt, segment_starts })
    }
}

/// Slides windows of `lx` past and `ly` future steps over a series.
pub fn window_pairs(series: &Series, lx: usize, ly: usize, stride: usize) -> Result<SamplePairSet> {
    if lx == 0 || ly == 0 {
        return Err(Error::validation("window lengths must be at least 1"));
    }
    if stride == 0 {
        return Err(Error::validation("stride must be at least 1"));
    }
    let t_len = series.len();
    if t_len < lx + ly {
        return Err(Error::validation(format!(
            "series too short: {t_len} steps cannot fit lx={lx} plus ly={ly}"
        )));
    }
    let d = series.dim();
    let n = (t_len - lx - ly) / stride + 1;
    let mut x = Array2::zeros((n, lx * d));
    let mut y = Array2::zeros((n, ly * d));
    let mut t = Vec::with_capacity(n);
    for i in 0..n {
        let start = i * stride;
        for step in 0..lx {
            for c in 0..d {
                x[[i, step * d + c]] = series.values[[start + step, c]];
            }
        }
        for step in 0..ly {
            for c in 0..d {
                y[[i, step * d + c]] = series.values[[start + lx + step, c]];
            }
        }
        t.push(series.time_at(start + lx - 1));
    }
    Ok(SamplePairSet {
        x,
        y,
        t,
        lx,
        ly,
        dim: d,
        dt: series.dt,
        segment_starts: vec![0],
    })
}

/// Windows each series independently and concatenates the results.
pub fn window_pairs_multi(
    series: &[Series],
    lx: usize,
    ly: usize,
    stride: usize,
) -> Result<SamplePairSet> {
    let parts = series
        .iter()
        .map(|s| window_pairs(s, lx, ly, stride))
        .collect::<Result<Vec<_>>>()?;
    SamplePairSet::concat(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ramp(t_len: usize) -> Series {
        let values = Array2::from_shape_fn((t_len, 1), |(i, _)| i as f64);
        Series::new(values, 1.0, 0.0).unwrap()
    }

    #[test]
    fn exact_fit_yields_single_pair() {
        let p = window_pairs(&ramp(15), 10, 5, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.x.row(0).to_vec(), (0..10).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(p.y.row(0).to_vec(), (10..15).map(|v| v as f64).collect::<Vec<_>>());
        assert_abs_diff_eq!(p.t[0], 9.0);
    }

    #[test]
    fn window_count_and_shift_alignment() {
        // index-arithmetic oracle on a ramp: pair 0's future window must
        // reappear as the tail of pair 5's past window
        let p = window_pairs(&ramp(20), 10, 5, 1).unwrap();
        assert_eq!(p.len(), 6);
        let y0 = p.y.row(0).to_vec();
        let x5 = p.x.row(5).to_vec();
        assert_eq!(&x5[5..], &y0[..]);
    }

    #[test]
    fn windows_are_gap_free_on_ramp() {
        let p = window_pairs(&ramp(40), 7, 3, 2).unwrap();
        for i in 0..p.len() {
            let row: Vec<f64> = p.x.row(i).iter().chain(p.y.row(i).iter()).copied().collect();
            for w in row.windows(2) {
                assert_abs_diff_eq!(w[1] - w[0], 1.0, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(window_pairs(&ramp(14), 10, 5, 1).is_err());
    }

    #[test]
    fn concat_tracks_segments() {
        let p1 = window_pairs(&ramp(20), 5, 2, 1).unwrap();
        let p2 = window_pairs(&ramp(18), 5, 2, 1).unwrap();
        let n1 = p1.len();
        let all = SamplePairSet::concat(vec![p1, p2]).unwrap();
        assert_eq!(all.segment_starts, vec![0, n1]);
        assert!(all.consecutive(0, 1));
        assert!(!all.consecutive(n1 - 1, 1));
        assert!(all.consecutive(n1, 1));
    }
}
