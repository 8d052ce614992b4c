//! Ensemble reductions and small fitting helpers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Running sums for a sample mean and its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accumulator {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    /// Sample standard deviation over √n.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub observable: String,
    pub rows: Vec<SeriesRow>,
    pub metadata: BTreeMap<String, String>,
}

impl EnsembleSeries {
    /// One row per time from per-time accumulators.
    pub fn from_accumulators(observable: impl Into<String>, times: &[f64], accs: &[Accumulator]) -> Self {
        let rows = times
            .iter()
            .zip(accs)
            .map(|(&t, a)| SeriesRow {
                t,
                mean: a.mean(),
                stderr: a.stderr(),
                n: a.count(),
            })
            .collect();
        Self {
            observable: observable.into(),
            rows,
            metadata: BTreeMap::new(),
        }
    }

    /// Series from per-realization traces, `traces[i][j]` being realization `i` at time `j`.
    pub fn from_traces(observable: impl Into<String>, times: &[f64], traces: &[Vec<f64>]) -> Self {
        let mut accs = vec![Accumulator::default(); times.len()];
        for trace in traces {
            for (a, &x) in accs.iter_mut().zip(trace) {
                a.push(x);
            }
        }
        Self::from_accumulators(observable, times, &accs)
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean).collect()
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares y = a + b x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Least-squares slope of y = b x through the origin.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    sxy / sxx
}

/// Delete-one-group jackknife: the estimate on all data and its standard error.
///
/// `estimate` receives the indices of the groups to include.
pub fn jackknife<F: FnMut(&[usize]) -> f64>(groups: usize, mut estimate: F) -> (f64, f64) {
    let all: Vec<usize> = (0..groups).collect();
    let full = estimate(&all);
    if groups < 2 {
        return (full, f64::NAN);
    }
    let leave_out: Vec<f64> = (0..groups)
        .map(|skip| {
            let kept: Vec<usize> = all.iter().copied().filter(|&g| g != skip).collect();
            estimate(&kept)
        })
        .collect();
    let m = leave_out.iter().sum::<f64>() / groups as f64;
    let var = leave_out.iter().map(|x| (x - m).powi(2)).sum::<f64>() * (groups - 1) as f64 / groups as f64;
    (full, var.sqrt())
}
