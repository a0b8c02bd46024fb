//! Error bars for correlated time series.

use serde::{Deserialize, Serialize};

use super::McError;

/// Monte Carlo estimate with an autocorrelation-aware error bar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub mean: f64,
    pub std_error: f64,
    /// Integrated autocorrelation time in units of the sampling interval.
    pub tau_int: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub stream: u64,
}

/// Window constant for the automatic truncation of the autocorrelation sum.
const SOKAL_C: f64 = 6.0;

impl EstimatorReport {
    /// Mean of a stationary series with `tau_int` from self-consistent windowing.
    pub fn from_series(xs: &[f64], seed: u64, stream: u64) -> Result<Self, McError> {
        let n = xs.len();
        if n < 8 {
            return Err(McError::TooFewSamples(n));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let tau_int = if var > 0.0 { integrated_time(xs, mean, var) } else { 0.5 };
        let std_error = (var * 2.0 * tau_int / n as f64).sqrt();
        Ok(EstimatorReport { mean, std_error, tau_int, n_samples: n, seed, stream })
    }

    /// Mean over independent replicas (or long batches).
    pub fn from_replicas(xs: &[f64], seed: u64, stream: u64) -> Result<Self, McError> {
        let n = xs.len();
        if n < 2 {
            return Err(McError::TooFewSamples(n));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(EstimatorReport { mean, std_error: (var / n as f64).sqrt(), tau_int: 0.5, n_samples: n, seed, stream })
    }

    /// Inverse-variance combination of independent reports.
    pub fn combine(reports: &[EstimatorReport]) -> Option<EstimatorReport> {
        let first = reports.first()?;
        if reports.iter().any(|r| r.std_error <= 0.0) {
            let n = reports.len() as f64;
            return Some(EstimatorReport {
                mean: reports.iter().map(|r| r.mean).sum::<f64>() / n,
                std_error: 0.0,
                tau_int: reports.iter().map(|r| r.tau_int).fold(0.0, f64::max),
                n_samples: reports.iter().map(|r| r.n_samples).sum(),
                seed: first.seed,
                stream: first.stream,
            });
        }
        let w: Vec<f64> = reports.iter().map(|r| r.std_error.powi(-2)).collect();
        let sw: f64 = w.iter().sum();
        Some(EstimatorReport {
            mean: reports.iter().zip(&w).map(|(r, w)| r.mean * w).sum::<f64>() / sw,
            std_error: sw.sqrt().recip(),
            tau_int: reports.iter().map(|r| r.tau_int).fold(0.0, f64::max),
            n_samples: reports.iter().map(|r| r.n_samples).sum(),
            seed: first.seed,
            stream: first.stream,
        })
    }

    pub fn within(&self, value: f64, sigmas: f64) -> bool {
        (self.mean - value).abs() <= sigmas * self.std_error
    }
}

fn integrated_time(xs: &[f64], mean: f64, var: f64) -> f64 {
    let n = xs.len();
    let mut tau = 0.5;
    for t in 1..n / 2 {
        let c: f64 = xs[..n - t].iter().zip(&xs[t..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>()
            / ((n - t) as f64 * var);
        tau += c;
        if t as f64 >= SOKAL_C * tau {
            break;
        }
    }
    tau.max(0.5)
}

/// Mean and standard error of `f(batch)` over contiguous batches of a series.
pub fn batch_means<F: Fn(&[f64]) -> f64>(xs: &[f64], batches: usize, f: F) -> Result<(f64, f64), McError> {
    if batches < 2 || xs.len() < batches {
        return Err(McError::TooFewSamples(xs.len()));
    }
    let len = xs.len() / batches;
    let vals: Vec<f64> = (0..batches).map(|b| f(&xs[b * len..(b + 1) * len])).collect();
    let m = vals.iter().sum::<f64>() / batches as f64;
    let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((m, (v / batches as f64).sqrt()))
}
