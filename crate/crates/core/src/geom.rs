//! Small-sample bias of the geometric-distribution MLE and its Firth
//! correction, estimated by Monte Carlo over a range of sample sizes.
//!
//! Samples count tosses up to and including the first success, so the
//! support is `{1, 2, ...}` and `E[Y] = 1/β`.

use rand::Rng;
use rand_distr::Open01;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct GeomExperimentConfig {
    pub beta_star: f64,
    pub sample_sizes: Vec<usize>,
    pub trials_per_size: usize,
    pub seed: u64,
}

impl Default for GeomExperimentConfig {
    fn default() -> Self {
        Self {
            beta_star: 0.5,
            sample_sizes: vec![4, 8, 16, 32, 64, 128],
            trials_per_size: 200_000,
            seed: 0,
        }
    }
}

impl GeomExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_star > 0.0 && self.beta_star < 1.0) {
            return Err(Error::Config(format!(
                "beta must lie strictly between 0 and 1, got {}",
                self.beta_star
            )));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::Config("at least one sample size is required".into()));
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("sample sizes must be >= 2, got {n}")));
        }
        if self.trials_per_size == 0 {
            return Err(Error::Config("trials_per_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// `n` draws by inverse CDF: `k = ceil(ln u / ln(1 - β))`.
pub fn sample_geometric<R: Rng + ?Sized>(beta: f64, n: usize, rng: &mut R) -> Result<Vec<u64>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must be in (0, 1), got {beta}")));
    }
    let denom = (1.0 - beta).ln();
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            let k = (u.ln() / denom).ceil();
            if k < 1.0 {
                1
            } else {
                k as u64
            }
        })
        .collect())
}

fn mean(samples: &[u64]) -> f64 {
    samples.iter().map(|&v| v as f64).sum::<f64>() / samples.len() as f64
}

/// `1 / ȳ`.
pub fn mle_geometric(samples: &[u64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("MLE needs at least one sample"));
    }
    Ok(1.0 / mean(samples))
}

/// `(N - 1) / (N ȳ - 1)`.
pub fn firth_geometric(samples: &[u64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "Firth estimate needs at least 2 samples, got {n}"
        )));
    }
    let total: f64 = samples.iter().map(|&v| v as f64).sum();
    Ok((n as f64 - 1.0) / (total - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub n: usize,
    pub mean_mle: f64,
    pub mean_firth: f64,
    pub bias_mle: f64,
    pub bias_firth: f64,
    /// Standard error of the mean estimate; NaN with a single trial.
    pub se_mle: f64,
    pub se_firth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCurve {
    pub rows: Vec<BiasRow>,
    /// Least-squares slope of `ln |bias_mle|` against `ln N`.
    pub slope_mle: f64,
    pub trials_per_size: usize,
}

fn trial_estimates(config: &GeomExperimentConfig, n: usize, trial: usize) -> (f64, f64) {
    let size_seed = seed::derive(config.seed, "geom-size", n as u64);
    let mut rng = seed::child_rng(size_seed, "geom-trial", trial as u64);
    let samples = sample_geometric(config.beta_star, n, &mut rng).expect("validated beta");
    (
        mle_geometric(&samples).expect("non-empty"),
        firth_geometric(&samples).expect("n >= 2"),
    )
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let m = values.clone().sum::<f64>() / count as f64;
    if count < 2 {
        return (m, f64::NAN);
    }
    let var = values.map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64;
    (m, (var / count as f64).sqrt())
}

/// Monte Carlo MLE and Firth means per sample size, with the fitted
/// log-log slope of the MLE bias.
pub fn bias_curve(config: &GeomExperimentConfig) -> Result<BiasCurve> {
    config.validate()?;
    let trials = config.trials_per_size;
    let mut rows = Vec::with_capacity(config.sample_sizes.len());
    for &n in &config.sample_sizes {
        let estimates = crate::par_map_indexed(trials, |t| trial_estimates(config, n, t));
        let (mean_mle, se_mle) = mean_and_se(estimates.iter().map(|e| e.0), trials);
        let (mean_firth, se_firth) = mean_and_se(estimates.iter().map(|e| e.1), trials);
        rows.push(BiasRow {
            n,
            mean_mle,
            mean_firth,
            bias_mle: mean_mle - config.beta_star,
            bias_firth: mean_firth - config.beta_star,
            se_mle,
            se_firth,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n as f64).ln(), r.bias_mle.abs().ln()))
        .collect();
    Ok(BiasCurve {
        slope_mle: least_squares_slope(&points),
        rows,
        trials_per_size: trials,
    })
}

/// Unweighted least-squares slope; NaN for fewer than two distinct x.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Below this many trials per size the CSV carries a caution column.
pub const LOW_TRIALS: usize = 1000;

impl BiasCurve {
    pub fn to_csv(&self) -> String {
        let caution = self.trials_per_size < LOW_TRIALS;
        let mut out = String::from("n,mean_mle,mean_firth,bias_mle,bias_firth,se_mle,se_firth");
        if caution {
            out.push_str(",caution");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                r.n, r.mean_mle, r.mean_firth, r.bias_mle, r.bias_firth, r.se_mle, r.se_firth
            ));
            if caution {
                out.push_str(&format!(
                    ",high variance: {} trials per size",
                    self.trials_per_size
                ));
            }
            out.push('\n');
        }
        out
    }
}
