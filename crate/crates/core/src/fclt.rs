//! Centered, scaled net input of two independent Poisson streams.
//!
//! With arrivals `A` at rate `nλ` and departures `D` at rate `nμ`, the process
//! `(A_t - D_t - n(λ - μ)t)/√n` approaches `√(λ + μ) W_t`. The helpers here
//! simulate it exactly and summarize its moments on a grid.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::NoiseSeed;
use crate::skorokhod::{validate_grid, SampledPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetInputConfig {
    pub n: u32,
    pub lambda: f64,
    pub mu: f64,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub runs: usize,
}

impl NetInputConfig {
    pub fn new(
        n: u32,
        lambda: f64,
        mu: f64,
        horizon: f64,
        grid: Vec<f64>,
        runs: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be positive"));
        }
        for (name, v) in [("lambda", lambda), ("mu", mu), ("horizon", horizon)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if runs == 0 {
            return Err(Error::param("runs", "must be positive"));
        }
        validate_grid(&grid)?;
        if *grid.last().unwrap() > horizon {
            return Err(Error::param("grid", "extends past the horizon"));
        }
        Ok(NetInputConfig {
            n,
            lambda,
            mu,
            horizon,
            grid,
            runs,
        })
    }

    /// Limiting variance of the scaled net input at time `t`.
    pub fn theoretical_variance(&self, t: f64) -> f64 {
        (self.lambda + self.mu) * t
    }
}

/// Poisson counts on `grid` from exponential inter-arrival times.
fn poisson_counts<R: Rng>(rng: &mut R, rate: f64, grid: &[f64]) -> Vec<u64> {
    let mut counts = Vec::with_capacity(grid.len());
    let mut count = 0u64;
    let first: f64 = Exp1.sample(rng);
    let mut next = first / rate;
    for &g in grid {
        while next <= g {
            count += 1;
            let e: f64 = Exp1.sample(rng);
            next += e / rate;
        }
        counts.push(count);
    }
    counts
}

/// One realization of the scaled net input on the configured grid.
pub fn simulate_net_input(config: &NetInputConfig, seed: NoiseSeed) -> SampledPath {
    let nf = f64::from(config.n);
    let mut rng = seed.rng();
    let arrivals = poisson_counts(&mut rng, nf * config.lambda, &config.grid);
    let departures = poisson_counts(&mut rng, nf * config.mu, &config.grid);
    let drift = nf * (config.lambda - config.mu);
    let values = config
        .grid
        .iter()
        .zip(arrivals.iter().zip(&departures))
        .map(|(t, (a, d))| (*a as f64 - *d as f64 - drift * t) / nf.sqrt())
        .collect();
    SampledPath::from_parts(config.grid.clone(), 1, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `m4 / m2² - 3` from central moments; NaN when the samples are constant.
    pub excess_kurtosis: f64,
}

pub fn empirical_moments(samples: &[f64]) -> Result<Moments> {
    let len = samples.len();
    if len < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: len,
        });
    }
    let nf = len as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &s in samples {
        let d = s - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    let variance = m2 / (nf - 1.0);
    let (m2, m4) = (m2 / nf, m4 / nf);
    let excess_kurtosis = if m2 > 0.0 {
        m4 / (m2 * m2) - 3.0
    } else {
        f64::NAN
    };
    Ok(Moments {
        mean,
        variance,
        excess_kurtosis,
    })
}

/// Per-grid-time summary of an ensemble of net-input paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcltRow {
    pub time: f64,
    pub mean: f64,
    pub variance: f64,
    pub excess_kurtosis: f64,
    pub theoretical_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcltReport {
    pub rows: Vec<FcltRow>,
    /// Sample paths indexed by run.
    pub paths: Vec<SampledPath>,
}

impl FcltReport {
    /// Largest relative variance error over the grid, skipping `t = 0`.
    pub fn max_relative_variance_error(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.theoretical_variance > 0.0)
            .map(|r| (r.variance / r.theoretical_variance - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Correlation across runs of the increments over `[t0, t1]` and `[t2, t3]`
    /// given as grid indices.
    pub fn increment_correlation(&self, first: (usize, usize), second: (usize, usize)) -> f64 {
        let inc = |(a, b): (usize, usize)| -> Vec<f64> {
            self.paths
                .iter()
                .map(|p| p.value(b)[0] - p.value(a)[0])
                .collect()
        };
        correlation(&inc(first), &inc(second))
    }
}

pub(crate) fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Runs `config.runs` independent paths in parallel and summarizes them.
pub fn net_input_ensemble(config: &NetInputConfig, master_seed: u64) -> Result<FcltReport> {
    if config.runs < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: config.runs,
        });
    }
    let paths: Vec<SampledPath> = (0..config.runs as u64)
        .into_par_iter()
        .map(|r| simulate_net_input(config, NoiseSeed::new(master_seed, r)))
        .collect();
    let mut rows = Vec::with_capacity(config.grid.len());
    for (k, &t) in config.grid.iter().enumerate() {
        let samples: Vec<f64> = paths.iter().map(|p| p.value(k)[0]).collect();
        let m = empirical_moments(&samples)?;
        rows.push(FcltRow {
            time: t,
            mean: m.mean,
            variance: m.variance,
            excess_kurtosis: m.excess_kurtosis,
            theoretical_variance: config.theoretical_variance(t),
        });
    }
    Ok(FcltReport { rows, paths })
}
