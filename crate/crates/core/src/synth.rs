//! Seeded synthetic series.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Draws discarded before recording so ARMA output starts near stationarity.
pub const BURN_IN: usize = 500;

/// `offset + amplitude·sin(2π·i/period + phase)` for `i = 0..points`.
pub fn sine(
    points: usize,
    period: f64,
    amplitude: f64,
    offset: f64,
    phase: f64,
) -> Result<Vec<f64>> {
    if period.is_nan() || period <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "period must be positive, got {period}"
        )));
    }
    Ok((0..points)
        .map(|i| offset + amplitude * (std::f64::consts::TAU * i as f64 / period + phase).sin())
        .collect())
}

/// `x_t = c + Σ α_i x_{t−i} + Σ β_j ε_{t−j} + ε_t` with Gaussian `ε ~ N(0, σ²)`,
/// started from zeros and run for [`BURN_IN`] extra steps.
pub fn arma(
    points: usize,
    c: f64,
    alpha: &[f64],
    beta: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let total = points + BURN_IN;
    let mut x = vec![0.0; total];
    let mut e = vec![0.0; total];
    for t in 0..total {
        e[t] = rng.normal(0.0, sigma);
        let ar: f64 = alpha
            .iter()
            .enumerate()
            .filter(|(i, _)| t > *i)
            .map(|(i, a)| a * x[t - i - 1])
            .sum();
        let ma: f64 = beta
            .iter()
            .enumerate()
            .filter(|(j, _)| t > *j)
            .map(|(j, b)| b * e[t - j - 1])
            .sum();
        x[t] = c + ar + ma + e[t];
    }
    Ok(x.split_off(BURN_IN))
}

pub fn ar(points: usize, c: f64, alpha: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    arma(points, c, alpha, &[], sigma, seed)
}

/// `x_0 = start`, `x_t = x_{t−1} + drift + ε_t`.
pub fn random_walk(
    points: usize,
    start: f64,
    drift: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut x = start;
    Ok((0..points)
        .map(|i| {
            if i > 0 {
                x += drift + rng.normal(0.0, sigma);
            }
            x
        })
        .collect())
}
