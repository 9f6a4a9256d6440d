//! AR(p) by ordinary least squares and ARIMA(p, d, q) by the two-stage
//! Hannan–Rissanen regression, with one-step forecasts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};

/// `d`-fold first differences; the result is `d` shorter than `series`.
pub fn difference(series: &[f64], d: usize) -> Result<Vec<f64>> {
    if series.len() <= d {
        return Err(Error::SeriesTooShort {
            needed: d + 1,
            got: series.len(),
        });
    }
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Inverse of [`difference`]: integrates `diffs` forward from the `d` original
/// values immediately preceding them (`seeds.len() == d`).
///
/// `undifference(&difference(s, d)?, &s[..d])` returns `s[d..]`.
pub fn undifference(diffs: &[f64], seeds: &[f64]) -> Vec<f64> {
    let d = seeds.len();
    // last[k] is the latest value of the k-th difference of the seeds.
    let mut last = Vec::with_capacity(d);
    let mut level = seeds.to_vec();
    for _ in 0..d {
        last.push(*level.last().expect("non-empty while k < d"));
        level = level.windows(2).map(|w| w[1] - w[0]).collect();
    }
    diffs
        .iter()
        .map(|&z| {
            let mut v = z;
            for k in (0..d).rev() {
                v += last[k];
                last[k] = v;
            }
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArFit {
    pub c: f64,
    /// `α₁ … α_p`, coefficient of lag 1 first.
    pub alpha: Vec<f64>,
}

impl ArFit {
    pub fn order(&self) -> usize {
        self.alpha.len()
    }
}

/// Least squares via the normal equations. Rows are `[1, x_{t−1}, …, x_{t−k}]`.
fn ols(design: &[Vec<f64>], target: &[f64]) -> Result<Vec<f64>> {
    let k = design.first().map_or(0, Vec::len);
    let mut xtx = Matrix::zeros(k, k);
    let mut xty = vec![0.0; k];
    for (row, y) in design.iter().zip(target) {
        for i in 0..k {
            xty[i] += row[i] * y;
            for j in 0..=i {
                let v = xtx.get(i, j) + row[i] * row[j];
                xtx.set(i, j, v);
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            xtx.set(j, i, xtx.get(i, j));
        }
    }
    let chol = Cholesky::factor(&xtx).map_err(|e| {
        Error::DegenerateRegression(format!("design matrix is rank deficient ({e})"))
    })?;
    chol.solve(&xty)
}

fn lag_rows(series: &[f64], p: usize, start: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    (start..series.len())
        .map(|t| {
            let mut row = Vec::with_capacity(p + 1);
            row.push(1.0);
            row.extend((1..=p).map(|i| series[t - i]));
            (row, series[t])
        })
        .unzip()
}

/// Fits `x⁽ᵗ⁾ = c + Σ αᵢ x⁽ᵗ⁻ⁱ⁾` over every `t ≥ p`.
pub fn fit_ar_ols(series: &[f64], p: usize) -> Result<ArFit> {
    if p == 0 {
        return Err(Error::InvalidArgument("AR order must be >= 1".into()));
    }
    if series.len() < 2 * p + 2 {
        return Err(Error::SeriesTooShort {
            needed: 2 * p + 2,
            got: series.len(),
        });
    }
    let (x, y) = lag_rows(series, p, p);
    let beta = ols(&x, &y)?;
    Ok(ArFit {
        c: beta[0],
        alpha: beta[1..].to_vec(),
    })
}

/// `c + Σ αᵢ recentᵢ` with `recent[0]` the most recent value.
pub fn forecast_ar(fit: &ArFit, recent: &[f64]) -> Result<f64> {
    if recent.len() != fit.order() {
        return Err(Error::DimensionMismatch(format!(
            "AR({}) forecast needs {} recent values, got {}",
            fit.order(),
            fit.order(),
            recent.len()
        )));
    }
    Ok(fit.c
        + fit
            .alpha
            .iter()
            .zip(recent)
            .map(|(a, x)| a * x)
            .sum::<f64>())
}

/// Forecast from a series in chronological order (last element most recent).
pub fn forecast_ar_series(fit: &ArFit, series: &[f64]) -> Result<f64> {
    let p = fit.order();
    if series.len() < p {
        return Err(Error::SeriesTooShort {
            needed: p,
            got: series.len(),
        });
    }
    let recent: Vec<f64> = series.iter().rev().take(p).copied().collect();
    forecast_ar(fit, &recent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaSpec {
    pub fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p + self.q == 0 && self.d == 0 {
            return Err(Error::InvalidArgument(format!(
                "ARIMA({}, {}, {}) has no AR, MA or differencing terms",
                self.p, self.d, self.q
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub spec: ArimaSpec,
    /// Regression intercept on the differenced scale.
    pub intercept: f64,
    /// Unconditional mean `c / (1 − Σα)` of the differenced series; NaN when
    /// the AR polynomial has a unit root.
    pub mu: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Innovation estimates aligned with the differenced series; the first
    /// `max(p, q)` are zero.
    pub residuals: Vec<f64>,
}

/// Order of the long autoregression used to proxy the innovations.
fn long_ar_order(spec: &ArimaSpec, len: usize) -> usize {
    (len / 4).min(20).max(spec.p + spec.q)
}

/// Hannan–Rissanen on the `d`-differenced series.
///
/// Stage 1 fits a long AR by OLS and takes its residuals as innovation
/// estimates. Stage 2 regresses the series on an intercept, `p` own lags and
/// `q` lagged innovation estimates. Without MA terms stage 1 is skipped and
/// the fit coincides with [`fit_ar_ols`].
pub fn fit_arima(series: &[f64], spec: ArimaSpec) -> Result<ArimaFit> {
    spec.validate()?;
    let z = difference(series, spec.d)?;
    let needed = 2 * (spec.p + spec.q) + 20;
    if z.len() < needed {
        return Err(Error::SeriesTooShort {
            needed: needed + spec.d,
            got: series.len(),
        });
    }
    let (p, q) = (spec.p, spec.q);

    let (rows, target) = if q == 0 {
        lag_rows(&z, p, p)
    } else {
        let m = long_ar_order(&spec, z.len());
        let long = fit_ar_ols(&z, m)?;
        let mut innov = vec![0.0; z.len()];
        for t in m..z.len() {
            innov[t] = z[t] - forecast_ar_series(&long, &z[..t])?;
        }
        let start = (m + q).max(p);
        (start..z.len())
            .map(|t| {
                let mut row = Vec::with_capacity(1 + p + q);
                row.push(1.0);
                row.extend((1..=p).map(|i| z[t - i]));
                row.extend((1..=q).map(|j| innov[t - j]));
                (row, z[t])
            })
            .unzip()
    };
    let coef = ols(&rows, &target)?;
    let intercept = coef[0];
    let alpha = coef[1..=p].to_vec();
    let beta = coef[p + 1..].to_vec();
    let ar_sum: f64 = alpha.iter().sum();
    let mu = if (1.0 - ar_sum).abs() > 1e-12 {
        intercept / (1.0 - ar_sum)
    } else {
        f64::NAN
    };
    let mut fit = ArimaFit {
        spec,
        intercept,
        mu,
        alpha,
        beta,
        residuals: Vec::new(),
    };
    fit.residuals = fit.filter_residuals(&z);
    Ok(fit)
}

impl ArimaFit {
    /// Innovations of the fitted recursion over a differenced series, with
    /// pre-sample innovations and the first `max(p, q)` residuals set to zero.
    pub fn filter_residuals(&self, z: &[f64]) -> Vec<f64> {
        let (p, q) = (self.spec.p, self.spec.q);
        let start = p.max(q);
        let mut e = vec![0.0; z.len()];
        for t in start..z.len() {
            let ar: f64 = self
                .alpha
                .iter()
                .enumerate()
                .map(|(i, a)| a * z[t - 1 - i])
                .sum();
            let ma: f64 = self
                .beta
                .iter()
                .enumerate()
                .map(|(j, b)| b * e[t - 1 - j])
                .sum();
            e[t] = z[t] - self.intercept - ar - ma;
        }
        e
    }
}

/// One-step forecast of the value following `series`.
///
/// The series is differenced `d` times and filtered with the fitted
/// coefficients to obtain its innovations (identical to the stored residuals
/// when `series` is the fitting series). The next differenced value is
/// `c + Σ αᵢ z_{n+1−i} + Σ βⱼ e_{n+1−j}` with the future innovation at its
/// zero mean, integrated back through the last `d` values of `series`.
pub fn forecast_arima(fit: &ArimaFit, series: &[f64]) -> Result<f64> {
    let ArimaSpec { p, d, q } = fit.spec;
    let needed = d + p.max(q) + 1;
    if series.len() < needed {
        return Err(Error::SeriesTooShort {
            needed,
            got: series.len(),
        });
    }
    let z = difference(series, d)?;
    let e = fit.filter_residuals(&z);
    let n = z.len();
    let ar: f64 = fit
        .alpha
        .iter()
        .enumerate()
        .map(|(i, a)| a * z[n - 1 - i])
        .sum();
    let ma: f64 = fit
        .beta
        .iter()
        .enumerate()
        .map(|(j, b)| b * e[n - 1 - j])
        .sum();
    let next = fit.intercept + ar + ma;
    Ok(undifference(&[next], &series[series.len() - d..])[0])
}
