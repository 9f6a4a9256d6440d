//! Extended Kalman filter for one-step-ahead forecasting.
//!
//! State model `x⁺ = f(x) + w`, `w ~ N(0, Q)`; measurement `y = h(x) + v`,
//! `v ~ N(0, R)`. Jacobians are supplied by the model or taken numerically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matvec, Cholesky, Matrix, Vector};

pub trait StateSpaceModel {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn transition(&self, x: &Vector) -> Result<Vector>;
    fn measure(&self, x: &Vector) -> Result<Vector>;

    fn transition_jacobian(&self, x: &Vector) -> Result<Matrix> {
        numeric_jacobian(|v| self.transition(v), x, 1e-6)
    }

    fn measurement_jacobian(&self, x: &Vector) -> Result<Matrix> {
        numeric_jacobian(|v| self.measure(v), x, 1e-6)
    }

    fn process_noise(&self) -> &Matrix;
    fn measurement_noise(&self) -> &Matrix;
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian(
    f: impl Fn(&Vector) -> Result<Vector>,
    x: &Vector,
    step: f64,
) -> Result<Matrix> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "jacobian step must be > 0, got {step}"
        )));
    }
    let n = x.len();
    let m = f(x)?.len();
    let mut jac = Matrix::zeros(m, n);
    let mut probe = x.clone();
    for j in 0..n {
        let orig = probe[j];
        probe[j] = orig + step;
        let up = f(&probe)?;
        probe[j] = orig - step;
        let down = f(&probe)?;
        probe[j] = orig;
        for i in 0..m {
            jac.set(i, j, (up[i] - down[i]) / (2.0 * step));
        }
    }
    Ok(jac)
}

/// Filtered state estimate and its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x_hat: Vector,
    pub p: Matrix,
}

/// `x̂⁻ = f(x̂)`, `P⁻ = J_f P J_fᵀ + Q` with `J_f` taken at `x̂`.
pub fn predict(model: &dyn StateSpaceModel, state: &EkfState) -> Result<EkfState> {
    check_state(model, state)?;
    let jf = model.transition_jacobian(&state.x_hat)?;
    let x_hat = model.transition(&state.x_hat)?;
    let p = jf
        .matmul(&state.p)?
        .matmul(&jf.transpose())?
        .add(model.process_noise())?;
    if !x_hat.is_finite() || !p.is_finite() {
        return Err(Error::NonFinite("EKF prediction"));
    }
    Ok(EkfState { x_hat, p })
}

/// Assimilates measurement `y`:
/// `S = J_h P⁻ J_hᵀ + R`, `K = P⁻ J_hᵀ S⁻¹`, `x̂⁺ = x̂⁻ + K (y − h(x̂⁻))`,
/// `P⁺ = (I − K J_h) P⁻`, symmetrized.
pub fn update(model: &dyn StateSpaceModel, predicted: &EkfState, y: &Vector) -> Result<EkfState> {
    check_state(model, predicted)?;
    if y.len() != model.obs_dim() {
        return Err(Error::DimensionMismatch(format!(
            "measurement of length {} for obs_dim {}",
            y.len(),
            model.obs_dim()
        )));
    }
    let gain = kalman_gain(model, predicted)?;
    let jh = model.measurement_jacobian(&predicted.x_hat)?;
    let innovation = y.sub(&model.measure(&predicted.x_hat)?)?;
    let x_hat = predicted.x_hat.add(&matvec(&gain, &innovation)?)?;
    let n = model.state_dim();
    let p = Matrix::identity(n)
        .sub(&gain.matmul(&jh)?)?
        .matmul(&predicted.p)?
        .symmetrize()?;
    if !x_hat.is_finite() || !p.is_finite() {
        return Err(Error::NonFinite("EKF update"));
    }
    Ok(EkfState { x_hat, p })
}

/// `K = P⁻ J_hᵀ S⁻¹`, computed as `Kᵀ = S⁻¹ (J_h P⁻)` through a Cholesky
/// factorization of the innovation covariance.
pub fn kalman_gain(model: &dyn StateSpaceModel, predicted: &EkfState) -> Result<Matrix> {
    let jh = model.measurement_jacobian(&predicted.x_hat)?;
    let jh_p = jh.matmul(&predicted.p)?;
    let s = jh_p
        .matmul(&jh.transpose())?
        .add(model.measurement_noise())?;
    let chol = Cholesky::factor(&s).map_err(|e| Error::DegenerateInnovation(e.to_string()))?;
    let (m, n) = (jh_p.rows(), jh_p.cols());
    let mut gain = Matrix::zeros(n, m);
    let mut col = vec![0.0; m];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = jh_p.get(i, j);
        }
        for (i, v) in chol.solve(&col)?.into_iter().enumerate() {
            gain.set(j, i, v);
        }
    }
    Ok(gain)
}

fn check_state(model: &dyn StateSpaceModel, state: &EkfState) -> Result<()> {
    let n = model.state_dim();
    if state.x_hat.len() != n || state.p.rows() != n || state.p.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "state of length {} with {}x{} covariance for state_dim {n}",
            state.x_hat.len(),
            state.p.rows(),
            state.p.cols()
        )));
    }
    Ok(())
}

/// `x = [level, trend]`, `f(x) = [level + trend, trend]`, `h(x) = level`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearTrend {
    q: Matrix,
    r: Matrix,
}

impl LocalLinearTrend {
    pub fn new(q_level: f64, q_trend: f64, r: f64) -> Result<Self> {
        if !(q_level >= 0.0 && q_trend >= 0.0 && r >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variances must be >= 0, got q=({q_level}, {q_trend}), r={r}"
            )));
        }
        Ok(Self {
            q: Matrix::diag(&[q_level, q_trend]),
            r: Matrix::diag(&[r]),
        })
    }
}

impl StateSpaceModel for LocalLinearTrend {
    fn state_dim(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn transition(&self, x: &Vector) -> Result<Vector> {
        Vector::new(vec![x[0] + x[1], x[1]])
    }
    fn measure(&self, x: &Vector) -> Result<Vector> {
        Vector::new(vec![x[0]])
    }
    fn transition_jacobian(&self, _x: &Vector) -> Result<Matrix> {
        Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]])
    }
    fn measurement_jacobian(&self, _x: &Vector) -> Result<Matrix> {
        Matrix::new(1, 2, vec![1.0, 0.0])
    }
    fn process_noise(&self) -> &Matrix {
        &self.q
    }
    fn measurement_noise(&self) -> &Matrix {
        &self.r
    }
}

/// Linear model `f(x) = F x`, `h(x) = H x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

impl StateSpaceModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.f.rows()
    }
    fn obs_dim(&self) -> usize {
        self.h.rows()
    }
    fn transition(&self, x: &Vector) -> Result<Vector> {
        matvec(&self.f, x)
    }
    fn measure(&self, x: &Vector) -> Result<Vector> {
        matvec(&self.h, x)
    }
    fn transition_jacobian(&self, _x: &Vector) -> Result<Matrix> {
        Ok(self.f.clone())
    }
    fn measurement_jacobian(&self, _x: &Vector) -> Result<Matrix> {
        Ok(self.h.clone())
    }
    fn process_noise(&self) -> &Matrix {
        &self.q
    }
    fn measurement_noise(&self) -> &Matrix {
        &self.r
    }
}

type VecFn = Box<dyn Fn(&Vector) -> Result<Vector> + Send + Sync>;
type JacFn = Box<dyn Fn(&Vector) -> Result<Matrix> + Send + Sync>;

/// Model assembled from closures. Jacobians left as `None` are computed
/// numerically.
pub struct FnModel {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub f: VecFn,
    pub h: VecFn,
    pub jf: Option<JacFn>,
    pub jh: Option<JacFn>,
    pub q: Matrix,
    pub r: Matrix,
}

impl StateSpaceModel for FnModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn transition(&self, x: &Vector) -> Result<Vector> {
        (self.f)(x)
    }
    fn measure(&self, x: &Vector) -> Result<Vector> {
        (self.h)(x)
    }
    fn transition_jacobian(&self, x: &Vector) -> Result<Matrix> {
        match &self.jf {
            Some(j) => j(x),
            None => numeric_jacobian(|v| (self.f)(v), x, 1e-6),
        }
    }
    fn measurement_jacobian(&self, x: &Vector) -> Result<Matrix> {
        match &self.jh {
            Some(j) => j(x),
            None => numeric_jacobian(|v| (self.h)(v), x, 1e-6),
        }
    }
    fn process_noise(&self) -> &Matrix {
        &self.q
    }
    fn measurement_noise(&self) -> &Matrix {
        &self.r
    }
}

/// User overrides for the default local-linear-trend forecaster. Unset
/// fields are derived from the variance of the training values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EkfSettings {
    pub q_level: Option<f64>,
    pub q_trend: Option<f64>,
    pub r: Option<f64>,
    pub p0: Option<f64>,
    pub level0: Option<f64>,
    pub trend0: Option<f64>,
}

/// One-step forecaster around a scalar-measurement state-space model.
pub struct EkfForecaster {
    model: Box<dyn StateSpaceModel + Send + Sync>,
    state: EkfState,
}

impl EkfForecaster {
    pub fn new(model: Box<dyn StateSpaceModel + Send + Sync>, init: EkfState) -> Result<Self> {
        if model.obs_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "forecaster needs a scalar measurement, model has obs_dim {}",
                model.obs_dim()
            )));
        }
        check_state(model.as_ref(), &init)?;
        Ok(Self { model, state: init })
    }

    /// Local linear trend initialized from training values: level = last
    /// value, trend = mean first difference, `P₀ = var·I`,
    /// `Q = 1e-4·var·I`, `R = 1e-2·var`.
    pub fn local_linear_trend(train: &[f64], settings: &EkfSettings) -> Result<Self> {
        let (&last, _) = train
            .split_last()
            .ok_or(Error::SeriesTooShort { needed: 1, got: 0 })?;
        let n = train.len() as f64;
        let mean = train.iter().sum::<f64>() / n;
        let var = train.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        // A constant training span would give a zero innovation covariance.
        let var = var.max(f64::EPSILON * (1.0 + mean * mean));
        let trend = if train.len() > 1 {
            (last - train[0]) / (n - 1.0)
        } else {
            0.0
        };
        let model = LocalLinearTrend::new(
            settings.q_level.unwrap_or(1e-4 * var),
            settings.q_trend.unwrap_or(1e-4 * var),
            settings.r.unwrap_or(1e-2 * var),
        )?;
        let init = EkfState {
            x_hat: Vector::new(vec![
                settings.level0.unwrap_or(last),
                settings.trend0.unwrap_or(trend),
            ])?,
            p: Matrix::identity(2).scale(settings.p0.unwrap_or(var)),
        };
        Self::new(Box::new(model), init)
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    /// Predict and update with the newly arrived value.
    pub fn observe(&mut self, y: f64) -> Result<()> {
        let prior = predict(self.model.as_ref(), &self.state)?;
        self.state = update(self.model.as_ref(), &prior, &Vector::new(vec![y])?)?;
        Ok(())
    }

    /// `h(f(x̂))`.
    pub fn predict_next(&self) -> Result<f64> {
        let next = self.model.transition(&self.state.x_hat)?;
        Ok(self.model.measure(&next)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn scalar_identity(q: f64, r: f64) -> LinearModel {
        LinearModel {
            f: Matrix::identity(1),
            h: Matrix::identity(1),
            q: Matrix::diag(&[q]),
            r: Matrix::diag(&[r]),
        }
    }

    fn s1(x: f64, p: f64) -> EkfState {
        EkfState {
            x_hat: Vector::new(vec![x]).unwrap(),
            p: Matrix::diag(&[p]),
        }
    }

    #[test]
    fn predict_cases() {
        let st = EkfState {
            x_hat: Vector::new(vec![1.0, 2.0]).unwrap(),
            p: Matrix::identity(2),
        };
        let ident = LinearModel {
            f: Matrix::identity(2),
            h: Matrix::new(1, 2, vec![1.0, 0.0]).unwrap(),
            q: Matrix::zeros(2, 2),
            r: Matrix::diag(&[1.0]),
        };
        assert_eq!(predict(&ident, &st).unwrap(), st);

        let out = predict(&scalar_identity(0.5, 1.0), &s1(3.0, 1.0)).unwrap();
        assert_eq!(out.p.get(0, 0), 1.5);

        let llt = LocalLinearTrend::new(0.0, 0.0, 1.0).unwrap();
        let st = EkfState {
            x_hat: Vector::new(vec![1.0, 0.1]).unwrap(),
            p: Matrix::identity(2),
        };
        let out = predict(&llt, &st).unwrap();
        assert!((out.x_hat[0] - 1.1).abs() < 1e-15);
        assert_eq!(out.x_hat[1], 0.1);
    }

    #[test]
    fn update_cases() {
        let m = scalar_identity(0.0, 1.0);
        let prior = s1(0.0, 1.0);
        assert!((kalman_gain(&m, &prior).unwrap().get(0, 0) - 0.5).abs() < 1e-15);
        let post = update(&m, &prior, &Vector::new(vec![2.0]).unwrap()).unwrap();
        assert!((post.x_hat[0] - 1.0).abs() < 1e-15);
        assert!((post.p.get(0, 0) - 0.5).abs() < 1e-15);

        let deaf = scalar_identity(0.0, 1e12);
        let post = update(&deaf, &s1(3.0, 1.0), &Vector::new(vec![100.0]).unwrap()).unwrap();
        assert!((post.x_hat[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn update_reports_degenerate_innovation() {
        let m = scalar_identity(0.0, 0.0);
        let err = update(&m, &s1(0.0, 0.0), &Vector::new(vec![1.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DegenerateInnovation(_)));
    }

    #[test]
    fn numeric_jacobian_cases() {
        let id = numeric_jacobian(
            |v| Ok(v.clone()),
            &Vector::new(vec![1.0, -2.0, 3.0]).unwrap(),
            1e-6,
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id.get(i, j) - e).abs() < 1e-9);
            }
        }
        let sq = |v: &Vector| Vector::new(vec![v[0] * v[0], v[1]]);
        let j = numeric_jacobian(sq, &Vector::new(vec![3.0, 5.0]).unwrap(), 1e-6).unwrap();
        let expect = [[6.0, 0.0], [0.0, 1.0]];
        for (i, row) in expect.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                assert!((j.get(i, k) - e).abs() < 1e-6);
            }
        }
        let llt = LocalLinearTrend::new(0.0, 0.0, 1.0).unwrap();
        let x = Vector::new(vec![4.0, 0.5]).unwrap();
        let numeric = numeric_jacobian(|v| llt.transition(v), &x, 1e-6).unwrap();
        let analytic = llt.transition_jacobian(&x).unwrap();
        for (a, b) in numeric.as_slice().iter().zip(analytic.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fn_model_with_numeric_jacobians_runs() {
        let model = FnModel {
            state_dim: 1,
            obs_dim: 1,
            f: Box::new(|x| Vector::new(vec![0.9 * x[0] + 0.1 * x[0].sin()])),
            h: Box::new(|x| Vector::new(vec![x[0] * x[0]])),
            jf: None,
            jh: None,
            q: Matrix::diag(&[0.01]),
            r: Matrix::diag(&[0.1]),
        };
        let mut st = s1(1.0, 1.0);
        for y in [1.1, 0.9, 0.8, 0.75] {
            st = update(
                &model,
                &predict(&model, &st).unwrap(),
                &Vector::new(vec![y]).unwrap(),
            )
            .unwrap();
        }
        assert!(st.x_hat.is_finite() && st.p.get(0, 0) > 0.0);
    }

    #[test]
    fn covariance_stays_symmetric_and_nonnegative() {
        let mut rng = SeededRng::new(77);
        let model = LinearModel {
            f: Matrix::from_rows(&[
                vec![1.0, 1.0, 0.0],
                vec![0.0, 0.95, 0.1],
                vec![0.0, -0.1, 0.95],
            ])
            .unwrap(),
            h: Matrix::new(1, 3, vec![1.0, 0.0, 0.5]).unwrap(),
            q: Matrix::diag(&[1e-3, 1e-4, 1e-4]),
            r: Matrix::diag(&[0.05]),
        };
        let mut st = EkfState {
            x_hat: Vector::zeros(3),
            p: Matrix::identity(3),
        };
        for _ in 0..10_000 {
            let y = Vector::new(vec![rng.normal(0.0, 1.0)]).unwrap();
            st = update(&model, &predict(&model, &st).unwrap(), &y).unwrap();
            for i in 0..3 {
                assert!(st.p.get(i, i) >= 0.0);
                for j in 0..3 {
                    assert_eq!(st.p.get(i, j), st.p.get(j, i));
                }
            }
        }
    }

    #[test]
    fn joseph_form_agrees_for_optimal_gain() {
        let mut rng = SeededRng::new(5);
        for _ in 0..200 {
            let p = rng.uniform(0.01, 10.0);
            let r = rng.uniform(0.01, 10.0);
            let hj = rng.uniform(-3.0, 3.0);
            let model = LinearModel {
                f: Matrix::identity(1),
                h: Matrix::diag(&[hj]),
                q: Matrix::zeros(1, 1),
                r: Matrix::diag(&[r]),
            };
            let prior = s1(rng.uniform(-1.0, 1.0), p);
            let post = update(&model, &prior, &Vector::new(vec![0.3]).unwrap()).unwrap();
            let k = p * hj / (hj * p * hj + r);
            let joseph = (1.0 - k * hj) * p * (1.0 - k * hj) + k * r * k;
            assert!((post.p.get(0, 0) - joseph).abs() < 1e-8);
        }
    }

    #[test]
    fn forecaster_first_prediction_is_h_of_f_of_initial_state() {
        let f = EkfForecaster::local_linear_trend(&[1.0, 2.0, 3.0, 4.0], &EkfSettings::default())
            .unwrap();
        // level 4, trend 1
        assert_eq!(f.predict_next().unwrap(), 5.0);
    }

    #[test]
    fn forecaster_converges_on_constant_series() {
        let mut f =
            EkfForecaster::local_linear_trend(&[9.0, 11.0, 9.5, 10.5], &EkfSettings::default())
                .unwrap();
        let mut errs = Vec::new();
        for _ in 0..200 {
            f.observe(10.0).unwrap();
            errs.push((f.predict_next().unwrap() - 10.0).abs());
        }
        assert!(errs[199] < errs[50]);
        assert!(errs[199] < 1e-3, "{}", errs[199]);
        assert!(errs[100..].windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn forecaster_recovers_ramp_slope() {
        let train: Vec<f64> = (0..10).map(|i| 5.0 + 0.3 * i as f64).collect();
        let settings = EkfSettings {
            trend0: Some(0.0),
            ..Default::default()
        };
        let mut f = EkfForecaster::local_linear_trend(&train, &settings).unwrap();
        for i in 10..510 {
            f.observe(5.0 + 0.3 * i as f64).unwrap();
        }
        assert!((f.state().x_hat[1] - 0.3).abs() < 1e-3);
    }
}
