//! Sequential many-to-one LSTM training.
//!
//! Every outer iteration trains on exactly one (window, label) pair for `L`
//! epochs, records the loss and the parameters that produced it at each
//! epoch, and continues from the least-loss snapshot. The trained network
//! then forecasts one step ahead from the window shifted by one.

mod adam;
mod bptt;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use bptt::{bptt_gradients, fd_gradient_oracle, loss_relative_mse, max_relative_error};

use crate::error::{Error, Result};
use crate::lstm::{forward, LstmDims, LstmParams, Window};
use crate::rng::SeededRng;

/// Loss gradient with the same shape as the [`LstmParams`] it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub LstmParams);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InitMode {
    /// Every weight and bias exactly zero.
    Zero,
    /// Uniform in `[-scale, scale]` from the run seed.
    Seeded { scale: f64 },
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::Seeded { scale: 0.1 }
    }
}

/// What enters the input window for time steps past the training span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Earlier model predictions.
    #[default]
    Prediction,
    /// Observed values, once they have arrived.
    Observation,
}

impl std::str::FromStr for Feedback {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prediction" => Ok(Feedback::Prediction),
            "observation" => Ok(Feedback::Observation),
            other => Err(Error::InvalidArgument(format!(
                "feedback must be `prediction` or `observation`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Feedback {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Feedback::Prediction => "prediction",
            Feedback::Observation => "observation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Epochs per outer iteration (`L`).
    pub epochs: usize,
    pub adam: AdamConfig,
    pub dims: LstmDims,
    pub init: InitMode,
    pub seed: u64,
    /// Zero the ADAM moments at the start of every outer iteration.
    pub reset_adam_each_iteration: bool,
    pub feedback: Feedback,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            adam: AdamConfig::default(),
            dims: LstmDims::default(),
            init: InitMode::default(),
            seed: 0,
            reset_adam_each_iteration: false,
            feedback: Feedback::Prediction,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        self.adam.validate()?;
        self.dims.validate()
    }

    pub fn init_params(&self) -> Result<LstmParams> {
        match self.init {
            InitMode::Zero => LstmParams::init_zero(self.dims),
            InitMode::Seeded { scale } => {
                LstmParams::init_seeded(self.dims, &mut SeededRng::new(self.seed), scale)
            }
        }
    }
}

/// Loss of epoch `epoch_index` together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch_index: usize,
    pub loss: f64,
    pub snapshot: LstmParams,
}

/// Trains `start` for `cfg.epochs` epochs on one instance.
///
/// Each epoch evaluates the loss of the current parameters, records it with a
/// copy of those parameters, then takes one ADAM step. Returns the recorded
/// snapshot of least loss (earliest on ties) and all records.
pub fn train_one_iteration(
    start: &LstmParams,
    window: &Window,
    label: f64,
    cfg: &TrainConfig,
    adam: &mut AdamState,
) -> Result<(LstmParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    let mut current = start.clone();
    let mut records = Vec::with_capacity(cfg.epochs);
    for l in 1..=cfg.epochs {
        let (loss, grads) = bptt_gradients(&current, window, label)?;
        records.push(EpochRecord {
            epoch_index: l,
            loss,
            snapshot: current.clone(),
        });
        adam_step(&mut current, &grads, adam)?;
    }
    let best = records
        .iter()
        .fold(None::<&EpochRecord>, |best, r| match best {
            Some(b) if b.loss <= r.loss => Some(b),
            _ => Some(r),
        })
        .map(|r| r.snapshot.clone())
        .expect("epochs >= 1");
    Ok((best, records))
}

/// Input window `X⁽ᵗ⁾` (1-based `t`) over a series whose first `t_train`
/// values are the training span.
///
/// `X⁽ᵗ⁾` covers time indices `t ..= t_train + t − 2`. Indices up to
/// `t_train` are always observed; later ones come from `predictions`
/// (`predictions[0]` is the forecast of index `t_train + 1`) or from
/// `observed`, depending on `feedback`.
pub fn algorithm_window(
    observed: &[f64],
    predictions: &[f64],
    t_train: usize,
    t: usize,
    feedback: Feedback,
) -> Result<Vec<f64>> {
    if t == 0 || t_train < 2 {
        return Err(Error::InvalidArgument(format!(
            "window t={t} over training length {t_train}"
        )));
    }
    (t..=t_train + t - 2)
        .map(|j| {
            let src = if j <= t_train || feedback == Feedback::Observation {
                observed.get(j - 1)
            } else {
                predictions.get(j - t_train - 1)
            };
            src.copied().ok_or(Error::SeriesTooShort {
                needed: j,
                got: observed.len(),
            })
        })
        .collect()
}

/// Per-iteration bookkeeping of a sequential run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub t: usize,
    pub window: Vec<f64>,
    pub label: f64,
    pub records: Vec<EpochRecord>,
}

impl IterationLog {
    pub fn best_epoch(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.loss <= r.loss => Some(b),
                _ => Some(r),
            })
    }
}

#[derive(Debug, Clone)]
pub struct SequentialForecast {
    /// Forecasts of indices `T+1 ..= T+N`.
    pub predictions: Vec<f64>,
    pub final_params: LstmParams,
    pub iterations: Vec<IterationLog>,
}

/// Outer loop over `t = 1 ..= N+1`: train on `X⁽ᵗ⁾` against the observed
/// `x⁽ᵀ⁺ᵗ⁻¹⁾`, keep the least-loss snapshot, forecast `x̂⁽ᵀ⁺ᵗ⁾` from
/// `X⁽ᵗ⁺¹⁾`. The forecast made after the last iteration lies beyond the
/// requested horizon and is not returned.
pub fn sequential_forecast_lstm(
    series: &[f64],
    t_train: usize,
    horizon: usize,
    cfg: &TrainConfig,
) -> Result<SequentialForecast> {
    cfg.validate()?;
    check_run_shape(series.len(), t_train, horizon)?;
    let mut params = cfg.init_params()?;
    let mut adam = AdamState::for_params(cfg.adam, &params)?;
    let mut predictions = Vec::with_capacity(horizon);
    let mut iterations = Vec::with_capacity(horizon + 1);
    for t in 1..=horizon + 1 {
        let values = algorithm_window(series, &predictions, t_train, t, cfg.feedback)?;
        let window = Window::new(values.clone())?;
        let label = series[t_train + t - 2];
        if cfg.reset_adam_each_iteration {
            adam.reset();
        }
        let (best, records) = train_one_iteration(&params, &window, label, cfg, &mut adam)?;
        params = best;
        iterations.push(IterationLog {
            t,
            window: values,
            label,
            records,
        });
        if t <= horizon {
            let next = Window::new(algorithm_window(
                series,
                &predictions,
                t_train,
                t + 1,
                cfg.feedback,
            )?)?;
            predictions.push(forward(&params, &next)?);
        }
    }
    Ok(SequentialForecast {
        predictions,
        final_params: params,
        iterations,
    })
}

pub(crate) fn check_run_shape(len: usize, t_train: usize, horizon: usize) -> Result<()> {
    if horizon == 0 || horizon >= t_train {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= N < T, got T={t_train}, N={horizon}"
        )));
    }
    if t_train < 2 {
        return Err(Error::InvalidArgument("T must be >= 2".into()));
    }
    if len < t_train + horizon {
        return Err(Error::SeriesTooShort {
            needed: t_train + horizon,
            got: len,
        });
    }
    Ok(())
}

/// Writes `t,l,loss` lines, one per epoch of every iteration.
pub fn write_training_log(mut out: impl Write, iterations: &[IterationLog]) -> std::io::Result<()> {
    writeln!(out, "t,l,loss")?;
    for it in iterations {
        for r in &it.records {
            writeln!(out, "{},{},{}", it.t, r.epoch_index, r.loss)?;
        }
    }
    Ok(())
}

/// Outcome of the BPTT-versus-finite-difference comparison.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSummary {
    pub instances: usize,
    pub max_relative_error: f64,
    pub worst_instance: usize,
}

/// Compares BPTT against central differences (step 1e-5) on `instances`
/// random (params, window, label) triples drawn from `seed`.
pub fn gradient_check(
    instances: usize,
    dims: LstmDims,
    window_len: usize,
    seed: u64,
) -> Result<GradCheckSummary> {
    let mut rng = SeededRng::new(seed);
    let mut worst = (0.0_f64, 0usize);
    for i in 0..instances {
        let params = LstmParams::init_seeded(dims, &mut rng, 0.5)?;
        let window = Window::new((0..window_len).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
        let label = rng.uniform(0.5, 1.5);
        let (_, exact) = bptt_gradients(&params, &window, label)?;
        let fd = fd_gradient_oracle(&params, &window, label, 1e-5)?;
        let err = max_relative_error(&exact, &fd);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradCheckSummary {
        instances,
        max_relative_error: worst.0,
        worst_instance: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            dims: LstmDims {
                layers: 1,
                hidden_dim: 3,
            },
            init: InitMode::Seeded { scale: 0.2 },
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn single_epoch_returns_the_starting_snapshot() {
        let cfg = small_cfg(1);
        let p = cfg.init_params().unwrap();
        let mut adam = AdamState::for_params(cfg.adam, &p).unwrap();
        let w = Window::new(vec![0.1, 0.2, 0.3]).unwrap();
        let (best, records) = train_one_iteration(&p, &w, 0.4, &cfg, &mut adam).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(best, records[0].snapshot);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn best_snapshot_attains_recorded_minimum() {
        let cfg = small_cfg(40);
        let p = cfg.init_params().unwrap();
        let mut adam = AdamState::for_params(cfg.adam, &p).unwrap();
        let w = Window::new(vec![0.5, 0.6, 0.55, 0.7]).unwrap();
        let (best, records) = train_one_iteration(&p, &w, 0.8, &cfg, &mut adam).unwrap();
        assert_eq!(records.len(), 40);
        let min = records.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        let got = loss_relative_mse(forward(&best, &w).unwrap(), 0.8).unwrap();
        assert_eq!(got, min);
    }

    #[test]
    fn ties_go_to_the_earliest_epoch() {
        // Zero init with label equal to the zero prediction is impossible
        // (label must be non-zero), so use a lr so small that nothing moves.
        let mut cfg = small_cfg(3);
        cfg.adam.learning_rate = 1e-300;
        let p = cfg.init_params().unwrap();
        let mut adam = AdamState::for_params(cfg.adam, &p).unwrap();
        let w = Window::new(vec![0.5, 0.6]).unwrap();
        let (_, records) = train_one_iteration(&p, &w, 0.8, &cfg, &mut adam).unwrap();
        assert!(records.windows(2).all(|r| r[0].loss == r[1].loss));
        let log = IterationLog {
            t: 1,
            window: vec![],
            label: 0.8,
            records,
        };
        assert_eq!(log.best_epoch().unwrap().epoch_index, 1);
    }

    /// With every recurrent parameter frozen at zero the hidden state is zero,
    /// so the loss is a convex quadratic in the readout bias alone; small ADAM
    /// steps decrease it monotonically and the last epoch is best.
    #[test]
    fn readout_only_toy_decreases_monotonically() {
        let cfg = TrainConfig {
            epochs: 30,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..Default::default()
            },
            dims: LstmDims {
                layers: 1,
                hidden_dim: 2,
            },
            init: InitMode::Zero,
            ..Default::default()
        };
        let p = cfg.init_params().unwrap();
        let mut adam = AdamState::for_params(cfg.adam, &p).unwrap();
        let w = Window::new(vec![0.3, 0.9]).unwrap();
        let (best, records) = train_one_iteration(&p, &w, 1.0, &cfg, &mut adam).unwrap();
        assert!(records.windows(2).all(|r| r[1].loss < r[0].loss));
        assert_eq!(best, records.last().unwrap().snapshot);
    }

    #[test]
    fn windows_follow_the_denotation() {
        let series = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let preds = [50.0, 60.0];
        let w = |t| algorithm_window(&series, &preds, 4, t, Feedback::Prediction).unwrap();
        assert_eq!(w(1), vec![1.0, 2.0, 3.0]);
        assert_eq!(w(2), vec![2.0, 3.0, 4.0]);
        assert_eq!(w(3), vec![3.0, 4.0, 50.0]);
        assert_eq!(w(4), vec![4.0, 50.0, 60.0]);
        let o = algorithm_window(&series, &preds, 4, 4, Feedback::Observation).unwrap();
        assert_eq!(o, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn sequential_run_shape_and_bookkeeping() {
        let series: Vec<f64> = (0..12).map(|i| 1.0 + 0.1 * i as f64).collect();
        let cfg = small_cfg(5);
        let out = sequential_forecast_lstm(&series, 8, 3, &cfg).unwrap();
        assert_eq!(out.predictions.len(), 3);
        assert_eq!(out.iterations.len(), 4);
        for it in &out.iterations {
            assert_eq!(it.window.len(), 7);
            assert_eq!(it.records.len(), 5);
            assert_eq!(it.label, series[8 + it.t - 2]);
            let predicted = it.window.iter().filter(|v| !series.contains(v)).count();
            assert_eq!(predicted, it.t.saturating_sub(2));
        }
        assert_eq!(out.iterations[0].window, series[..7].to_vec());
        assert_eq!(
            out.iterations[2].window.last().copied(),
            Some(out.predictions[0])
        );
    }

    #[test]
    fn sequential_run_is_deterministic() {
        let series: Vec<f64> = (0..30).map(|i| 2.0 + (i as f64 * 0.3).sin()).collect();
        let cfg = small_cfg(8);
        let a = sequential_forecast_lstm(&series, 24, 5, &cfg).unwrap();
        let b = sequential_forecast_lstm(&series, 24, 5, &cfg).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.predictions), bits(&b.predictions));
    }

    #[test]
    fn sequential_run_rejects_bad_shapes() {
        let series = vec![1.0; 10];
        let cfg = small_cfg(2);
        assert!(sequential_forecast_lstm(&series, 5, 5, &cfg).is_err());
        assert!(sequential_forecast_lstm(&series, 8, 3, &cfg).is_err());
        let mut zero_label = series.clone();
        zero_label[7] = 0.0;
        assert!(matches!(
            sequential_forecast_lstm(&zero_label, 8, 2, &cfg),
            Err(Error::DegenerateLabel)
        ));
    }

    #[test]
    fn training_log_lines() {
        let series: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let out = sequential_forecast_lstm(&series, 4, 1, &small_cfg(2)).unwrap();
        let mut buf = Vec::new();
        write_training_log(&mut buf, &out.iterations).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,l,loss");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[3].starts_with("2,1,"));
    }
}
