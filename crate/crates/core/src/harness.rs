//! Rolling one-step-ahead evaluation over any forecaster.
//!
//! Step `t = 1, 2, …` hands the forecaster the window `X⁽ᵗ⁾` (length `T−1`)
//! and its observed label `x⁽ᵀ⁺ᵗ⁻¹⁾`, then asks for a forecast from the
//! window shifted by one. Under prediction feedback the value appended to
//! the window after the first step is the previous forecast; under
//! observation feedback it is the observed value.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arma::{
    fit_ar_ols, fit_arima, forecast_ar_series, forecast_arima, ArFit, ArimaFit, ArimaSpec,
};
use crate::ekf::{EkfForecaster, EkfSettings};
use crate::error::{Error, Result};
use crate::lstm::{forward, LstmParams, Window};
use crate::rng::derive_seed;
use crate::series::TimeSeries;
use crate::training::{check_run_shape, train_one_iteration, AdamState, Feedback, TrainConfig};

/// Consecutive non-finite forecasts after which a run is abandoned.
pub const MAX_CONSECUTIVE_FAILURES: usize = 3;

/// A one-step-ahead model driven by the rolling protocol.
pub trait Forecaster: Send {
    fn name(&self) -> &str;

    /// Called once with `X⁽¹⁾` before the first `retrain`.
    fn begin(&mut self, _history: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Absorbs the window and the observed value that follows it.
    fn retrain(&mut self, window: &[f64], label: f64) -> Result<()>;

    /// Forecast of the value following `window`.
    fn predict(&mut self, window: &[f64]) -> Result<f64>;

    /// Whether the protocol retrains once more after the last forecast
    /// (`N+1` retrains instead of `N`).
    fn retrains_after_last_forecast(&self) -> bool {
        false
    }
}

/// Sequentially trained LSTM keeping the least-loss epoch of every round.
pub struct LstmForecaster {
    cfg: TrainConfig,
    params: LstmParams,
    adam: AdamState,
    rounds: usize,
    losses: Vec<(usize, Vec<f64>)>,
}

impl LstmForecaster {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.init_params()?;
        let adam = AdamState::for_params(cfg.adam, &params)?;
        Ok(Self {
            cfg,
            params,
            adam,
            rounds: 0,
            losses: Vec::new(),
        })
    }

    pub fn params(&self) -> &LstmParams {
        &self.params
    }

    /// Per-round epoch losses, keyed by the 1-based round.
    pub fn loss_log(&self) -> &[(usize, Vec<f64>)] {
        &self.losses
    }

    /// Writes `t,l,loss` lines, one per epoch of every round.
    pub fn write_loss_log(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,l,loss")?;
        for (t, losses) in &self.losses {
            for (l, loss) in losses.iter().enumerate() {
                writeln!(out, "{t},{},{loss}", l + 1)?;
            }
        }
        Ok(())
    }
}

impl Forecaster for LstmForecaster {
    fn name(&self) -> &str {
        "lstm"
    }

    fn retrain(&mut self, window: &[f64], label: f64) -> Result<()> {
        let window = Window::new(window.to_vec())?;
        if self.cfg.reset_adam_each_iteration {
            self.adam.reset();
        }
        let (best, records) =
            train_one_iteration(&self.params, &window, label, &self.cfg, &mut self.adam)?;
        self.params = best;
        self.rounds += 1;
        self.losses
            .push((self.rounds, records.iter().map(|r| r.loss).collect()));
        Ok(())
    }

    fn predict(&mut self, window: &[f64]) -> Result<f64> {
        forward(&self.params, &Window::new(window.to_vec())?)
    }

    fn retrains_after_last_forecast(&self) -> bool {
        true
    }
}

/// Local-linear-trend filter. Windows are ignored: the filter state is
/// built from `X⁽¹⁾` and then updated with each observed label.
pub struct EkfAdapter {
    settings: EkfSettings,
    filter: Option<EkfForecaster>,
}

impl EkfAdapter {
    pub fn new(settings: EkfSettings) -> Self {
        Self {
            settings,
            filter: None,
        }
    }

    fn filter(&mut self) -> Result<&mut EkfForecaster> {
        self.filter
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("filter used before begin".into()))
    }
}

impl Forecaster for EkfAdapter {
    fn name(&self) -> &str {
        "ekf"
    }

    fn begin(&mut self, history: &[f64]) -> Result<()> {
        self.filter = Some(EkfForecaster::local_linear_trend(history, &self.settings)?);
        Ok(())
    }

    fn retrain(&mut self, _window: &[f64], label: f64) -> Result<()> {
        self.filter()?.observe(label)
    }

    fn predict(&mut self, _window: &[f64]) -> Result<f64> {
        self.filter()?.predict_next()
    }
}

/// Least-squares AR(p), refitted on `window ++ [label]` at every step
/// unless `refit` is off, in which case only the first fit is kept.
pub struct ArForecaster {
    p: usize,
    refit: bool,
    fit: Fitted<ArFit>,
    fitted_once: bool,
}

impl ArForecaster {
    pub fn new(p: usize, refit: bool) -> Self {
        Self {
            p,
            refit,
            fit: Fitted::None,
            fitted_once: false,
        }
    }

    pub fn fit(&self) -> Option<&ArFit> {
        match &self.fit {
            Fitted::Model(f) => Some(f),
            _ => None,
        }
    }
}

impl Forecaster for ArForecaster {
    fn name(&self) -> &str {
        "ar"
    }

    fn retrain(&mut self, window: &[f64], label: f64) -> Result<()> {
        if self.fitted_once && !self.refit {
            return Ok(());
        }
        self.fitted_once = true;
        self.fit = degenerate_to_none(fit_ar_ols(&extend(window, label), self.p))?;
        Ok(())
    }

    fn predict(&mut self, window: &[f64]) -> Result<f64> {
        match &self.fit {
            Fitted::Model(fit) => forecast_ar_series(fit, window),
            Fitted::Degenerate => last(window),
            Fitted::None => Err(no_fit()),
        }
    }
}

/// Hannan–Rissanen ARIMA(p, d, q) with the same refit policy as
/// [`ArForecaster`].
pub struct ArimaForecaster {
    spec: ArimaSpec,
    refit: bool,
    fit: Fitted<ArimaFit>,
    fitted_once: bool,
}

impl ArimaForecaster {
    pub fn new(spec: ArimaSpec, refit: bool) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            refit,
            fit: Fitted::None,
            fitted_once: false,
        })
    }
}

impl Forecaster for ArimaForecaster {
    fn name(&self) -> &str {
        "arima"
    }

    fn retrain(&mut self, window: &[f64], label: f64) -> Result<()> {
        if self.fitted_once && !self.refit {
            return Ok(());
        }
        self.fitted_once = true;
        self.fit = degenerate_to_none(fit_arima(&extend(window, label), self.spec))?;
        Ok(())
    }

    fn predict(&mut self, window: &[f64]) -> Result<f64> {
        match &self.fit {
            Fitted::Model(fit) => forecast_arima(fit, window),
            Fitted::Degenerate => last(window),
            Fitted::None => Err(no_fit()),
        }
    }
}

/// Repeats the last value of the window.
#[derive(Debug, Default)]
pub struct NaiveForecaster;

impl Forecaster for NaiveForecaster {
    fn name(&self) -> &str {
        "naive"
    }

    fn retrain(&mut self, _window: &[f64], _label: f64) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, window: &[f64]) -> Result<f64> {
        last(window)
    }
}

/// Control that replays known future values in order. Only meaningful on
/// an unscaled run.
#[derive(Debug)]
pub struct OracleForecaster {
    future: Vec<f64>,
    next: usize,
}

impl OracleForecaster {
    /// `future[k]` is returned by the `k`-th call to `predict`.
    pub fn new(future: Vec<f64>) -> Self {
        Self { future, next: 0 }
    }
}

impl Forecaster for OracleForecaster {
    fn name(&self) -> &str {
        "oracle"
    }

    fn retrain(&mut self, _window: &[f64], _label: f64) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, _window: &[f64]) -> Result<f64> {
        let v = self
            .future
            .get(self.next)
            .copied()
            .ok_or_else(|| Error::InvalidArgument("oracle ran past its known values".into()))?;
        self.next += 1;
        Ok(v)
    }
}

fn extend(window: &[f64], label: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(window.len() + 1);
    v.extend_from_slice(window);
    v.push(label);
    v
}

fn last(window: &[f64]) -> Result<f64> {
    window
        .last()
        .copied()
        .ok_or(Error::SeriesTooShort { needed: 1, got: 0 })
}

/// Latest fit of a refitted model. A failed refit keeps the previous state.
#[derive(Debug, Clone)]
enum Fitted<T> {
    None,
    /// The window was rank-deficient; forecasts repeat the last value.
    Degenerate,
    Model(T),
}

fn degenerate_to_none<T>(fit: Result<T>) -> Result<Fitted<T>> {
    match fit {
        Ok(f) => Ok(Fitted::Model(f)),
        Err(Error::DegenerateRegression(msg)) => {
            warn!("degenerate regression window ({msg}); forecasting the last value");
            Ok(Fitted::Degenerate)
        }
        Err(e) => Err(e),
    }
}

fn no_fit() -> Error {
    Error::InvalidArgument("no successful fit to forecast from".into())
}

/// Affine map of a training range onto `[0, 1]`. Values outside the range
/// extrapolate linearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub const IDENTITY: MinMaxScaler = MinMaxScaler { min: 0.0, max: 1.0 };

    pub fn scale(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

/// Fits a scaler on `train` and returns it with the scaled values.
pub fn min_max_scale(train: &[f64]) -> Result<(MinMaxScaler, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::SeriesTooShort { needed: 1, got: 0 });
    }
    if train.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scaler input"));
    }
    let min = train.iter().copied().fold(f64::INFINITY, f64::min);
    let max = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(Error::DegenerateScale(min));
    }
    let s = MinMaxScaler { min, max };
    Ok((s, train.iter().map(|&x| s.scale(x)).collect()))
}

pub fn inverse_scale(scaler: &MinMaxScaler, v: f64) -> f64 {
    scaler.inverse(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// 1-based index into the series, in `T+1 ..= T+N`.
    pub t: usize,
    pub predicted: f64,
    pub observed: f64,
    /// `|x̂ − x| / |x|`; absent when the observation is zero.
    pub relative_error: Option<f64>,
}

impl ForecastRecord {
    pub fn new(t: usize, predicted: f64, observed: f64) -> Self {
        let relative_error =
            (observed != 0.0).then(|| (predicted - observed).abs() / observed.abs());
        Self {
            t,
            predicted,
            observed,
            relative_error,
        }
    }
}

/// Mean relative absolute error over `records`.
pub fn metric_e(records: &[ForecastRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut sum = 0.0;
    for r in records {
        if r.observed == 0.0 {
            return Err(Error::ZeroObservation(r.t));
        }
        sum += (r.predicted - r.observed).abs() / r.observed.abs();
    }
    Ok(sum / records.len() as f64)
}

/// A forecaster error at one step. The step's forecast falls back to the
/// last window value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub t: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub series_id: String,
    pub method: String,
    pub config: BTreeMap<String, String>,
    pub t_train: usize,
    pub horizon: usize,
    pub feedback: Feedback,
    /// Initialization seed of a seeded method.
    pub seed: Option<u64>,
    /// Scaler applied to the values the forecaster saw, if any.
    pub scaler: Option<MinMaxScaler>,
    pub retrain_calls: usize,
    pub records: Vec<ForecastRecord>,
    /// Steps left out of the metric because the observation was zero.
    pub excluded_zero_observations: usize,
    pub failures: Vec<StepFailure>,
    pub metric_e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl RunReport {
    /// Records entering the metric.
    pub fn scored_records(&self) -> Vec<ForecastRecord> {
        self.records
            .iter()
            .filter(|r| r.observed != 0.0)
            .cloned()
            .collect()
    }

    /// Pretty JSON followed by a newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_plot_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,observed,predicted,abs_diff")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.t,
                r.observed,
                r.predicted,
                (r.predicted - r.observed).abs()
            )?;
        }
        Ok(())
    }
}

/// Runs the rolling protocol over the first `t_train + horizon` values.
///
/// With `scaling`, a min-max scaler fitted on `x⁽¹⁾…x⁽ᵀ⁾` is applied to
/// everything the forecaster sees and inverted on every forecast; a
/// constant training span falls back to no scaling.
pub fn rolling_forecast(
    fc: &mut dyn Forecaster,
    series: &TimeSeries,
    t_train: usize,
    horizon: usize,
    scaling: bool,
    feedback: Feedback,
) -> Result<RunReport> {
    let start = Instant::now();
    check_run_shape(series.len(), t_train, horizon)?;
    let observed = &series.values()[..t_train + horizon];
    let scaler = if scaling {
        match min_max_scale(&observed[..t_train]) {
            Ok((s, _)) => Some(s),
            Err(Error::DegenerateScale(v)) => {
                warn!(
                    "training span of `{}` is constant at {v}; running unscaled",
                    series.id
                );
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let scaled: Vec<f64> = match scaler {
        Some(s) => observed.iter().map(|&x| s.scale(x)).collect(),
        None => observed.to_vec(),
    };

    let mut window = scaled[..t_train - 1].to_vec();
    fc.begin(&window)?;
    let mut records = Vec::with_capacity(horizon);
    let mut failures = Vec::new();
    let mut retrain_calls = 0;
    let mut consecutive = 0;
    let mut last_prediction = f64::NAN;
    let rounds = if fc.retrains_after_last_forecast() {
        horizon + 1
    } else {
        horizon
    };

    for t in 1..=rounds {
        let label = scaled[t_train + t - 2];
        retrain_calls += 1;
        if let Err(e) = fc.retrain(&window, label) {
            warn!("{} retrain failed at step {t}: {e}", fc.name());
            failures.push(StepFailure {
                t,
                stage: "retrain".into(),
                message: e.to_string(),
            });
        }
        if t > horizon {
            break;
        }
        let appended = if t == 1 || feedback == Feedback::Observation {
            label
        } else {
            last_prediction
        };
        window.remove(0);
        window.push(appended);

        let pred = match fc.predict(&window) {
            Ok(p) if p.is_finite() => {
                consecutive = 0;
                p
            }
            outcome => {
                let message = match outcome {
                    Err(e) => e.to_string(),
                    Ok(p) => format!("non-finite forecast {p}"),
                };
                warn!("{} predict failed at step {t}: {message}", fc.name());
                failures.push(StepFailure {
                    t,
                    stage: "predict".into(),
                    message,
                });
                consecutive += 1;
                if consecutive >= MAX_CONSECUTIVE_FAILURES {
                    return Err(Error::RunAborted(t));
                }
                *window.last().expect("window length >= 1")
            }
        };
        last_prediction = pred;
        let emitted = scaler.map_or(pred, |s| s.inverse(pred));
        records.push(ForecastRecord::new(
            t_train + t,
            emitted,
            observed[t_train + t - 1],
        ));
    }

    let scored: Vec<ForecastRecord> = records
        .iter()
        .filter(|r| r.observed != 0.0)
        .cloned()
        .collect();
    let excluded = records.len() - scored.len();
    if excluded > 0 {
        warn!("{excluded} zero observations excluded from the metric");
    }
    let metric = metric_e(&scored)?;
    Ok(RunReport {
        series_id: series.id.clone(),
        method: fc.name().to_string(),
        config: BTreeMap::new(),
        t_train,
        horizon,
        feedback,
        seed: None,
        scaler,
        retrain_calls,
        records,
        excluded_zero_observations: excluded,
        failures,
        metric_e: metric,
        wall_time_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    })
}

/// Forecaster choice with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodKind {
    /// `seed = None` derives the initialization seed from the run seed.
    Lstm {
        cfg: TrainConfig,
        seed: Option<u64>,
    },
    Ekf(EkfSettings),
    Ar {
        p: usize,
        refit: bool,
    },
    Arima {
        spec: ArimaSpec,
        refit: bool,
    },
    Naive,
    Oracle,
}

impl MethodKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            MethodKind::Lstm { .. } => "lstm",
            MethodKind::Ekf(_) => "ekf",
            MethodKind::Ar { .. } => "ar",
            MethodKind::Arima { .. } => "arima",
            MethodKind::Naive => "naive",
            MethodKind::Oracle => "oracle",
        }
    }

    /// Only the LSTM is scaled unless overridden.
    pub fn default_scaling(&self) -> bool {
        matches!(self, MethodKind::Lstm { .. })
    }
}

/// One entry of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    /// Label used in reports; defaults to the kind name.
    pub label: String,
    pub kind: MethodKind,
    pub scaling: Option<bool>,
    pub feedback: Option<Feedback>,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            label: kind.kind_name().to_string(),
            kind,
            scaling: None,
            feedback: None,
        }
    }

    pub fn scaling(&self) -> bool {
        self.scaling.unwrap_or_else(|| self.kind.default_scaling())
    }

    /// Instantiates the forecaster. `index` picks the derived seed when the
    /// method has none of its own; the oracle reads the future of `series`.
    pub fn build(
        &self,
        series: &TimeSeries,
        t_train: usize,
        run_seed: u64,
        index: u64,
    ) -> Result<Box<dyn Forecaster>> {
        Ok(match &self.kind {
            MethodKind::Lstm { cfg, seed } => {
                let cfg = TrainConfig {
                    seed: seed.unwrap_or_else(|| derive_seed(run_seed, index)),
                    ..cfg.clone()
                };
                Box::new(LstmForecaster::new(cfg)?)
            }
            MethodKind::Ekf(s) => Box::new(EkfAdapter::new(*s)),
            MethodKind::Ar { p, refit } => Box::new(ArForecaster::new(*p, *refit)),
            MethodKind::Arima { spec, refit } => Box::new(ArimaForecaster::new(*spec, *refit)?),
            MethodKind::Naive => Box::new(NaiveForecaster),
            MethodKind::Oracle => {
                if self.scaling() {
                    return Err(Error::InvalidArgument(
                        "the oracle runs unscaled only".into(),
                    ));
                }
                Box::new(OracleForecaster::new(
                    series.values().get(t_train..).unwrap_or_default().to_vec(),
                ))
            }
        })
    }

    /// Effective seed of an LSTM method at position `index`.
    pub fn effective_seed(&self, run_seed: u64, index: u64) -> Option<u64> {
        match &self.kind {
            MethodKind::Lstm { seed, .. } => {
                Some(seed.unwrap_or_else(|| derive_seed(run_seed, index)))
            }
            _ => None,
        }
    }
}

/// Shared settings of a comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareSettings {
    pub t_train: usize,
    pub horizon: usize,
    pub feedback: Feedback,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodFailure {
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// Ascending by metric; ties keep the input order.
    pub reports: Vec<RunReport>,
    pub failures: Vec<MethodFailure>,
}

/// Runs every method on the same data in parallel. A failing method is
/// reported in `failures` and does not affect the others.
pub fn compare_methods(
    series: &TimeSeries,
    methods: &[MethodSpec],
    settings: CompareSettings,
) -> Result<Comparison> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to compare".into()));
    }
    let outcomes: Vec<(usize, std::result::Result<RunReport, String>)> = methods
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let run = || -> Result<RunReport> {
                let mut fc = m.build(series, settings.t_train, settings.seed, i as u64)?;
                let mut report = rolling_forecast(
                    fc.as_mut(),
                    series,
                    settings.t_train,
                    settings.horizon,
                    m.scaling(),
                    m.feedback.unwrap_or(settings.feedback),
                )?;
                report.method = m.label.clone();
                report.seed = m.effective_seed(settings.seed, i as u64);
                Ok(report)
            };
            (i, run().map_err(|e| e.to_string()))
        })
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (i, outcome) in outcomes {
        match outcome {
            Ok(r) => reports.push(r),
            Err(message) => failures.push(MethodFailure {
                method: methods[i].label.clone(),
                message,
            }),
        }
    }
    reports.sort_by(|a, b| a.metric_e.total_cmp(&b.metric_e));
    Ok(Comparison { reports, failures })
}
