//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use seqcast::arma::{difference, fit_ar_ols, fit_arima, undifference, ArimaSpec};
use seqcast::ekf::{predict, update, EkfState, LinearModel};
use seqcast::harness::{
    compare_methods, metric_e, rolling_forecast, ArForecaster, ArimaForecaster, CompareSettings,
    EkfAdapter, ForecastRecord, LstmForecaster, MethodKind, MethodSpec, NaiveForecaster, RunReport,
};
use seqcast::linalg::{Matrix, Vector};
use seqcast::lstm::{forward, LstmDims, Window};
use seqcast::rng::SeededRng;
use seqcast::series::TimeSeries;
use seqcast::training::{
    gradient_check, loss_relative_mse, sequential_forecast_lstm, AdamConfig, Feedback, InitMode,
    TrainConfig,
};
use seqcast::{ekf::EkfSettings, synth};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let s = gradient_check(
        100,
        LstmDims {
            layers: 1,
            hidden_dim: 4,
        },
        10,
        2024,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        s.max_relative_error < 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "{} instances, max relative error {:e}, {:.2?}",
            s.instances, s.max_relative_error, elapsed
        ),
    )
}

fn criterion_2() -> Outcome {
    let x = [1.3, 0.7, 1.9, 1.1, 0.4, 1.6];
    let epochs = 7;
    let cfg = TrainConfig {
        epochs,
        adam: AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        },
        dims: LstmDims {
            layers: 1,
            hidden_dim: 3,
        },
        init: InitMode::Seeded { scale: 0.3 },
        seed: 8,
        ..Default::default()
    };
    let run = sequential_forecast_lstm(&x, 4, 2, &cfg).map_err(|e| e.to_string())?;
    let p5 = run.predictions[0];
    // X(1) = [x1, x2, x3] -> x4; X(2) = [x2, x3, x4] -> x5; X(3) = [x3, x4, x̂5] -> x6.
    let expected = [
        (vec![x[0], x[1], x[2]], x[3]),
        (vec![x[1], x[2], x[3]], x[4]),
        (vec![x[2], x[3], p5], x[5]),
    ];
    let got: Vec<(Vec<f64>, f64)> = run
        .iterations
        .iter()
        .map(|it| (it.window.clone(), it.label))
        .collect();
    if got != expected {
        return Err(format!("window/label sequence {got:?} != {expected:?}"));
    }
    for (i, it) in run.iterations.iter().enumerate() {
        if it.records.len() != epochs {
            return Err(format!(
                "iteration {} has {} epoch records",
                it.t,
                it.records.len()
            ));
        }
        let min = it
            .records
            .iter()
            .map(|r| r.loss)
            .fold(f64::INFINITY, f64::min);
        let best = it.best_epoch().expect("records");
        let window = Window::new(it.window.clone()).map_err(|e| e.to_string())?;
        let pred = forward(&best.snapshot, &window).map_err(|e| e.to_string())?;
        let attained = loss_relative_mse(pred, it.label).map_err(|e| e.to_string())?;
        if attained != min {
            return Err(format!(
                "iteration {}: snapshot loss {attained} != recorded minimum {min}",
                it.t
            ));
        }
        // The next round starts from the selected snapshot.
        let next_start = run
            .iterations
            .get(i + 1)
            .map(|n| &n.records[0].snapshot)
            .unwrap_or(&run.final_params);
        if next_start != &best.snapshot {
            return Err(format!(
                "iteration {} does not continue from its best snapshot",
                it.t
            ));
        }
    }
    // Each forecast comes from the round's selected snapshot and the shifted window.
    let best = |i: usize| &run.iterations[i].best_epoch().expect("records").snapshot;
    let f5 = forward(best(0), &Window::new(vec![x[1], x[2], x[3]]).unwrap())
        .map_err(|e| e.to_string())?;
    let f6 =
        forward(best(1), &Window::new(vec![x[2], x[3], p5]).unwrap()).map_err(|e| e.to_string())?;
    check(
        run.predictions == [f5, f6],
        format!("T=4 N=2: 3 rounds of {epochs} epochs; windows, labels and snapshots match the enumeration"),
    )
}

/// Plain linear Kalman filter over nested `Vec`s, written without the
/// library's matrix types.
struct PlainKf {
    f: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    x: Vec<f64>,
    p: Vec<Vec<f64>>,
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a.len())
        .map(|i| {
            (0..b[0].len())
                .map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn tr(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

fn plus(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

impl PlainKf {
    fn step(&mut self, y: &[f64]) {
        let x_pred: Vec<f64> = self
            .f
            .iter()
            .map(|row| row.iter().zip(&self.x).map(|(a, b)| a * b).sum())
            .collect();
        let p_pred = plus(&mm(&mm(&self.f, &self.p), &tr(&self.f)), &self.q);
        let s = plus(&mm(&mm(&self.h, &p_pred), &tr(&self.h)), &self.r);
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let s_inv = vec![
            vec![s[1][1] / det, -s[0][1] / det],
            vec![-s[1][0] / det, s[0][0] / det],
        ];
        let k = mm(&mm(&p_pred, &tr(&self.h)), &s_inv);
        let innov: Vec<f64> = self
            .h
            .iter()
            .zip(y)
            .map(|(row, yi)| yi - row.iter().zip(&x_pred).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        self.x = x_pred
            .iter()
            .zip(&k)
            .map(|(xi, krow)| xi + krow.iter().zip(&innov).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let kh = mm(&k, &self.h);
        let n = self.x.len();
        let i_kh: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| f64::from(u8::from(i == j)) - kh[i][j])
                    .collect()
            })
            .collect();
        self.p = mm(&i_kh, &p_pred);
    }
}

fn criterion_3() -> Outcome {
    let dt = 0.5;
    let f = vec![
        vec![1.0, dt, 0.5 * dt * dt],
        vec![0.0, 1.0, dt],
        vec![0.0, 0.0, 1.0],
    ];
    let h = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
    let q = vec![
        vec![1e-3, 0.0, 0.0],
        vec![0.0, 2e-3, 0.0],
        vec![0.0, 0.0, 5e-4],
    ];
    let r = vec![vec![0.04, 0.01], vec![0.01, 0.09]];
    let p0 = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let x0 = vec![0.0, 1.0, 0.0];
    let m = |rows: &Vec<Vec<f64>>| Matrix::from_rows(rows).unwrap();
    let model = LinearModel {
        f: m(&f),
        h: m(&h),
        q: m(&q),
        r: m(&r),
    };
    let mut oracle = PlainKf {
        f,
        h,
        q,
        r,
        x: x0.clone(),
        p: p0.clone(),
    };
    let mut state = EkfState {
        x_hat: Vector::new(x0).unwrap(),
        p: m(&p0),
    };

    let mut rng = SeededRng::new(31);
    let mut truth = [0.0, 1.0, 0.2];
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        truth = [
            truth[0] + dt * truth[1] + 0.5 * dt * dt * truth[2],
            truth[1] + dt * truth[2] + rng.normal(0.0, 0.04),
            truth[2] + rng.normal(0.0, 0.02),
        ];
        let y = [
            truth[0] + rng.normal(0.0, 0.2),
            truth[1] + rng.normal(0.0, 0.3),
        ];
        let prior = predict(&model, &state).map_err(|e| e.to_string())?;
        state =
            update(&model, &prior, &Vector::new(y.to_vec()).unwrap()).map_err(|e| e.to_string())?;
        oracle.step(&y);
        for i in 0..3 {
            worst = worst.max((state.x_hat[i] - oracle.x[i]).abs());
            for j in 0..3 {
                worst = worst.max((state.p.get(i, j) - oracle.p[i][j]).abs());
            }
        }
    }
    check(
        worst <= 1e-10,
        format!("100 steps, 3 states, 2 measurements: max |difference| {worst:e}"),
    )
}

fn criterion_4() -> Outcome {
    let x = synth::ar(5000, 0.0, &[0.5, -0.25], 0.1, 77).map_err(|e| e.to_string())?;
    let fit = fit_ar_ols(&x, 2).map_err(|e| e.to_string())?;
    let recovered = (fit.alpha[0] - 0.5).abs() <= 0.05 && (fit.alpha[1] + 0.25).abs() <= 0.05;
    let decay: Vec<f64> = (0..30).map(|k| 0.5_f64.powi(k)).collect();
    let exact = fit_ar_ols(&decay, 1).map_err(|e| e.to_string())?;
    let decay_ok = (exact.alpha[0] - 0.5).abs() <= 1e-10 && exact.c.abs() <= 1e-10;
    check(
        recovered && decay_ok,
        format!(
            "AR(2) alpha = ({:.4}, {:.4}); decay alpha1 - 0.5 = {:e}, c = {:e}",
            fit.alpha[0],
            fit.alpha[1],
            exact.alpha[0] - 0.5,
            exact.c
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = SeededRng::new(5);
    let mut worst_rt = 0.0_f64;
    for len in 4..=24 {
        for d in 0..=3 {
            let x: Vec<f64> = (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let diffs = difference(&x, d).map_err(|e| e.to_string())?;
            let back = undifference(&diffs, &x[..d]);
            worst_rt = worst_rt.max(
                back.iter()
                    .zip(&x[d..])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        }
    }
    let ar = synth::ar(400, 0.3, &[0.7], 1.0, 12).map_err(|e| e.to_string())?;
    let ols = fit_ar_ols(&ar, 1).map_err(|e| e.to_string())?;
    let arima = fit_arima(&ar, ArimaSpec::new(1, 0, 0)).map_err(|e| e.to_string())?;
    let ols_gap = (ols.alpha[0] - arima.alpha[0])
        .abs()
        .max((ols.c - arima.intercept).abs());

    let mut worst_a = 0.0_f64;
    let mut worst_b = 0.0_f64;
    for seed in 0..10 {
        let x =
            synth::arma(10_000, 0.0, &[0.6], &[0.3], 1.0, 100 + seed).map_err(|e| e.to_string())?;
        let fit = fit_arima(&x, ArimaSpec::new(1, 0, 1)).map_err(|e| e.to_string())?;
        worst_a = worst_a.max((fit.alpha[0] - 0.6).abs());
        worst_b = worst_b.max((fit.beta[0] - 0.3).abs());
    }
    check(
        worst_rt <= 1e-12 && ols_gap <= 1e-6 && worst_a <= 0.1 && worst_b <= 0.15,
        format!(
            "round-trip {worst_rt:e}; (1,0,0) vs OLS {ols_gap:e}; ARMA(1,1) worst |da| {worst_a:.4}, |db| {worst_b:.4}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let e = |r: &[ForecastRecord]| metric_e(r).map_err(|e| e.to_string());
    let perfect = e(&[
        ForecastRecord::new(1, 4.0, 4.0),
        ForecastRecord::new(2, 7.5, 7.5),
    ])?;
    let single = e(&[ForecastRecord::new(1, 11.0, 10.0)])?;
    let pair = e(&[
        ForecastRecord::new(1, 11.0, 10.0),
        ForecastRecord::new(2, 13.0, 10.0),
    ])?;
    // 1.1 itself is not representable; the literal case is off by rounding only.
    let literal = metric_e(&[ForecastRecord::new(1, 1.1, 1.0)]).map_err(|e| e.to_string())?;
    check(
        perfect == 0.0 && single == 0.1 && pair == 0.2 && (literal - 0.1).abs() <= f64::EPSILON,
        format!("perfect {perfect}, single {single}, pair {pair}, literal 1.1 vs 1.0 -> {literal}"),
    )
}

/// Sine with period 50, 230 points, offset 2 so relative errors are defined.
fn sine_series() -> TimeSeries {
    TimeSeries::from_values("sine", synth::sine(230, 50.0, 1.0, 2.0, 0.0).unwrap()).unwrap()
}

fn sine_lstm(epochs: usize, seed: u64) -> MethodSpec {
    let cfg = TrainConfig {
        epochs,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..Default::default()
        },
        dims: LstmDims {
            layers: 1,
            hidden_dim: 8,
        },
        init: InitMode::Seeded { scale: 0.1 },
        ..Default::default()
    };
    MethodSpec {
        label: format!("lstm-l{epochs}-s{seed}"),
        ..MethodSpec::new(MethodKind::Lstm {
            cfg,
            seed: Some(seed),
        })
    }
}

struct SineRuns {
    naive: f64,
    l50: Vec<f64>,
    l5: Vec<f64>,
    elapsed: Duration,
}

fn sine_runs() -> Result<SineRuns, String> {
    let start = Instant::now();
    let series = sine_series();
    let mut methods = vec![MethodSpec::new(MethodKind::Naive)];
    methods.extend((0..10).map(|s| sine_lstm(50, s)));
    methods.extend((0..10).map(|s| sine_lstm(5, s)));
    let settings = CompareSettings {
        t_train: 200,
        horizon: 30,
        feedback: Feedback::Prediction,
        seed: 0,
    };
    let c = compare_methods(&series, &methods, settings).map_err(|e| e.to_string())?;
    if !c.failures.is_empty() {
        return Err(format!("{:?}", c.failures));
    }
    let metric = |label: &str| {
        c.reports
            .iter()
            .find(|r| r.method == label)
            .map(|r| r.metric_e)
            .unwrap()
    };
    Ok(SineRuns {
        naive: metric("naive"),
        l50: (0..10).map(|s| metric(&format!("lstm-l50-s{s}"))).collect(),
        l5: (0..10).map(|s| metric(&format!("lstm-l5-s{s}"))).collect(),
        elapsed: start.elapsed(),
    })
}

fn criterion_7(runs: &SineRuns) -> Outcome {
    let wins = runs
        .l50
        .iter()
        .filter(|&&e| e < 0.05 && e < runs.naive)
        .count();
    let shown: Vec<String> = runs.l50.iter().map(|e| format!("{e:.4}")).collect();
    check(
        wins >= 8 && runs.elapsed < Duration::from_secs(300),
        format!(
            "{wins}/10 seeds pass; LSTM E = [{}], naive E = {:.4}, {:.1?}",
            shown.join(", "),
            runs.naive,
            runs.elapsed
        ),
    )
}

fn strip_timing(mut r: RunReport) -> String {
    r.wall_time_ms = None;
    r.to_json().unwrap()
}

fn criterion_8() -> Outcome {
    let series = TimeSeries::from_values("noisy", {
        let mut rng = SeededRng::new(4);
        (0..90)
            .map(|i| 10.0 + (i as f64 * 0.3).sin() + rng.normal(0.0, 0.1))
            .collect()
    })
    .unwrap();
    let lstm_cfg = TrainConfig {
        epochs: 5,
        dims: LstmDims {
            layers: 2,
            hidden_dim: 4,
        },
        seed: 19,
        ..Default::default()
    };
    let run = |which: usize| -> Result<String, String> {
        let mut fc: Box<dyn seqcast::harness::Forecaster> = match which {
            0 => Box::new(LstmForecaster::new(lstm_cfg.clone()).map_err(|e| e.to_string())?),
            1 => Box::new(EkfAdapter::new(EkfSettings::default())),
            2 => Box::new(ArForecaster::new(3, true)),
            3 => Box::new(
                ArimaForecaster::new(ArimaSpec::new(1, 1, 1), true).map_err(|e| e.to_string())?,
            ),
            _ => Box::new(NaiveForecaster),
        };
        let scaling = which == 0;
        let r = rolling_forecast(fc.as_mut(), &series, 70, 15, scaling, Feedback::Prediction)
            .map_err(|e| e.to_string())?;
        Ok(strip_timing(r))
    };
    for which in 0..5 {
        if run(which)? != run(which)? {
            return Err(format!(
                "forecaster {which} produced different JSON on repeat"
            ));
        }
    }
    let methods = vec![
        MethodSpec::new(MethodKind::Lstm {
            cfg: lstm_cfg.clone(),
            seed: None,
        }),
        MethodSpec::new(MethodKind::Ekf(EkfSettings::default())),
        MethodSpec::new(MethodKind::Naive),
    ];
    let settings = CompareSettings {
        t_train: 70,
        horizon: 15,
        feedback: Feedback::Observation,
        seed: 3,
    };
    let both: Vec<Vec<String>> = (0..2)
        .map(|_| {
            compare_methods(&series, &methods, settings)
                .map(|c| c.reports.into_iter().map(strip_timing).collect())
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    check(
        both[0] == both[1],
        "5 forecasters and a parallel comparison repeat byte-identically".into(),
    )
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn criterion_9(runs: &SineRuns) -> Outcome {
    let (m50, m5) = (median(&runs.l50), median(&runs.l5));
    check(
        m50 <= m5,
        format!("median E at L=50 {m50:.4} vs L=5 {m5:.4}"),
    )
}

fn main() -> ExitCode {
    let mut outcomes: Vec<(u32, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
    ];
    match sine_runs() {
        Ok(runs) => {
            outcomes.push((7, criterion_7(&runs)));
            outcomes.push((8, criterion_8()));
            outcomes.push((9, criterion_9(&runs)));
        }
        Err(e) => {
            outcomes.push((7, Err(format!("sine runs failed: {e}"))));
            outcomes.push((8, criterion_8()));
            outcomes.push((9, Err("sine runs failed".into())));
        }
    }
    let mut failed = 0;
    for (n, o) in &outcomes {
        match o {
            Ok(d) => println!("criterion {n}: PASS  {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n}: FAIL  {d}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        outcomes.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
