use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use seqcast::config::{RawConfig, RunConfig};
use seqcast::harness::{
    compare_methods, rolling_forecast, Comparison, Forecaster, LstmForecaster, MethodKind,
    RunReport,
};
use seqcast::io::{load_csv, write_atomic, write_series_csv};
use seqcast::lstm::LstmDims;
use seqcast::series::TimeSeries;
use seqcast::training::{gradient_check, TrainConfig};
use seqcast::{synth, Error};

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "SEQCAST_OUT";
const DEFAULT_OUT: &str = "seqcast-out";

#[derive(Parser)]
#[command(
    name = "seqcast",
    version,
    about = "Rolling one-step-ahead forecasting with sequential LSTMs and baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method through the rolling protocol.
    Forecast(ForecastArgs),
    /// Run several methods on the same data and rank them.
    Compare(CompareArgs),
    /// Check BPTT gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a seeded synthetic series as CSV.
    Synth(SynthArgs),
    /// Convert a report into `t,observed,predicted,abs_diff` rows.
    EmitPlot(EmitPlotArgs),
}

/// Settings shared by `forecast` and `compare`. Flags override the file.
#[derive(Args)]
struct RunArgs {
    /// Config file with a [run] section and [method.<label>] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (header row, timestamp column, value column).
    #[arg(long)]
    series: Option<PathBuf>,
    /// Value column, by header name or 0-based index.
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    timestamp_column: Option<String>,
    /// Named series preset supplying T, N and AR/ARIMA orders.
    #[arg(long)]
    preset: Option<String>,
    /// Training length T.
    #[arg(long)]
    t_train: Option<usize>,
    /// Forecast horizon N.
    #[arg(long)]
    horizon: Option<usize>,
    /// prediction | observation
    #[arg(long)]
    feedback: Option<String>,
    /// Run seed; required when an LSTM has no seed of its own.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $SEQCAST_OUT, else ./seqcast-out].
    #[arg(long)]
    output: Option<PathBuf>,
    /// Any setting as `section.key=value`, e.g. `method.lstm.epochs=20`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Include wall time in the JSON (repeat runs then differ).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Method section label to run; created with default settings if absent.
    #[arg(long)]
    method: Option<String>,
    /// Also write plot.csv.
    #[arg(long)]
    plot: bool,
    /// For LSTM runs, also write the per-epoch losses to training_log.csv.
    #[arg(long)]
    training_log: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated method labels added with default settings if absent.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail when the worst relative error reaches this value.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Sine,
    Ar,
    Arma,
    RandomWalk,
}

#[derive(Args)]
struct SynthArgs {
    kind: SynthKind,
    #[arg(long, default_value_t = 230)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination file [default: <output dir>/<kind>.csv].
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 50.0)]
    period: f64,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 2.0)]
    offset: f64,
    #[arg(long, default_value_t = 0.0)]
    phase: f64,
    /// AR coefficients, comma-separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "0.5,-0.25"
    )]
    alpha: Vec<f64>,
    /// MA coefficients, comma-separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "0.3"
    )]
    beta: Vec<f64>,
    /// AR/ARMA intercept.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    c: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Random-walk start value.
    #[arg(long, default_value_t = 100.0, allow_hyphen_values = true)]
    start: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    drift: f64,
}

#[derive(Args)]
struct EmitPlotArgs {
    /// report.json from `forecast` or compare.json from `compare`.
    #[arg(long)]
    report: PathBuf,
    /// Method label to extract from a comparison.
    #[arg(long)]
    method: Option<String>,
    /// Destination [default: plot.csv next to the report].
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Forecast(a) => forecast(a),
        Command::Compare(a) => compare(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth_cmd(a),
        Command::EmitPlot(a) => emit_plot(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// File values, then flags. Relative series paths in a file are taken
/// relative to the file.
fn raw_config(a: &RunArgs) -> Result<RawConfig> {
    let mut raw = match &a.config {
        Some(path) => {
            let mut raw = RawConfig::load(path)?;
            if let Some(series) = raw.get("run", "series").map(PathBuf::from) {
                if series.is_relative() {
                    let base = path.parent().unwrap_or(Path::new(""));
                    raw.set("run", "series", base.join(series).display().to_string());
                }
            }
            raw
        }
        None => RawConfig::default(),
    };
    let flags = [
        ("series", a.series.as_ref().map(|p| p.display().to_string())),
        ("column", a.column.clone()),
        ("timestamp_column", a.timestamp_column.clone()),
        ("preset", a.preset.clone()),
        ("t_train", a.t_train.map(|v| v.to_string())),
        ("horizon", a.horizon.map(|v| v.to_string())),
        ("feedback", a.feedback.clone()),
        ("seed", a.seed.map(|v| v.to_string())),
        ("output", a.output.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            raw.set("run", key, v);
        }
    }
    for o in &a.overrides {
        raw.set_dotted(o)?;
    }
    if let Some(series) = raw.get("run", "series").map(PathBuf::from) {
        let abs = std::path::absolute(&series)
            .with_context(|| format!("resolving {}", series.display()))?;
        raw.set("run", "series", abs.display().to_string());
    }
    Ok(raw)
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load_series(cfg: &RunConfig) -> Result<TimeSeries> {
    let path = cfg
        .series
        .as_ref()
        .ok_or_else(|| anyhow!("no input series (--series or `series` in [run])"))?;
    let mut data = load_csv(path, &cfg.column, cfg.timestamp_column.as_ref())?;
    Ok(data.series.remove(0))
}

fn announce(cfg: &RunConfig, resolved: &str) {
    println!("# resolved configuration");
    print!("{resolved}");
    for (i, m) in cfg.methods.iter().enumerate() {
        if let Some(seed) = m.effective_seed(cfg.seed.unwrap_or(0), i as u64) {
            println!("# seed for [method.{}]: {seed}", m.label);
        }
    }
}

fn finish_report(report: &mut RunReport, timing: bool) {
    if let Some(ms) = report.wall_time_ms {
        eprintln!("{}: {:.1} ms", report.method, ms);
    }
    if !timing {
        report.wall_time_ms = None;
    }
}

fn forecast(a: ForecastArgs) -> Result<ExitCode> {
    let mut raw = raw_config(&a.run)?;
    let labels = raw.method_labels();
    let label = match (&a.method, labels.as_slice()) {
        (Some(m), _) => m.clone(),
        (None, [only]) => only.clone(),
        (None, []) => bail!("no method given (--method or a [method.<label>] section)"),
        (None, _) => bail!(
            "config has several methods ({}); pick one with --method",
            labels.join(", ")
        ),
    };
    let section = format!("method.{label}");
    if raw.section(&section).is_none() {
        raw.set(&section, "kind", label.as_str());
    }
    raw.retain_method(&label);
    let cfg = raw.resolve()?;
    let resolved = cfg.to_raw(false).to_text();
    announce(&cfg, &resolved);

    let series = load_series(&cfg)?;
    let method = &cfg.methods[0];
    let settings = cfg.compare_settings();
    // The LSTM is kept concrete so its loss log stays reachable.
    let (mut lstm, mut other) = match &method.kind {
        MethodKind::Lstm { cfg: tc, .. } => {
            let seed = method
                .effective_seed(settings.seed, 0)
                .expect("lstm is seeded");
            (
                Some(LstmForecaster::new(TrainConfig { seed, ..tc.clone() })?),
                None,
            )
        }
        _ => (
            None,
            Some(method.build(&series, settings.t_train, settings.seed, 0)?),
        ),
    };
    let feedback = method.feedback.unwrap_or(cfg.feedback);
    let target: &mut dyn Forecaster = match (lstm.as_mut(), other.as_mut()) {
        (Some(l), _) => l,
        (None, Some(fc)) => fc.as_mut(),
        (None, None) => unreachable!("one forecaster is built"),
    };
    let mut report = rolling_forecast(
        target,
        &series,
        cfg.t_train,
        cfg.horizon,
        method.scaling(),
        feedback,
    )?;
    report.method = method.label.clone();
    report.config = cfg.echo(method);
    report.seed = method.effective_seed(settings.seed, 0);
    finish_report(&mut report, a.run.timing);

    let out = output_dir(&cfg);
    write_atomic(&out.join("report.json"), report.to_json()?.as_bytes())?;
    write_atomic(&out.join("resolved.ini"), resolved.as_bytes())?;
    if a.plot {
        let mut buf = Vec::new();
        report.write_plot_csv(&mut buf)?;
        write_atomic(&out.join("plot.csv"), &buf)?;
    }
    if a.training_log {
        let l = lstm
            .as_ref()
            .ok_or_else(|| anyhow!("--training-log applies to LSTM runs only"))?;
        let mut buf = Vec::new();
        l.write_loss_log(&mut buf)?;
        write_atomic(&out.join("training_log.csv"), &buf)?;
    }
    println!(
        "{}: E = {} over {} steps",
        report.method,
        report.metric_e,
        report.records.len()
    );
    if !report.failures.is_empty() {
        eprintln!(
            "{} step failures recorded in the report",
            report.failures.len()
        );
    }
    info!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn compare(a: CompareArgs) -> Result<ExitCode> {
    let mut raw = raw_config(&a.run)?;
    for m in &a.methods {
        let section = format!("method.{m}");
        if raw.section(&section).is_none() {
            raw.set(&section, "kind", m.as_str());
        }
    }
    let cfg = raw.resolve()?;
    let resolved = cfg.to_raw(false).to_text();
    announce(&cfg, &resolved);
    let series = load_series(&cfg)?;
    let Comparison {
        mut reports,
        failures,
    } = compare_methods(&series, &cfg.methods, cfg.compare_settings())?;
    for r in reports.iter_mut() {
        let spec = cfg
            .methods
            .iter()
            .find(|m| m.label == r.method)
            .expect("report of a configured method");
        r.config = cfg.echo(spec);
        finish_report(r, a.run.timing);
    }
    let comparison = Comparison { reports, failures };
    let out = output_dir(&cfg);
    let mut json = serde_json::to_string_pretty(&comparison).map_err(Error::from)?;
    json.push('\n');
    write_atomic(&out.join("compare.json"), json.as_bytes())?;
    write_atomic(&out.join("resolved.ini"), resolved.as_bytes())?;
    for (rank, r) in comparison.reports.iter().enumerate() {
        println!("{:>2}. {:<12} E = {}", rank + 1, r.method, r.metric_e);
    }
    for f in &comparison.failures {
        eprintln!("method `{}` failed: {}", f.method, f.message);
    }
    Ok(if comparison.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let dims = LstmDims {
        layers: a.layers,
        hidden_dim: a.hidden,
    };
    let s = gradient_check(a.instances, dims, a.window, a.seed)?;
    println!(
        "instances {} layers {} hidden {} window {} seed {}: max relative error {:e} (instance {})",
        s.instances, a.layers, a.hidden, a.window, a.seed, s.max_relative_error, s.worst_instance
    );
    if s.max_relative_error < a.threshold {
        println!("PASS (threshold {:e})", a.threshold);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL (threshold {:e})", a.threshold);
        Ok(ExitCode::FAILURE)
    }
}

fn synth_cmd(a: SynthArgs) -> Result<ExitCode> {
    let (name, values) = match a.kind {
        SynthKind::Sine => (
            "sine",
            synth::sine(a.points, a.period, a.amplitude, a.offset, a.phase)?,
        ),
        SynthKind::Ar => ("ar", synth::ar(a.points, a.c, &a.alpha, a.sigma, a.seed)?),
        SynthKind::Arma => (
            "arma",
            synth::arma(a.points, a.c, &a.alpha, &a.beta, a.sigma, a.seed)?,
        ),
        SynthKind::RandomWalk => (
            "random_walk",
            synth::random_walk(a.points, a.start, a.drift, a.sigma, a.seed)?,
        ),
    };
    let series = TimeSeries::from_values(name, values)?;
    let path = a.output.unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
            .join(format!("{name}.csv"))
    });
    let mut buf = Vec::new();
    write_series_csv(&mut buf, &series)?;
    write_atomic(&path, &buf)?;
    println!(
        "wrote {} points to {} (seed {})",
        series.len(),
        path.display(),
        a.seed
    );
    Ok(ExitCode::SUCCESS)
}

fn emit_plot(a: EmitPlotArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.report)
        .with_context(|| format!("reading {}", a.report.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let report: RunReport = if value.get("reports").is_some() {
        let reports: Vec<RunReport> =
            serde_json::from_value(value["reports"].clone()).map_err(Error::from)?;
        let labels: Vec<&str> = reports.iter().map(|r| r.method.as_str()).collect();
        let wanted = a.method.as_deref().ok_or_else(|| {
            anyhow!(
                "comparison report: choose --method from {}",
                labels.join(", ")
            )
        })?;
        reports
            .iter()
            .find(|r| r.method == wanted)
            .cloned()
            .ok_or_else(|| {
                anyhow!(
                    "no method `{wanted}` in report (have {})",
                    labels.join(", ")
                )
            })?
    } else {
        serde_json::from_value(value).map_err(Error::from)?
    };
    let path = a
        .output
        .unwrap_or_else(|| a.report.with_file_name("plot.csv"));
    let mut buf = Vec::new();
    report.write_plot_csv(&mut buf)?;
    write_atomic(&path, &buf)?;
    println!("wrote {} rows to {}", report.records.len(), path.display());
    Ok(ExitCode::SUCCESS)
}
