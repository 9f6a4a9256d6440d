//! Run configuration: a flat `key = value` text format with a `[run]`
//! section and one `[method.<label>]` section per forecaster.
//!
//! ```text
//! [run]
//! series = prices.csv
//! column = close
//! preset = apple
//! seed = 7
//!
//! [method.lstm]
//! epochs = 50
//!
//! [method.slow-ar]
//! kind = ar
//! p = 100
//! ```
//!
//! A method's kind defaults to its label. Every problem in a file is
//! reported at once.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::arma::ArimaSpec;
use crate::ekf::EkfSettings;
use crate::error::{Error, Result};
use crate::harness::{CompareSettings, MethodKind, MethodSpec};
use crate::io::ColumnSel;
use crate::lstm::LstmDims;
use crate::training::{AdamConfig, Feedback, InitMode, TrainConfig};

/// Training and horizon lengths per named series, with the best-scoring AR
/// order and ARIMA `(p, d, q)` for that series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub t_train: usize,
    pub horizon: usize,
    pub ar_p: usize,
    pub arima: (usize, usize, usize),
}

pub const PRESETS: [Preset; 9] = [
    Preset {
        name: "apple",
        t_train: 1228,
        horizon: 30,
        ar_p: 300,
        arima: (10, 0, 2),
    },
    Preset {
        name: "microsoft",
        t_train: 1228,
        horizon: 30,
        ar_p: 400,
        arima: (10, 2, 1),
    },
    Preset {
        name: "google",
        t_train: 1228,
        horizon: 30,
        ar_p: 400,
        arima: (0, 1, 1),
    },
    Preset {
        name: "bitcoin",
        t_train: 1064,
        horizon: 30,
        ar_p: 100,
        arima: (6, 0, 2),
    },
    Preset {
        name: "ethereum",
        t_train: 1064,
        horizon: 30,
        ar_p: 100,
        arima: (6, 1, 1),
    },
    Preset {
        name: "cardano",
        t_train: 1064,
        horizon: 30,
        ar_p: 300,
        arima: (8, 2, 1),
    },
    Preset {
        name: "oil",
        t_train: 8248,
        horizon: 200,
        ar_p: 200,
        arima: (4, 1, 1),
    },
    Preset {
        name: "natural_gas",
        t_train: 5802,
        horizon: 150,
        ar_p: 200,
        arima: (10, 1, 2),
    },
    Preset {
        name: "gold",
        t_train: 816,
        horizon: 30,
        ar_p: 100,
        arima: (8, 2, 0),
    },
];

pub fn preset(name: &str) -> Option<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name)
}

/// Sections in file order, keys in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RawConfig::default();
        let mut errors = Vec::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if cfg.section(&name).is_some() {
                    errors.push(format!("line {n}: section [{name}] repeated"));
                }
                cfg.sections.push((name.clone(), Vec::new()));
                current = Some(name);
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {n}: expected `key = value`, got `{line}`"));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            match &current {
                None => errors.push(format!("line {n}: `{k}` appears before any section")),
                Some(_) => {
                    let entries = &mut cfg.sections.last_mut().expect("section open").1;
                    if entries.iter().any(|(ek, _)| ek == k) {
                        errors.push(format!("line {n}: key `{k}` repeated"));
                    } else {
                        entries.push((k.to_string(), v.to_string()));
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn section(&self, name: &str) -> Option<&[(String, String)]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e.as_slice())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.section(section)?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Sets or replaces one value, creating the section if needed.
    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        let value = value.into();
        let idx = match self.sections.iter().position(|(n, _)| n == section) {
            Some(i) => i,
            None => {
                self.sections.push((section.to_string(), Vec::new()));
                self.sections.len() - 1
            }
        };
        let entries = &mut self.sections[idx].1;
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => entries.push((key.to_string(), value)),
        }
    }

    /// Applies a `section.key=value` override; the section name may
    /// itself contain dots (`method.lstm.epochs=5`).
    pub fn set_dotted(&mut self, assignment: &str) -> Result<()> {
        let bad = || {
            Error::InvalidArgument(format!(
                "override `{assignment}` is not `section.key=value`"
            ))
        };
        let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().rsplit_once('.').ok_or_else(bad)?;
        if section.is_empty() || key.is_empty() {
            return Err(bad());
        }
        self.set(section, key, value.trim());
        Ok(())
    }

    /// Drops all method sections except `[method.<label>]`.
    pub fn retain_method(&mut self, label: &str) {
        let keep = format!("method.{label}");
        self.sections
            .retain(|(n, _)| !n.starts_with("method.") || *n == keep);
    }

    pub fn method_labels(&self) -> Vec<String> {
        self.sections
            .iter()
            .filter_map(|(n, _)| n.strip_prefix("method.").map(str::to_string))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (name, entries)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// Validates and fills defaults, collecting every problem.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut errs = Vec::new();
        for (name, _) in &self.sections {
            if name != "run" && !name.starts_with("method.") {
                errs.push(format!("unknown section [{name}]"));
            } else if name == "method." {
                errs.push("method section without a label".to_string());
            }
        }
        let run = Section::new("run", self.section("run").unwrap_or_default());
        run.check_keys(RUN_KEYS, &mut errs);
        let preset = run.get("preset").and_then(|name| {
            let p = preset(name);
            if p.is_none() {
                let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                errs.push(format!(
                    "[run] preset `{name}` unknown (known: {})",
                    known.join(", ")
                ));
            }
            p
        });
        let series = run.get("series").map(PathBuf::from);
        let column = run
            .get("column")
            .map_or(ColumnSel::Index(1), |c| c.parse().expect("infallible"));
        let timestamp_column = run
            .get("timestamp_column")
            .map(|c| c.parse().expect("infallible"));
        let t_train = run
            .parse::<usize>("t_train", &mut errs)
            .or(preset.map(|p| p.t_train));
        let horizon = run
            .parse::<usize>("horizon", &mut errs)
            .or(preset.map(|p| p.horizon));
        let feedback = run
            .parse::<Feedback>("feedback", &mut errs)
            .unwrap_or_default();
        let seed = run.parse::<u64>("seed", &mut errs);
        let output = run.get("output").map(PathBuf::from);
        match (t_train, horizon) {
            (Some(t), Some(n)) => {
                if n < 1 || n >= t {
                    errs.push(format!(
                        "[run] need T > N >= 1, got t_train={t}, horizon={n}"
                    ));
                }
            }
            _ => {
                if t_train.is_none() {
                    errs.push("[run] t_train missing (set it or choose a preset)".into());
                }
                if horizon.is_none() {
                    errs.push("[run] horizon missing (set it or choose a preset)".into());
                }
            }
        }

        let mut methods = Vec::new();
        for label in self.method_labels() {
            let name = format!("method.{label}");
            let sec = Section::new(&name, self.section(&name).unwrap_or_default());
            if let Some(m) = resolve_method(&label, &sec, preset, seed, &mut errs) {
                methods.push(m);
            }
        }
        if methods.is_empty() && self.method_labels().is_empty() {
            errs.push("no [method.<label>] section".into());
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(RunConfig {
            series,
            column,
            timestamp_column,
            preset: preset.map(|p| p.name.to_string()),
            t_train: t_train.expect("checked"),
            horizon: horizon.expect("checked"),
            feedback,
            seed,
            output,
            methods,
        })
    }
}

const RUN_KEYS: &[&str] = &[
    "series",
    "column",
    "timestamp_column",
    "preset",
    "t_train",
    "horizon",
    "feedback",
    "seed",
    "output",
];
const COMMON_METHOD_KEYS: &[&str] = &["kind", "scaling", "feedback"];
const LSTM_KEYS: &[&str] = &[
    "epochs",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "hidden_dim",
    "layers",
    "init",
    "init_scale",
    "reset_adam",
    "seed",
];
const AR_KEYS: &[&str] = &["p", "refit"];
const ARIMA_KEYS: &[&str] = &["p", "d", "q", "refit"];
const EKF_KEYS: &[&str] = &["q_level", "q_trend", "r", "p0", "level0", "trend0"];

struct Section<'a> {
    name: &'a str,
    entries: &'a [(String, String)],
}

impl<'a> Section<'a> {
    fn new(name: &'a str, entries: &'a [(String, String)]) -> Self {
        Self { name, entries }
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn check_keys(&self, allowed: &[&str], errs: &mut Vec<String>) {
        for (k, _) in self.entries {
            if !allowed.contains(&k.as_str()) {
                errs.push(format!(
                    "[{}] unknown key `{k}` (allowed: {})",
                    self.name,
                    allowed.join(", ")
                ));
            }
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, errs: &mut Vec<String>) -> Option<T> {
        let raw = self.get(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                errs.push(format!("[{}] `{key}` has invalid value `{raw}`", self.name));
                None
            }
        }
    }
}

fn resolve_method(
    label: &str,
    sec: &Section,
    preset: Option<Preset>,
    run_seed: Option<u64>,
    errs: &mut Vec<String>,
) -> Option<MethodSpec> {
    let kind = sec.get("kind").unwrap_or(label);
    let specific = match kind {
        "lstm" => LSTM_KEYS,
        "ar" => AR_KEYS,
        "arima" => ARIMA_KEYS,
        "ekf" => EKF_KEYS,
        "naive" | "oracle" => &[],
        other => {
            errs.push(format!(
                "[{}] unknown kind `{other}` (use kind = lstm|ekf|ar|arima|naive|oracle)",
                sec.name
            ));
            return None;
        }
    };
    let allowed: Vec<&str> = COMMON_METHOD_KEYS.iter().chain(specific).copied().collect();
    sec.check_keys(&allowed, errs);
    let before = errs.len();
    let scaling = sec.parse::<bool>("scaling", errs);
    let feedback = sec.parse::<Feedback>("feedback", errs);
    let refit = sec.parse::<bool>("refit", errs).unwrap_or(true);
    let required = |key: &str, fallback: Option<usize>, errs: &mut Vec<String>| {
        let v = sec.parse::<usize>(key, errs).or(fallback);
        if v.is_none() && sec.get(key).is_none() {
            errs.push(format!(
                "[{}] `{key}` missing and no preset supplies it",
                sec.name
            ));
        }
        v
    };
    let kind = match kind {
        "lstm" => {
            let defaults = TrainConfig::default();
            let adam = AdamConfig {
                learning_rate: sec
                    .parse("learning_rate", errs)
                    .unwrap_or(defaults.adam.learning_rate),
                beta1: sec.parse("beta1", errs).unwrap_or(defaults.adam.beta1),
                beta2: sec.parse("beta2", errs).unwrap_or(defaults.adam.beta2),
                epsilon: sec.parse("epsilon", errs).unwrap_or(defaults.adam.epsilon),
            };
            let dims = LstmDims {
                layers: sec.parse("layers", errs).unwrap_or(defaults.dims.layers),
                hidden_dim: sec
                    .parse("hidden_dim", errs)
                    .unwrap_or(defaults.dims.hidden_dim),
            };
            let init = match sec.get("init").unwrap_or("seeded") {
                "zero" => {
                    if sec.get("init_scale").is_some() {
                        errs.push(format!(
                            "[{}] `init_scale` only applies to init = seeded",
                            sec.name
                        ));
                    }
                    InitMode::Zero
                }
                "seeded" => InitMode::Seeded {
                    scale: sec.parse("init_scale", errs).unwrap_or(0.1),
                },
                other => {
                    errs.push(format!(
                        "[{}] `init` must be seeded or zero, got `{other}`",
                        sec.name
                    ));
                    InitMode::default()
                }
            };
            let seed = sec.parse::<u64>("seed", errs);
            if seed.is_none()
                && run_seed.is_none()
                && sec.get("seed").is_none()
                && init != InitMode::Zero
            {
                errs.push(format!(
                    "[{}] LSTM runs need a seed (--seed or `seed` in [run] or here)",
                    sec.name
                ));
            }
            let cfg = TrainConfig {
                epochs: sec.parse("epochs", errs).unwrap_or(defaults.epochs),
                adam,
                dims,
                init,
                seed: 0,
                reset_adam_each_iteration: sec.parse("reset_adam", errs).unwrap_or(false),
                feedback: defaults.feedback,
            };
            if let Err(e) = cfg.validate() {
                errs.push(format!("[{}] {e}", sec.name));
            }
            MethodKind::Lstm { cfg, seed }
        }
        "ar" => {
            let p = required("p", preset.map(|p| p.ar_p), errs);
            if p == Some(0) {
                errs.push(format!("[{}] AR order p must be >= 1", sec.name));
            }
            MethodKind::Ar {
                p: p.unwrap_or(1),
                refit,
            }
        }
        "arima" => {
            let fb = preset.map(|p| p.arima);
            let spec = ArimaSpec::new(
                required("p", fb.map(|o| o.0), errs).unwrap_or(0),
                required("d", fb.map(|o| o.1), errs).unwrap_or(0),
                required("q", fb.map(|o| o.2), errs).unwrap_or(0),
            );
            if let Err(e) = spec.validate() {
                errs.push(format!("[{}] {e}", sec.name));
            }
            MethodKind::Arima { spec, refit }
        }
        "ekf" => {
            let s = EkfSettings {
                q_level: sec.parse("q_level", errs),
                q_trend: sec.parse("q_trend", errs),
                r: sec.parse("r", errs),
                p0: sec.parse("p0", errs),
                level0: sec.parse("level0", errs),
                trend0: sec.parse("trend0", errs),
            };
            for (k, v) in [
                ("q_level", s.q_level),
                ("q_trend", s.q_trend),
                ("r", s.r),
                ("p0", s.p0),
            ] {
                if v.is_some_and(|v| v.is_nan() || v <= 0.0 || v.is_infinite()) {
                    errs.push(format!("[{}] `{k}` must be positive", sec.name));
                }
            }
            MethodKind::Ekf(s)
        }
        "naive" => MethodKind::Naive,
        _ => MethodKind::Oracle,
    };
    if kind == MethodKind::Oracle && scaling == Some(true) {
        errs.push(format!("[{}] the oracle runs unscaled only", sec.name));
    }
    (errs.len() == before).then(|| MethodSpec {
        label: label.to_string(),
        kind,
        scaling,
        feedback,
    })
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub series: Option<PathBuf>,
    pub column: ColumnSel,
    pub timestamp_column: Option<ColumnSel>,
    pub preset: Option<String>,
    pub t_train: usize,
    pub horizon: usize,
    pub feedback: Feedback,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub methods: Vec<MethodSpec>,
}

impl RunConfig {
    pub fn compare_settings(&self) -> CompareSettings {
        CompareSettings {
            t_train: self.t_train,
            horizon: self.horizon,
            feedback: self.feedback,
            seed: self.seed.unwrap_or(0),
        }
    }

    /// Every setting written out explicitly, defaults included. Resolving
    /// the result gives back `self`.
    pub fn to_raw(&self, include_output: bool) -> RawConfig {
        let mut raw = RawConfig::default();
        for (k, v) in self.run_pairs(include_output) {
            raw.set("run", &k, v);
        }
        for m in &self.methods {
            let section = format!("method.{}", m.label);
            for (k, v) in method_pairs(m) {
                raw.set(&section, &k, v);
            }
        }
        raw
    }

    fn run_pairs(&self, include_output: bool) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(s) = &self.series {
            out.push(("series".into(), s.display().to_string()));
        }
        out.push(("column".into(), self.column.to_string()));
        if let Some(t) = &self.timestamp_column {
            out.push(("timestamp_column".into(), t.to_string()));
        }
        if let Some(p) = &self.preset {
            out.push(("preset".into(), p.clone()));
        }
        out.push(("t_train".into(), self.t_train.to_string()));
        out.push(("horizon".into(), self.horizon.to_string()));
        out.push(("feedback".into(), self.feedback.to_string()));
        if let Some(s) = self.seed {
            out.push(("seed".into(), s.to_string()));
        }
        if include_output {
            if let Some(o) = &self.output {
                out.push(("output".into(), o.display().to_string()));
            }
        }
        out
    }

    /// Flat `section.key` map of the run settings plus one method, for
    /// embedding in that method's report. The output directory is left out
    /// so a replay into another directory reproduces the report.
    pub fn echo(&self, method: &MethodSpec) -> BTreeMap<String, String> {
        let mut map: BTreeMap<String, String> = self
            .run_pairs(false)
            .into_iter()
            .map(|(k, v)| (format!("run.{k}"), v))
            .collect();
        for (k, v) in method_pairs(method) {
            map.insert(format!("method.{}.{k}", method.label), v);
        }
        map
    }
}

fn method_pairs(m: &MethodSpec) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vec![("kind".into(), m.kind.kind_name().into())];
    let mut push = |k: &str, v: String| out.push((k.to_string(), v));
    if let Some(s) = m.scaling {
        push("scaling", s.to_string());
    }
    if let Some(f) = m.feedback {
        push("feedback", f.to_string());
    }
    match &m.kind {
        MethodKind::Lstm { cfg, seed } => {
            push("epochs", cfg.epochs.to_string());
            push("learning_rate", cfg.adam.learning_rate.to_string());
            push("beta1", cfg.adam.beta1.to_string());
            push("beta2", cfg.adam.beta2.to_string());
            push("epsilon", cfg.adam.epsilon.to_string());
            push("hidden_dim", cfg.dims.hidden_dim.to_string());
            push("layers", cfg.dims.layers.to_string());
            match cfg.init {
                InitMode::Zero => push("init", "zero".into()),
                InitMode::Seeded { scale } => {
                    push("init", "seeded".into());
                    push("init_scale", scale.to_string());
                }
            }
            push("reset_adam", cfg.reset_adam_each_iteration.to_string());
            if let Some(s) = seed {
                push("seed", s.to_string());
            }
        }
        MethodKind::Ekf(s) => {
            for (k, v) in [
                ("q_level", s.q_level),
                ("q_trend", s.q_trend),
                ("r", s.r),
                ("p0", s.p0),
                ("level0", s.level0),
                ("trend0", s.trend0),
            ] {
                if let Some(v) = v {
                    push(k, v.to_string());
                }
            }
        }
        MethodKind::Ar { p, refit } => {
            push("p", p.to_string());
            push("refit", refit.to_string());
        }
        MethodKind::Arima { spec, refit } => {
            push("p", spec.p.to_string());
            push("d", spec.d.to_string());
            push("q", spec.q.to_string());
            push("refit", refit.to_string());
        }
        MethodKind::Naive | MethodKind::Oracle => {}
    }
    out
}
