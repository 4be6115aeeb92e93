//! Command-line front end: a flat `key = value` configuration schema and the
//! subcommand dispatcher.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::bench::{self, BenchConfig};
use crate::data::{
    self, convert_csv, load_dataset, make_windows, save_dataset, split_dataset, synthesize, window_at, window_count,
    SplitRatios, Splits, Standardizer, SynthConfig, TrafficTensor,
};
use crate::error::{Error, Result, StageExt};
use crate::gradcheck;
use crate::mamba::SelectiveSource;
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelState};
use crate::tensor::Tensor;
use crate::train::{self, compute_metrics, evaluate, historical_index, LossKind, TrainConfig};

pub const OUT_DIR_ENV: &str = "STMAMBA_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    /// Integer with an inclusive lower bound.
    Int(i64),
    Float,
    Text,
    Choice(&'static [&'static str]),
    /// Comma-separated positive integers.
    IntList,
    /// Comma-separated floats.
    FloatList,
}

impl Kind {
    fn label(self) -> &'static str {
        match self {
            Kind::Int(_) => "INT",
            Kind::Float => "FLOAT",
            Kind::Text => "TEXT",
            Kind::Choice(_) => "CHOICE",
            Kind::IntList => "INTS",
            Kind::FloatList => "FLOATS",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(key: &'static str, kind: Kind, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        kind,
        default,
        help,
    }
}

pub const SCHEMA: &[KeySpec] = &[
    key("data_dir", Kind::Text, "data", "dataset directory (read by train/eval/predict, written by synth/convert)"),
    key("out_dir", Kind::Text, "out", "directory for checkpoints, histories, reports and forecasts"),
    key("checkpoint", Kind::Text, "", "checkpoint file; train defaults to <out_dir>/model.ckpt"),
    key("csv", Kind::Text, "", "CSV file read by convert"),
    key("interval_minutes", Kind::Int(1), "5", "sampling interval of converted or synthesized data"),
    key("start_unix_seconds", Kind::Int(i64::MIN), "1530489600", "timestamp of the first converted step"),
    key("feature_names", Kind::Text, "flow", "comma-separated feature names for convert"),
    key("synth_sensors", Kind::Int(1), "8", "sensors produced by synth"),
    key("synth_days", Kind::Int(2), "14", "days produced by synth"),
    key("synth_noise", Kind::Float, "0.02", "synth noise standard deviation relative to the daily amplitude"),
    key("split", Kind::FloatList, "0.6,0.2,0.2", "train,val,test ratios"),
    key("window_index", Kind::Int(0), "0", "test-split window forecast by predict"),
    key("h", Kind::Int(1), "12", "history length H"),
    key("z", Kind::Int(1), "12", "forecast horizon Z"),
    key("n_sensors", Kind::Int(0), "0", "sensor count N; 0 takes it from the dataset"),
    key("n_features", Kind::Int(0), "0", "feature count d; 0 takes it from the dataset"),
    key("d_f", Kind::Int(1), "24", "feature and periodicity embedding width"),
    key("d_a", Kind::Int(1), "80", "adaptive embedding width"),
    key("d_h", Kind::Int(0), "0", "hidden width; must equal 3*d_f + d_a when set, 0 derives it"),
    key("n_state", Kind::Int(1), "64", "state size per inner channel"),
    key("expand", Kind::Int(1), "2", "inner width factor, d_inner = expand * d_h"),
    key("d_conv", Kind::Int(1), "4", "causal convolution width"),
    key("n_layers", Kind::Int(1), "1", "stacked selective layers"),
    key("mlp_hidden", Kind::Int(0), "0", "block MLP width; 0 means 4 * d_h"),
    key("dropout_p", Kind::Float, "0.1", "dropout probability in the residual block"),
    key("selective_source", Kind::Choice(&["input", "output_feedback"]), "input", "source of the selective parameters"),
    key("ln_eps", Kind::Float, "1e-5", "LayerNorm epsilon"),
    key("lr", Kind::Float, "0.001", "initial Adam learning rate"),
    key("batch", Kind::Int(1), "16", "windows per optimizer step"),
    key("patience", Kind::Int(1), "30", "epochs without validation improvement before stopping"),
    key("max_epochs", Kind::Int(1), "200", "epoch limit"),
    key("max_steps", Kind::Int(0), "0", "optimizer step limit; 0 means none"),
    key("lr_decay", Kind::Float, "0.5", "learning-rate factor applied on a plateau"),
    key("lr_patience", Kind::Int(1), "10", "non-improving epochs per learning-rate decay"),
    key("seed", Kind::Int(0), "0", "seed for initialization, shuffling, dropout and synth"),
    key("loss", Kind::Choice(&["mae", "huber"]), "mae", "training loss on de-standardized outputs"),
    key("huber_delta", Kind::Float, "1.0", "Huber threshold in data units"),
    key("mape_threshold", Kind::Float, "1.0", "MAPE skips targets with |y| at or below this"),
    key("bench_batch", Kind::Int(1), "4", "sequences per benchmark call"),
    key("bench_d_h", Kind::Int(1), "32", "benchmark model width"),
    key("bench_expand", Kind::Int(1), "2", "benchmark inner width factor"),
    key("bench_n_state", Kind::Int(1), "16", "benchmark state size"),
    key("bench_d_conv", Kind::Int(0), "4", "benchmark convolution width"),
    key("bench_reps", Kind::Int(5), "5", "timed repetitions per sweep point"),
    key("bench_sweep", Kind::IntList, "512,1024,2048,4096", "sequence lengths T1 to time"),
    key("gradcheck_seeds", Kind::Int(1), "100", "random seeds for the per-operation checks"),
];

pub const SUBCOMMANDS: &[(&str, &str)] = &[
    ("convert", "convert a CSV export into a dataset directory"),
    ("synth", "write a synthetic dataset directory"),
    ("train", "train a model and write its checkpoint and history"),
    ("eval", "report test-split metrics of a checkpoint"),
    ("predict", "forecast one test window with a checkpoint"),
    ("bench", "time the scan against the attention reference"),
    ("gradcheck", "run the finite-difference gradient suite"),
];

fn check_value(spec: &KeySpec, raw: &str) -> Result<()> {
    let key = spec.key;
    match spec.kind {
        Kind::Int(min) => {
            let v: i64 = raw
                .parse()
                .map_err(|_| Error::config(key, format!("expected an integer, got `{raw}`")))?;
            if v < min {
                return Err(Error::config(key, format!("{v} is below the minimum {min}")));
            }
        }
        Kind::Float => {
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::config(key, format!("expected a number, got `{raw}`")))?;
            if !v.is_finite() {
                return Err(Error::config(key, format!("{v} is not finite")));
            }
        }
        Kind::Text => {}
        Kind::Choice(options) => {
            if !options.contains(&raw) {
                return Err(Error::config(key, format!("expected one of {options:?}, got `{raw}`")));
            }
        }
        Kind::IntList => {
            for part in raw.split(',') {
                let v: usize = part
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(key, format!("expected comma-separated integers, got `{raw}`")))?;
                if v == 0 {
                    return Err(Error::config(key, "entries must be positive"));
                }
            }
        }
        Kind::FloatList => {
            for part in raw.split(',') {
                part.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(key, format!("expected comma-separated numbers, got `{raw}`")))?;
            }
        }
    }
    Ok(())
}

/// Validated configuration values in schema order.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig {
            values: SCHEMA.iter().map(|s| s.default.to_string()).collect(),
        }
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let idx = SCHEMA
            .iter()
            .position(|s| s.key == key)
            .ok_or_else(|| Error::config(key, "unknown key"))?;
        let raw = raw.trim();
        check_value(&SCHEMA[idx], raw)?;
        self.values[idx] = raw.to_string();
        Ok(())
    }

    /// Defaults, then the output-directory environment override, then the
    /// file, then command-line overrides.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)], env_out_dir: Option<&str>) -> Result<Self> {
        let mut cfg = RunConfig::defaults();
        if let Some(dir) = env_out_dir.filter(|d| !d.is_empty()) {
            cfg.set("out_dir", dir)?;
        }
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        let idx = SCHEMA.iter().position(|s| s.key == key).expect("schema key");
        &self.values[idx]
    }

    fn int(&self, key: &str) -> i64 {
        self.get(key).parse().expect("validated integer")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    pub fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated number")
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// Cross-key constraints.
    pub fn validate(&self) -> Result<()> {
        let d_h = self.usize("d_h");
        let derived = 3 * self.usize("d_f") + self.usize("d_a");
        if d_h != 0 && d_h != derived {
            return Err(Error::config("d_h", format!("{d_h} != 3*d_f + d_a = {derived}")));
        }
        self.split_ratios()?;
        self.model_config_with(self.usize("n_sensors").max(1), self.usize("n_features").max(1), 288)?;
        self.train_config().validate()?;
        if !(self.float("synth_noise") >= 0.0) {
            return Err(Error::config("synth_noise", "must be nonnegative"));
        }
        data::steps_per_day(self.usize("interval_minutes") as u32)
            .map_err(|e| Error::config("interval_minutes", e.to_string()))?;
        Ok(())
    }

    pub fn split_ratios(&self) -> Result<SplitRatios> {
        let parts: Vec<f64> = self.get("split").split(',').map(|p| p.trim().parse().expect("validated")).collect();
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c).map_err(|e| Error::config("split", e.to_string())),
            _ => Err(Error::config("split", "expected three ratios")),
        }
    }

    fn model_config_with(&self, n_sensors: usize, n_features: usize, steps_per_day: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            h: self.usize("h"),
            z: self.usize("z"),
            n_sensors,
            n_features,
            d_f: self.usize("d_f"),
            d_a: self.usize("d_a"),
            n_state: self.usize("n_state"),
            expand: self.usize("expand"),
            d_conv: self.usize("d_conv"),
            n_layers: self.usize("n_layers"),
            mlp_hidden: self.usize("mlp_hidden"),
            dropout_p: self.float("dropout_p"),
            selective_source: self.get("selective_source").parse::<SelectiveSource>().map_err(|e| Error::config("selective_source", e))?,
            steps_per_day,
            ln_eps: self.float("ln_eps"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model configuration with sensor, feature and calendar sizes taken from
    /// `data` where the configuration leaves them at 0.
    pub fn model_config(&self, data: &TrafficTensor) -> Result<ModelConfig> {
        let pick = |key: &str, actual: usize| -> Result<usize> {
            match self.usize(key) {
                0 => Ok(actual),
                v if v == actual => Ok(v),
                v => Err(Error::config(key, format!("{v} does not match the dataset ({actual})"))),
            }
        };
        self.model_config_with(
            pick("n_sensors", data.sensors())?,
            pick("n_features", data.features())?,
            data.steps_per_day(),
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.float("lr"),
            batch: self.usize("batch"),
            patience: self.usize("patience"),
            max_epochs: self.usize("max_epochs"),
            max_steps: self.usize("max_steps"),
            lr_decay: self.float("lr_decay"),
            lr_patience: self.usize("lr_patience"),
            seed: self.int("seed") as u64,
            loss: self.get("loss").parse::<LossKind>().expect("validated choice"),
            huber_delta: self.float("huber_delta"),
            mape_threshold: self.float("mape_threshold"),
            freeze: false,
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            batch: self.usize("bench_batch"),
            d_h: self.usize("bench_d_h"),
            expand: self.usize("bench_expand"),
            n_state: self.usize("bench_n_state"),
            d_conv: self.usize("bench_d_conv"),
            reps: self.usize("bench_reps"),
            seed: self.int("seed") as u64,
        }
    }

    pub fn bench_sweep(&self) -> Vec<usize> {
        self.get("bench_sweep").split(',').map(|p| p.trim().parse().expect("validated")).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    /// The effective configuration as `key = value` lines.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (s, v) in SCHEMA.iter().zip(&self.values) {
            let _ = writeln!(out, "{} = {}", s.key, v);
        }
        out
    }
}

pub fn command() -> Command {
    let mut root = Command::new("stmamba")
        .about("Selective state-space traffic forecaster")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat key = value configuration file"),
        );
        for s in SCHEMA {
            sub = sub.arg(
                Arg::new(s.key)
                    .long(s.key)
                    .value_name(s.kind.label())
                    .allow_hyphen_values(true)
                    .help(format!("{} [default: {}]", s.help, if s.default.is_empty() { "\"\"" } else { s.default })),
            );
        }
        root = root.subcommand(sub);
    }
    root
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    SCHEMA
        .iter()
        .filter_map(|s| m.get_one::<String>(s.key).map(|v| (s.key.to_string(), v.clone())))
        .collect()
}

/// Exit status for an error: 1 configuration or validation, 2 numeric, 3 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Numeric(_) | Error::Stability(_) => 2,
        Error::Io { .. } | Error::Load { .. } => 3,
        _ => 1,
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let env = std::env::var(OUT_DIR_ENV).ok();
    let file = sub.get_one::<String>("config").map(PathBuf::from);
    let result = RunConfig::load(file.as_deref(), &overrides(sub), env.as_deref()).and_then(|cfg| {
        println!("# effective configuration\n{}", cfg.echo());
        dispatch(name, &cfg)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(name: &str, cfg: &RunConfig) -> Result<()> {
    match name {
        "convert" => cmd_convert(cfg),
        "synth" => cmd_synth(cfg),
        "train" => cmd_train(cfg),
        "eval" => cmd_eval(cfg),
        "predict" => cmd_predict(cfg),
        "bench" => cmd_bench(cfg),
        "gradcheck" => cmd_gradcheck(cfg),
        other => Err(Error::config("subcommand", format!("unknown subcommand `{other}`"))),
    }
}

fn require(cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    cfg.path(key).ok_or_else(|| Error::config(key, "required by this subcommand"))
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn cmd_convert(cfg: &RunConfig) -> Result<()> {
    let csv = require(cfg, "csv")?;
    let names: Vec<String> = cfg.get("feature_names").split(',').map(|s| s.trim().to_string()).collect();
    let n = cfg.usize("n_sensors");
    if n == 0 {
        return Err(Error::config("n_sensors", "convert needs the sensor count"));
    }
    let d = match cfg.usize("n_features") {
        0 => names.len(),
        d => d,
    };
    if names.len() != d {
        return Err(Error::config("feature_names", format!("{} names for {d} features", names.len())));
    }
    let data = convert_csv(
        &csv,
        n,
        d,
        cfg.usize("interval_minutes") as u32,
        cfg.int("start_unix_seconds"),
        names,
    )?;
    let dir = require(cfg, "data_dir")?;
    save_dataset(&dir, &data, None)?;
    println!("wrote {} ({} steps, {} sensors, {} features)", dir.display(), data.steps(), data.sensors(), data.features());
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let data = synthesize(&SynthConfig {
        sensors: cfg.usize("synth_sensors"),
        days: cfg.usize("synth_days"),
        seed: cfg.int("seed") as u64,
        noise: cfg.float("synth_noise"),
        interval_minutes: cfg.usize("interval_minutes") as u32,
    })?;
    let dir = require(cfg, "data_dir")?;
    save_dataset(&dir, &data, None)?;
    println!("wrote {} ({} steps, {} sensors)", dir.display(), data.steps(), data.sensors());
    Ok(())
}

/// Loads the dataset and splits it with room for at least one window per segment.
fn load_splits(cfg: &RunConfig) -> Result<(TrafficTensor, Splits)> {
    let data = load_dataset(require(cfg, "data_dir")?).stage("load")?;
    let min_len = cfg.usize("h") + cfg.usize("z");
    let splits = split_dataset(&data, cfg.split_ratios()?, min_len).stage("split")?;
    Ok((data, splits))
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.path("checkpoint").unwrap_or_else(|| cfg.out_dir().join("model.ckpt"))
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (data, splits) = load_splits(cfg)?;
    let stats = Standardizer::fit(&splits.train).stage("standardize")?;
    let model_cfg = cfg.model_config(&data)?;
    let (h, z) = (model_cfg.h, model_cfg.z);
    let train_w = make_windows(&splits.train, h, z)?;
    let val_w = make_windows(&splits.val, h, z)?;
    let test_w = make_windows(&splits.test, h, z)?;
    let tc = cfg.train_config();
    let mut model = ModelState::<f32>::new(model_cfg, tc.seed)?;
    println!("parameters: {}", model.store.count());
    let outcome = train::train_loop(&mut model, &train_w, &val_w, &stats, &tc).stage("train")?;
    let ckpt = checkpoint_path(cfg);
    save_checkpoint(&ckpt, &model, Some(&stats))?;
    let out = cfg.out_dir();
    train::write_history(out.join("history.tsv"), &outcome.history)?;
    let report = evaluate(&model, &test_w, &stats, tc.mape_threshold).stage("test")?;
    write(&out.join("test_metrics.tsv"), &report.to_tsv())?;
    println!(
        "epochs {} steps {} stop {:?}; best epoch {} val MAE {:.4}",
        outcome.history.len(),
        outcome.steps,
        outcome.stop,
        outcome.best_epoch,
        outcome.best_val_mae
    );
    println!("test MAE {:.4} RMSE {:.4} MAPE {}", report.mae, report.rmse, fmt_mape(report.mape));
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

fn fmt_mape(m: Option<f64>) -> String {
    m.map_or_else(|| "undefined (all targets masked)".into(), |v| format!("{v:.3}%"))
}

/// Checkpoint plus the standardizer stored with it.
fn load_model(cfg: &RunConfig) -> Result<(ModelState<f32>, Standardizer)> {
    let path = require(cfg, "checkpoint")?;
    let ckpt = load_checkpoint(&path)?;
    let stats = ckpt
        .stats
        .ok_or_else(|| Error::config("checkpoint", "checkpoint carries no standardizer"))?;
    Ok((ckpt.model, stats))
}

fn check_compatible(model: &ModelState<f32>, data: &TrafficTensor) -> Result<()> {
    let c = &model.config;
    if c.n_sensors != data.sensors() || c.n_features != data.features() || c.steps_per_day != data.steps_per_day() {
        return Err(Error::config(
            "data_dir",
            format!(
                "dataset has N={}, d={}, {} steps/day; checkpoint expects N={}, d={}, {}",
                data.sensors(),
                data.features(),
                data.steps_per_day(),
                c.n_sensors,
                c.n_features,
                c.steps_per_day
            ),
        ));
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let (model, stats) = load_model(cfg)?;
    let (data, splits) = load_splits(cfg)?;
    check_compatible(&model, &data)?;
    let test_w = make_windows(&splits.test, model.config.h, model.config.z)?;
    let threshold = cfg.float("mape_threshold");
    let report = evaluate(&model, &test_w, &stats, threshold).stage("eval")?;
    let baseline = historical_index(&test_w, threshold)?;
    print!("{}", report.to_tsv());
    println!(
        "windows {}; persistence baseline MAE {:.4} RMSE {:.4}",
        test_w.len(),
        baseline.mae,
        baseline.rmse
    );
    let out = cfg.out_dir();
    write(&out.join("eval_metrics.tsv"), &report.to_tsv())?;
    write(&out.join("baseline_metrics.tsv"), &baseline.to_tsv())
}

fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let (model, stats) = load_model(cfg)?;
    let (data, splits) = load_splits(cfg)?;
    check_compatible(&model, &data)?;
    let (h, z) = (model.config.h, model.config.z);
    let index = cfg.usize("window_index");
    let count = window_count(splits.test.steps(), h, z)?;
    if index >= count {
        return Err(Error::config("window_index", format!("{index} is past the last test window ({})", count - 1)));
    }
    let w = window_at(&splits.test, index, h, z)?;
    let forecast = train::predict_window(&model, &w, &stats).stage("predict")?;
    let interval = splits.test.interval_minutes;
    let start = splits.test.start_unix_seconds + ((w.end + 1) as i64) * 60 * interval as i64;
    let out = TrafficTensor::new(
        Tensor::new(forecast.shape(), forecast.data().to_vec())?,
        interval,
        start,
        data.feature_names.clone(),
    )?;
    let dir = cfg.out_dir().join("forecast");
    save_dataset(&dir, &out, None)?;
    let report = compute_metrics(&forecast, &w.target, cfg.float("mape_threshold"))?;
    write(&dir.join("metrics.tsv"), &report.to_tsv())?;
    println!("forecast for test window {index} -> {}", dir.display());
    print!("{}", report.to_tsv());
    Ok(())
}

fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let bc = cfg.bench_config();
    let sweep = cfg.bench_sweep();
    println!("{}", bench::machine_descriptor());
    let results = vec![
        bench::bench_scan_scaling(&bc, &sweep)?,
        bench::bench_layer_scaling(&bc, &sweep)?,
        bench::bench_attention_scaling(&bc, &sweep)?,
    ];
    for r in &results {
        let ratios: Vec<String> = r.ratios().iter().map(|x| format!("{x:.2}")).collect();
        println!("{:<15} slope {:.2}  ratios per step [{}]", r.kernel, r.slope, ratios.join(", "));
        if let Some(a) = &r.advisory {
            println!("  advisory: {a}");
        }
    }
    let dir = cfg.out_dir().join("bench");
    bench::write_bench_report(&dir, &bc, &results)?;
    println!("results in {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let report = gradcheck::run_suite(cfg.usize("gradcheck_seeds") as u64, cfg.int("seed") as u64)?;
    print!("{}", report.to_tsv());
    println!("{} checks in {:.2}s", report.checks.len(), report.seconds);
    if report.passed() {
        Ok(())
    } else {
        let worst = report.worst().expect("non-empty");
        Err(Error::Numeric(format!("gradient check `{}` failed with error {:.3e}", worst.name, worst.max_error)))
    }
}
