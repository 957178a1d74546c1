mod settings;

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use stlstm_core::data::{
    gen_synthetic, load_dataset, make_windows, parse_date, require_windows, write_synthetic, Dataset, DateRange, Manifest,
    MissingPolicy, SyntheticConfig,
};
use stlstm_core::lstm::InnerActivation;
use stlstm_core::metrics::{comparison_report, EvalReport};
use stlstm_core::model::{load_checkpoint, param_count, save_checkpoint, ModelKind, ModelSpec};
use stlstm_core::train::{evaluate, gradcheck, parse_kv_text, train_repeated, GradcheckOptions};
use stlstm_core::Error;

use settings::{banner, TrainSettings};

#[derive(Parser)]
#[command(name = "stlstm", version, about = "Stacked and spatio-temporal stacked LSTM forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic multi-location CSVs and a manifest.
    GenSynthetic(GenArgs),
    /// Train one model kind with repeats; writes checkpoints and a run log.
    Train(TrainArgs),
    /// Write `window_id,date,prediction` for every window in a range.
    Predict(PredictArgs),
    /// Print MAE and MSE over a range and write an evaluation report.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Closed-form parameter counts for a model spec.
    ParamCount(ParamCountArgs),
    /// Merge evaluation reports into a stacked vs st_stacked table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 5)]
    locations: usize,
    #[arg(long, default_value_t = 3)]
    vars: usize,
    #[arg(long, default_value_t = 800)]
    days: usize,
    #[arg(long, default_value_t = 0.6)]
    coupling: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Autoregressive coefficient.
    #[arg(long, default_value_t = 0.7)]
    ar: f64,
    /// Innovation standard deviation.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Observation noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    obs_noise: f64,
    #[arg(long, default_value = "2007-01-01")]
    start_date: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Missing-value policy: error or ffill.
    #[arg(long)]
    missing: Option<String>,
    /// stacked or st_stacked (alias st).
    #[arg(long, visible_alias = "model-kind")]
    kind: Option<String>,
    #[arg(long)]
    n1: Option<String>,
    #[arg(long)]
    n2: Option<String>,
    /// Inner activation: tanh or sigmoid.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    seq_len: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    /// Label for the test set in the summary report.
    #[arg(long)]
    testset: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    l2_lambda: Option<String>,
    /// sgd or adam.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    forget_bias_init: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    holdout: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("missing", &self.missing),
            ("kind", &self.kind),
            ("n1", &self.n1),
            ("n2", &self.n2),
            ("activation", &self.activation),
            ("seq_len", &self.seq_len),
            ("horizon", &self.horizon),
            ("testset", &self.testset),
            ("learning_rate", &self.learning_rate),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("l2_lambda", &self.l2_lambda),
            ("optimizer", &self.optimizer),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("epsilon", &self.epsilon),
            ("seed", &self.seed),
            ("repeats", &self.repeats),
            ("forget_bias_init", &self.forget_bias_init),
            ("holdout", &self.holdout),
        ]
    }
}

#[derive(Args)]
struct DataArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// `start,end` dates; defaults to the manifest's test range.
    #[arg(long)]
    range: Option<String>,
    #[arg(long, default_value = "error")]
    missing: String,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Report path; defaults to `<model>.eval.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Test-set label; defaults to the range.
    #[arg(long)]
    testset: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, visible_alias = "model-kind", default_value = "stacked")]
    kind: ModelKind,
    #[arg(long, default_value = "tanh")]
    activation: InnerActivation,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    locations: usize,
    #[arg(long, default_value_t = 3)]
    vars: usize,
    #[arg(long, default_value_t = 8)]
    n1: usize,
    #[arg(long, default_value_t = 4)]
    n2: usize,
    #[arg(long, default_value_t = 5)]
    seq_len: usize,
    #[arg(long, default_value_t = 0.01)]
    l2_lambda: f64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args)]
struct ParamCountArgs {
    #[arg(long, visible_alias = "model-kind", default_value = "stacked")]
    kind: ModelKind,
    #[arg(long)]
    locations: usize,
    #[arg(long)]
    vars: usize,
    #[arg(long)]
    n1: usize,
    #[arg(long)]
    n2: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Evaluation reports (JSON) from `evaluate` or `train`.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// Also write the table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Failure with its process exit code.
enum Failure {
    Input(String),
    Diverged(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => Failure::Diverged(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynthetic(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ParamCount(a) => cmd_param_count(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(4)
        }
    }
}

fn kv(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn thread_cap() -> Result<usize, Failure> {
    match std::env::var("STLSTM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Failure::Input(format!("STLSTM_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    banner(
        "gen-synthetic",
        &kv(&[
            ("locations", a.locations.to_string()),
            ("vars", a.vars.to_string()),
            ("days", a.days.to_string()),
            ("coupling", a.coupling.to_string()),
            ("seed", a.seed.to_string()),
            ("ar", a.ar.to_string()),
            ("noise", a.noise.to_string()),
            ("obs_noise", a.obs_noise.to_string()),
            ("start_date", a.start_date.clone()),
            ("out", a.out.display().to_string()),
        ]),
    );
    let mut config = SyntheticConfig::new(a.locations, a.vars, a.days, a.coupling, a.seed);
    config.ar = a.ar;
    config.noise = a.noise;
    config.obs_noise = a.obs_noise;
    config.start_date = parse_date(&a.start_date)?;
    let data = gen_synthetic(&config)?;
    let manifest = write_synthetic(&data, &a.out)?;
    println!(
        "wrote {} locations x {} days to {}",
        a.locations,
        a.days,
        manifest.display()
    );
    Ok(())
}

fn load(manifest: &Path, missing: MissingPolicy) -> Result<Dataset, Failure> {
    let m = Manifest::load(manifest)?;
    Ok(load_dataset(&m, missing)?)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut s = TrainSettings::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Input(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in parse_kv_text(&text)? {
            s.set(&k, &v)?;
        }
    }
    if let Some(p) = &a.manifest {
        s.manifest = Some(p.clone());
    }
    if let Some(p) = &a.out {
        s.out = Some(p.clone());
    }
    for (k, v) in a.overrides() {
        if let Some(v) = v {
            s.set(k, v)?;
        }
    }
    banner("train", &s.to_kv());
    let manifest = s
        .manifest
        .clone()
        .ok_or_else(|| Failure::Input("no manifest given (--manifest or `manifest` config key)".into()))?;
    let out = s
        .out
        .clone()
        .ok_or_else(|| Failure::Input("no output directory given (--out or `out` config key)".into()))?;
    s.train.validate()?;

    let ds = load(&manifest, s.missing)?;
    let spec = s.spec(ds.locations(), ds.vars());
    spec.validate()?;
    let train = make_windows(&ds, spec.seq_len, spec.horizon, ds.train_range())?;
    if train.is_empty() {
        return Err(Failure::Input(format!(
            "training range of {} days is too short for seq_len {} + horizon {}",
            ds.train_range().len(),
            spec.seq_len,
            spec.horizon
        )));
    }
    let test = match ds.test_indices() {
        Some(r) => make_windows(&ds, spec.seq_len, spec.horizon, r)?,
        None => Vec::new(),
    };
    if test.is_empty() {
        eprintln!("note: no test windows; the median repeat is chosen by final training loss");
    }

    let threads = thread_cap()?;
    let result = train_repeated(&spec, &s.train, &train, (!test.is_empty()).then_some(&test[..]), threads)?;

    fs::create_dir_all(&out).map_err(|e| Failure::Input(format!("cannot create {}: {e}", out.display())))?;
    let mut runs = Vec::new();
    for (r, run) in result.runs.iter().enumerate() {
        let name = format!("repeat-{r}.ckpt");
        save_checkpoint(&spec, &run.params, out.join(&name))?;
        let (test_mae, test_mse) = run.test.unzip();
        println!(
            "repeat {r} seed {}: first loss {:.6} final loss {:.6}{}",
            run.seed,
            run.first_loss().unwrap_or(f64::NAN),
            run.final_loss().unwrap_or(f64::NAN),
            run.test.map_or(String::new(), |(mae, mse)| format!(" test MAE {mae:.6} MSE {mse:.6}")),
        );
        runs.push(json!({
            "repeat": r,
            "seed": run.seed,
            "checkpoint": name,
            "loss_curve": run.loss_curve,
            "val_curve": run.val_curve,
            "test_mae": test_mae,
            "test_mse": test_mse,
        }));
    }

    let median_run = match result.median_run {
        Some(i) => i,
        None => {
            let finals: Vec<f64> = result.runs.iter().map(|r| r.final_loss().unwrap_or(f64::NAN)).collect();
            stlstm_core::metrics::median_lower_index(&finals).unwrap_or(0)
        }
    };
    write_file(&out.join("best-by-median"), &format!("repeat-{median_run}.ckpt\n"))?;

    let log = json!({
        "spec": spec,
        "config": s.train,
        "manifest": manifest.display().to_string(),
        "target": ds.target_name,
        "train_windows": train.len(),
        "test_windows": test.len(),
        "runs": runs,
        "median_mae": result.median_mae,
        "median_mse": result.median_mse,
        "median_run": median_run,
    });
    write_file(&out.join("run-log.json"), &serde_json::to_string_pretty(&log).expect("json"))?;

    if let (Some(mae), Some(mse)) = (result.median_mae, result.median_mse) {
        let testset = s
            .testset
            .clone()
            .or_else(|| ds.test_range.map(|r| r.to_string()))
            .unwrap_or_else(|| "test".into());
        let report = EvalReport::summary(testset, spec.kind, spec.horizon, &ds.target_name, spec.activation, mae, mse, test.len());
        write_file(&out.join("report.json"), &serde_json::to_string_pretty(&report).expect("json"))?;
        println!("median test MAE {mae:.6} MSE {mse:.6} (repeat {median_run})");
    }
    println!("wrote {} checkpoints to {}", result.runs.len(), out.display());
    Ok(())
}

/// Loads the checkpoint and dataset and builds the windows of the requested
/// range.
fn prepare(d: &DataArgs) -> Result<(ModelSpec, stlstm_core::model::ModelParams, Dataset, DateRange, Range<usize>), Failure> {
    let missing: MissingPolicy = d.missing.parse()?;
    let (spec, params) = load_checkpoint(&d.model)?;
    let ds = load(&d.manifest, missing)?;
    if ds.locations() != spec.locations || ds.vars() != spec.vars {
        return Err(Failure::Input(format!(
            "model expects {} locations x {} vars, data has {} x {}",
            spec.locations,
            spec.vars,
            ds.locations(),
            ds.vars()
        )));
    }
    let range = match &d.range {
        Some(r) => DateRange::parse(r)?,
        None => ds
            .test_range
            .ok_or_else(|| Failure::Input("no --range given and the manifest has no test range".into()))?,
    };
    let idx = ds.index_range(&range);
    Ok((spec, params, ds, range, idx))
}

fn data_banner(command: &str, d: &DataArgs, extra: &[(&str, String)]) {
    let mut pairs = vec![
        ("model", d.model.display().to_string()),
        ("manifest", d.manifest.display().to_string()),
        ("range", d.range.clone().unwrap_or_else(|| "<manifest test range>".into())),
        ("missing", d.missing.clone()),
    ];
    pairs.extend(extra.iter().cloned());
    banner(command, &kv(&pairs));
}

fn cmd_predict(a: PredictArgs) -> CmdResult {
    data_banner("predict", &a.data, &[("out", a.out.display().to_string())]);
    let (spec, params, ds, _, idx) = prepare(&a.data)?;
    let windows = require_windows(&ds, spec.seq_len, spec.horizon, idx)?;
    let pairs = evaluate(&spec, &params, &windows)?;
    let mut body = String::from("window_id,date,prediction\n");
    for (w, (pred, _)) in windows.iter().zip(&pairs) {
        body.push_str(&format!("{},{},{}\n", w.window_id, w.target_date.format("%Y-%m-%d"), pred));
    }
    write_file(&a.out, &body)?;
    println!("wrote {} predictions to {}", windows.len(), a.out.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let out = a.out.clone().unwrap_or_else(|| {
        let mut p = a.data.model.clone().into_os_string();
        p.push(".eval.json");
        PathBuf::from(p)
    });
    data_banner(
        "evaluate",
        &a.data,
        &[
            ("out", out.display().to_string()),
            ("testset", a.testset.clone().unwrap_or_else(|| "<range>".into())),
        ],
    );
    let (spec, params, ds, range, idx) = prepare(&a.data)?;
    let windows = require_windows(&ds, spec.seq_len, spec.horizon, idx)?;
    let pairs = evaluate(&spec, &params, &windows)?;
    let testset = a.testset.unwrap_or_else(|| range.to_string());
    let report = EvalReport::new(testset, spec.kind, spec.horizon, &ds.target_name, spec.activation, pairs)?;
    println!("MAE {}", report.mae);
    println!("MSE {}", report.mse);
    println!("windows {}", report.n_windows);
    write_file(&out, &serde_json::to_string_pretty(&report).expect("json"))?;
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let spec = ModelSpec {
        kind: a.kind,
        locations: a.locations,
        vars: a.vars,
        n1: a.n1,
        n2: a.n2,
        activation: a.activation,
        seq_len: a.seq_len,
        horizon: 1,
    };
    let opts = GradcheckOptions {
        lambda: a.l2_lambda,
        ..GradcheckOptions::default()
    };
    let mut pairs = vec![("spec", spec.to_kv_line())];
    pairs.extend([
        ("seed", a.seed.to_string()),
        ("l2_lambda", opts.lambda.to_string()),
        ("step", opts.step.to_string()),
        ("windows", opts.windows.to_string()),
        ("tolerance", a.tolerance.to_string()),
    ]);
    banner("gradcheck", &kv(&pairs));
    let report = gradcheck(&spec, a.seed, &opts)?;
    println!("parameters {}", report.n_params);
    println!("max_rel_err {:e}", report.max_rel_err);
    println!(
        "worst {} (analytic {:e}, numeric {:e})",
        report.worst_param, report.analytic, report.numeric
    );
    if report.max_rel_err < a.tolerance {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "max relative error {:e} at {} exceeds {:e}",
            report.max_rel_err, report.worst_param, a.tolerance
        )))
    }
}

/// `161120` -> `161,120`.
fn group_digits(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn cmd_param_count(a: ParamCountArgs) -> CmdResult {
    let spec = ModelSpec {
        kind: a.kind,
        locations: a.locations,
        vars: a.vars,
        n1: a.n1,
        n2: a.n2,
        activation: InnerActivation::Tanh,
        seq_len: 1,
        horizon: 1,
    };
    banner(
        "param-count",
        &kv(&[
            ("kind", a.kind.to_string()),
            ("locations", a.locations.to_string()),
            ("vars", a.vars.to_string()),
            ("n1", a.n1.to_string()),
            ("n2", a.n2.to_string()),
        ]),
    );
    let c = param_count(&spec)?;
    println!("layer1 {}", group_digits(c.layer1));
    println!("layer2 {}", group_digits(c.layer2));
    println!("head {}", group_digits(c.head));
    println!("total {}", group_digits(c.total));
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    let mut pairs: Vec<(&str, String)> = a.reports.iter().map(|p| ("report", p.display().to_string())).collect();
    if let Some(csv) = &a.csv {
        pairs.push(("csv", csv.display().to_string()));
    }
    banner("compare", &kv(&pairs));
    let mut reports = Vec::new();
    for path in &a.reports {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| Failure::Input(format!("{} is not an evaluation report: {e}", path.display())))?;
        reports.push(report);
    }
    let table = comparison_report(&reports)?;
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}\n{}", table.to_text(), table.to_csv());
    if let Some(csv) = &a.csv {
        write_file(csv, &table.to_csv())?;
    }
    Ok(())
}
