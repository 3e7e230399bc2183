//! `soundex`: cohort generation, BinMask selection, iterative removal,
//! retraining, reports, the attribution impossibility demo and graph
//! explanations from one binary.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O error.
//! Machine-readable results go to stdout, progress and prose to stderr.

mod manifest;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use manifest::ManifestBuilder;
use soundex::attribution::{
    check_additivity, check_baseline_invariance, check_completeness, check_specificity, theorem1_demo, AffineFn,
    AxiomReport, DEFAULT_STEPS,
};
use soundex::compgraph::{explain, read_graph, replay, write_graph, Cut, GraphError};
use soundex::matrix::{load_matrix, save_matrix, DenseMatrix, MatrixError};
use soundex::metrics::{univariate_model_auc, AucReport};
use soundex::neural::{
    read_model, to_compgraph, train, write_model, Gating, MlpConfig, MlpModel, NeuralError, TrainConfig,
};
use soundex::pipeline::{
    full_experiment, iterative_removal, prepare_data, retrain_final, run_binmask_stage, summary_text, write_report,
    ColumnSubset, ExperimentConfig, PipelineError, Seeds, StopBaseline,
};
use soundex::seed::derive;
use soundex::synthehr::{write_cohort, EhrError};

#[derive(Parser, Debug)]
#[command(
    name = "soundex",
    version,
    about = "Sound explanations and L0 feature selection on synthetic EHR cohorts"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Master seed; required by commands that generate data or train.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
    /// Record wall-clock time in the manifest (breaks byte-identical reruns).
    #[arg(long)]
    record_time: bool,
    #[arg(long)]
    n_positive: Option<usize>,
    #[arg(long)]
    n_negative: Option<usize>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_mask: Option<f64>,
    #[arg(long)]
    lambda_mask: Option<f64>,
    #[arg(long)]
    lambda_weight: Option<f64>,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    stop_delta: Option<f64>,
    #[arg(long, value_parser = parse_stop_baseline)]
    stop_baseline: Option<StopBaseline>,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

fn parse_stop_baseline(s: &str) -> Result<StopBaseline, String> {
    match s {
        "stage" => Ok(StopBaseline::Stage),
        "iteration" => Ok(StopBaseline::Iteration),
        other => Err(format!("expected stage or iteration, got {other}")),
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a cohort and its train/test feature matrices.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network on a feature matrix.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out matrix for a test AUC.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Learn the input mask as well.
        #[arg(long)]
        mask: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// BinMask stage: train with the input mask and select features.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterative removal on a trained model.
    Reduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Feature list from `select`; all columns when omitted.
        #[arg(long)]
        selected: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a fresh network on the selected columns only.
    Retrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        selected: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full run: cohort, all stages, evaluation and report files.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Univariate model AUC ranking on a test matrix.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Columns feeding the model, when it was trained on a subset.
        #[arg(long)]
        selected: Option<PathBuf>,
        /// Also write ranking.svg.
        #[arg(long)]
        svg: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The attribution impossibility instance plus axiom sweeps on a random network.
    Axioms {
        #[command(flatten)]
        common: Common,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 20)]
        probes: usize,
    },
    /// Evaluate, explain and replay a serialized graph, or export a model as one.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Build the graph from a trained model instead.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        selected: Option<PathBuf>,
        /// Comma-separated input values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        input: Option<Vec<f64>>,
        /// Write the graph (with its cut) here.
        #[arg(long)]
        write_graph: Option<PathBuf>,
    },
}

/// Marks errors that should exit with the I/O code.
#[derive(Debug)]
struct IoFailure(anyhow::Error);

impl std::fmt::Display for IoFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for IoFailure {}

fn is_io(e: &(dyn std::error::Error + 'static)) -> bool {
    if e.is::<std::io::Error>() || e.is::<IoFailure>() {
        return true;
    }
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        return match p {
            PipelineError::Io(_) => true,
            PipelineError::Neural(n) => is_io(n),
            PipelineError::Ehr(x) => is_io(x),
            _ => false,
        };
    }
    if let Some(n) = e.downcast_ref::<NeuralError>() {
        return match n {
            NeuralError::Io(_) => true,
            NeuralError::Graph(g) => is_io(g),
            _ => false,
        };
    }
    if let Some(x) = e.downcast_ref::<EhrError>() {
        return match x {
            EhrError::Io(_) => true,
            EhrError::Matrix(m) => is_io(m),
            _ => false,
        };
    }
    matches!(e.downcast_ref::<MatrixError>(), Some(MatrixError::Io(_)))
        || matches!(e.downcast_ref::<GraphError>(), Some(GraphError::Io(_)))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(is_io) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn io<T, E: Into<anyhow::Error>>(r: std::result::Result<T, E>, what: impl FnOnce() -> String) -> Result<T> {
    r.map_err(|e| anyhow::Error::new(IoFailure(e.into().context(what()))))
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = io(std::fs::read_to_string(p), || format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::desk(),
    };
    let c = common;
    if let Some(v) = c.n_positive {
        cfg.cohort.n_positive = v;
    }
    if let Some(v) = c.n_negative {
        cfg.cohort.n_negative = v;
    }
    if let Some(v) = c.sparsity {
        cfg.cohort.target_sparsity = v;
    }
    if let Some(v) = c.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = c.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = c.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = c.lr_mask {
        cfg.train.lr_mask = v;
    }
    if let Some(v) = c.lambda_mask {
        cfg.train.lambda_mask = v;
    }
    if let Some(v) = c.lambda_weight {
        cfg.train.lambda_weight = v;
    }
    if let Some(v) = &c.hidden {
        cfg.hidden = v.clone();
    }
    if let Some(v) = c.stop_delta {
        cfg.stop_delta = v;
    }
    if let Some(v) = c.stop_baseline {
        cfg.stop_baseline = v;
    }
    if let Some(v) = c.n_boot {
        cfg.n_boot = v;
    }
    if let Some(v) = c.test_fraction {
        cfg.split.test_fraction = v;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_seed(common: &Common, cmd: &str) -> Result<u64> {
    common
        .seed
        .ok_or_else(|| anyhow!("{cmd} needs --seed; generation and training runs must be reproducible"))
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("missing required flag --{flag}"))
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(anyhow::Error::new(IoFailure(e.into()))),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    emit(&text)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<String> {
    let p = dir.join(name);
    io(std::fs::write(&p, text), || format!("writing {}", p.display()))?;
    Ok(name.to_string())
}

fn make_dir(dir: &Path) -> Result<()> {
    io(std::fs::create_dir_all(dir), || format!("creating {}", dir.display()))
}

struct Dataset {
    x: DenseMatrix,
    labels: Vec<bool>,
    names: Vec<String>,
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(anyhow::Error::new(IoFailure(anyhow!(
            "{} does not exist",
            path.display()
        ))));
    }
    let (m, names, labels) = load_matrix(path).with_context(|| format!("loading {}", path.display()))?;
    let labels = labels.ok_or_else(|| anyhow!("{} has no label file", path.display()))?;
    Ok(Dataset {
        x: m.to_dense(),
        labels,
        names,
    })
}

/// Reads a `column,feature` list and checks it against the matrix columns.
fn read_selection(path: &Path, names: &[String]) -> Result<BTreeSet<usize>> {
    let text = io(std::fs::read_to_string(path), || format!("reading {}", path.display()))?;
    let mut set = BTreeSet::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (col, name) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("{}:{}: expected column,feature", path.display(), n + 1))?;
        let col: usize = col
            .parse()
            .with_context(|| format!("{}:{}: bad column index", path.display(), n + 1))?;
        match names.get(col) {
            Some(expected) if expected == name => {
                set.insert(col);
            }
            Some(expected) => bail!("{}:{}: column {col} is {expected}, not {name}", path.display(), n + 1),
            None => bail!("{}:{}: column {col} is out of range", path.display(), n + 1),
        }
    }
    if set.is_empty() {
        bail!("{} selects no features", path.display());
    }
    Ok(set)
}

fn selection_csv(set: &BTreeSet<usize>, names: &[String]) -> String {
    let mut s = String::from("column,feature\n");
    for &j in set {
        s.push_str(&format!("{j},{}\n", names[j]));
    }
    s
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed: derive(seed, "train"),
        // Matrix files carry fixed cutoffs; resampling needs the cohort.
        resample_cutoffs: false,
        ..cfg.train.clone()
    }
}

fn mlp_config(cfg: &ExperimentConfig, n_inputs: usize, seed: u64) -> MlpConfig {
    MlpConfig {
        n_inputs,
        hidden: cfg.hidden.clone(),
        seed: derive(seed, "init"),
    }
}

fn test_report(
    path: Option<&Path>,
    model: &MlpModel,
    columns: &[usize],
    names: &[String],
    cfg: &ExperimentConfig,
    seed: u64,
    manifest: &mut ManifestBuilder,
) -> Result<Option<AucReport>> {
    let Some(path) = path else { return Ok(None) };
    let test = load_dataset(path)?;
    if test.names != names {
        bail!("{} has different columns from the training matrix", path.display());
    }
    manifest.input(path);
    let scores = model.forward(&test.x.select_columns(columns), Gating::Hard)?;
    Ok(Some(AucReport::compute(
        &scores,
        &test.labels,
        cfg.n_boot,
        cfg.ci_level,
        derive(seed, "bootstrap"),
    )?))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { common, out } => cmd_gen(&common, out.as_deref()),
        Command::Train {
            common,
            data,
            test,
            mask,
            out,
        } => cmd_train(&common, &data, test.as_deref(), mask, &out),
        Command::Select {
            common,
            data,
            test,
            out,
        } => cmd_select(&common, &data, test.as_deref(), &out),
        Command::Reduce {
            common,
            data,
            model,
            selected,
            out,
        } => cmd_reduce(&common, &data, &model, selected.as_deref(), &out),
        Command::Retrain {
            common,
            data,
            selected,
            test,
            out,
        } => cmd_retrain(&common, &data, &selected, test.as_deref(), &out),
        Command::Experiment { common, out } => cmd_experiment(&common, &out),
        Command::Report {
            common,
            data,
            model,
            selected,
            svg,
            out,
        } => cmd_report(&common, &data, &model, selected.as_deref(), svg, &out),
        Command::Axioms { common, json, probes } => cmd_axioms(&common, json, probes),
        Command::Explain {
            common,
            graph,
            model,
            selected,
            input,
            write_graph,
        } => cmd_explain(
            &common,
            graph.as_deref(),
            model.as_deref(),
            selected.as_deref(),
            input,
            write_graph.as_deref(),
        ),
    }
}

fn cmd_gen(common: &Common, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    if common.print_config {
        return print_json(&cfg.cohort);
    }
    let seed = require_seed(common, "gen")?;
    let out = out.ok_or_else(|| anyhow!("missing required flag --out"))?;
    make_dir(out)?;
    let seeds = Seeds::new(seed);
    let data = prepare_data(&cfg, &seeds)?;
    let names = data.space.names();
    let mut files = Vec::new();
    write_cohort(&out.join("cohort.jsonl"), &data.generated).context("writing cohort")?;
    files.extend(["cohort.jsonl".to_string(), "cohort.jsonl.meta.json".to_string()]);
    for (name, m, labels) in [
        ("train", &data.x_train, &data.train_cohort.labels),
        ("test", &data.x_test, &data.test_cohort.labels),
    ] {
        let file = format!("{name}.triplets");
        save_matrix(&out.join(&file), m, &names, Some(labels)).with_context(|| format!("writing {file}"))?;
        files.extend([file.clone(), format!("{file}.cols"), format!("{file}.labels")]);
    }
    let mut manifest = ManifestBuilder::new("gen", serde_json::to_value(&cfg)?, common.record_time);
    manifest
        .seed("master", seed)
        .seed("cohort", seeds.cohort)
        .seed("split", seeds.split)
        .seed("cutoffs_train", seeds.train_cutoffs)
        .seed("cutoffs_test", seeds.test_cutoffs);
    manifest.write(out, &files)?;
    let rows = data.x_train.rows() + data.x_test.rows();
    let nnz = data.x_train.nnz() + data.x_test.nnz();
    eprintln!(
        "generated {} patients, kept {}, {} feature columns",
        data.generated.len(),
        data.cohort.len(),
        names.len()
    );
    print_json(&json!({
        "patients_generated": data.generated.len(),
        "patients_kept": data.cohort.len(),
        "train_rows": data.x_train.rows(),
        "test_rows": data.x_test.rows(),
        "features": names.len(),
        "zero_fraction": 1.0 - nnz as f64 / (rows * names.len()) as f64,
        "rate_scale": data.cohort.rate_scale,
    }))
}

fn cmd_train(
    common: &Common,
    data: &Option<PathBuf>,
    test: Option<&Path>,
    mask: bool,
    out: &Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    if common.print_config {
        return print_json(&cfg.train);
    }
    let seed = require_seed(common, "train")?;
    let (data, out) = (require(data, "data")?, require(out, "out")?);
    let ds = load_dataset(data)?;
    make_dir(out)?;
    let tcfg = TrainConfig {
        train_mask: mask,
        ..train_config(&cfg, seed)
    };
    let mut model = MlpModel::new(mlp_config(&cfg, ds.x.cols(), seed))?;
    let history = train(&mut model, &ds.x, &ds.labels, &tcfg, None)?;
    write_model(&out.join("model.json"), &model).context("writing model")?;
    let mut manifest = ManifestBuilder::new("train", serde_json::to_value(&tcfg)?, common.record_time);
    manifest
        .seed("master", seed)
        .seed("init", derive(seed, "init"))
        .seed("train", tcfg.seed);
    manifest.input(data);
    let all: Vec<usize> = (0..ds.x.cols()).collect();
    let test_auc = test_report(test, &model, &all, &ds.names, &cfg, seed, &mut manifest)?;
    manifest.write(out, &["model.json".into()])?;
    let train_auc = history.epochs.last().map(|e| e.train_auc);
    eprintln!("trained {} epochs, {} steps", history.epochs.len(), history.steps);
    print_json(&json!({ "train_auc": train_auc, "test": test_auc, "history": history }))
}

fn cmd_select(common: &Common, data: &Option<PathBuf>, test: Option<&Path>, out: &Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common)?;
    if common.print_config {
        return print_json(&cfg.train);
    }
    let seed = require_seed(common, "select")?;
    let (data, out) = (require(data, "data")?, require(out, "out")?);
    let ds = load_dataset(data)?;
    make_dir(out)?;
    let tcfg = train_config(&cfg, seed);
    let stage = run_binmask_stage(&ds.x, &ds.labels, &mlp_config(&cfg, ds.x.cols(), seed), &tcfg, None)?;
    write_model(&out.join("model_binmask.json"), &stage.model).context("writing model")?;
    let mut files = vec!["model_binmask.json".to_string()];
    files.push(write_text(
        out,
        "selected.csv",
        &selection_csv(&stage.selected, &ds.names),
    )?);
    let mut manifest = ManifestBuilder::new("select", serde_json::to_value(&tcfg)?, common.record_time);
    manifest
        .seed("master", seed)
        .seed("init", derive(seed, "init"))
        .seed("train", tcfg.seed);
    manifest.input(data);
    // The stage model is evaluated with unselected columns zeroed.
    let test_auc = match test {
        Some(p) => {
            let t = load_dataset(p)?;
            manifest.input(p);
            let keep: Vec<bool> = (0..t.x.cols()).map(|j| stage.selected.contains(&j)).collect();
            let scores = stage.model.forward(&t.x.zero_columns_except(&keep), Gating::Hard)?;
            Some(AucReport::compute(
                &scores,
                &t.labels,
                cfg.n_boot,
                cfg.ci_level,
                derive(seed, "bootstrap"),
            )?)
        }
        None => None,
    };
    manifest.write(out, &files)?;
    eprintln!("selected {} of {} features", stage.selected.len(), ds.x.cols());
    let selected: Vec<&String> = stage.selected.iter().map(|&j| &ds.names[j]).collect();
    print_json(&json!({
        "n_selected": stage.selected.len(),
        "selected": selected,
        "train_auc": stage.train_auc,
        "test": test_auc,
    }))
}

fn cmd_reduce(
    common: &Common,
    data: &Option<PathBuf>,
    model: &Option<PathBuf>,
    selected: Option<&Path>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    if common.print_config {
        return print_json(&json!({ "stop_delta": cfg.stop_delta, "stop_baseline": cfg.stop_baseline }));
    }
    let (data, model_path, out) = (require(data, "data")?, require(model, "model")?, require(out, "out")?);
    let ds = load_dataset(data)?;
    let model = read_model(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    if model.n_inputs() != ds.x.cols() {
        bail!(
            "model has {} inputs but the matrix has {} columns",
            model.n_inputs(),
            ds.x.cols()
        );
    }
    let start = match selected {
        Some(p) => read_selection(p, &ds.names)?,
        None => (0..ds.x.cols()).collect(),
    };
    make_dir(out)?;
    let (kept, trace) = iterative_removal(&model, &ds.x, &ds.labels, &start, cfg.stop_delta, cfg.stop_baseline)?;
    let mut files = vec![write_text(out, "reduced.csv", &selection_csv(&kept, &ds.names))?];
    let mut t = String::from("step,feature,train_auc,accepted\n");
    let accepted = trace.accepted().len();
    for (k, s) in trace.steps.iter().enumerate() {
        t.push_str(&format!(
            "{},{},{},{}\n",
            k + 1,
            ds.names[s.feature],
            s.auc,
            k < accepted
        ));
    }
    files.push(write_text(out, "removal_trace.csv", &t)?);
    let mut manifest = ManifestBuilder::new(
        "reduce",
        json!({ "stop_delta": cfg.stop_delta, "stop_baseline": cfg.stop_baseline }),
        common.record_time,
    );
    manifest.input(data).input(model_path);
    if let Some(p) = selected {
        manifest.input(p);
    }
    manifest.write(out, &files)?;
    eprintln!("kept {} of {} features", kept.len(), start.len());
    print_json(&json!({
        "baseline_auc": trace.baseline_auc,
        "final_auc": trace.final_auc(),
        "n_kept": kept.len(),
        "crossed": trace.crossed,
        "steps": trace.steps.len(),
    }))
}

fn cmd_retrain(
    common: &Common,
    data: &Option<PathBuf>,
    selected: &Option<PathBuf>,
    test: Option<&Path>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    if common.print_config {
        return print_json(&cfg.train);
    }
    let seed = require_seed(common, "retrain")?;
    let (data, sel_path, out) = (
        require(data, "data")?,
        require(selected, "selected")?,
        require(out, "out")?,
    );
    let ds = load_dataset(data)?;
    let set = read_selection(sel_path, &ds.names)?;
    make_dir(out)?;
    let cols: Vec<usize> = set.iter().copied().collect();
    let tcfg = train_config(&cfg, seed);
    let stage = retrain_final(
        &ds.x,
        &ds.labels,
        &set,
        &mlp_config(&cfg, cols.len(), seed),
        &tcfg,
        None,
    )?;
    write_model(&out.join("model_final.json"), &stage.model).context("writing model")?;
    let files = vec![
        "model_final.json".to_string(),
        write_text(out, "columns.csv", &selection_csv(&set, &ds.names))?,
    ];
    let mut manifest = ManifestBuilder::new("retrain", serde_json::to_value(&tcfg)?, common.record_time);
    manifest
        .seed("master", seed)
        .seed("init", derive(seed, "init"))
        .seed("train", tcfg.seed);
    manifest.input(data).input(sel_path);
    let test_auc = test_report(test, &stage.model, &cols, &ds.names, &cfg, seed, &mut manifest)?;
    manifest.write(out, &files)?;
    print_json(&json!({ "n_features": cols.len(), "train_auc": stage.train_auc, "test": test_auc }))
}

fn cmd_experiment(common: &Common, out: &Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common)?;
    if common.print_config {
        return print_json(&cfg);
    }
    let seed = require_seed(common, "experiment")?;
    let out = require(out, "out")?;
    make_dir(out)?;
    eprintln!(
        "running experiment: {} positives, {} negatives, seed {seed}",
        cfg.cohort.n_positive, cfg.cohort.n_negative
    );
    let report = full_experiment(&cfg)?;
    let files = write_report(&report, out).with_context(|| format!("writing report to {}", out.display()))?;
    let mut manifest = ManifestBuilder::new("experiment", serde_json::to_value(&cfg)?, common.record_time);
    let s = &report.seeds;
    manifest
        .seed("master", s.master)
        .seed("cohort", s.cohort)
        .seed("split", s.split)
        .seed("cutoffs_train", s.train_cutoffs)
        .seed("cutoffs_test", s.test_cutoffs)
        .seed("bootstrap", s.bootstrap);
    for (k, stage) in ["full", "binmask", "final"].iter().enumerate() {
        manifest
            .seed(&format!("init_{stage}"), s.init[k])
            .seed(&format!("train_{stage}"), s.train[k])
            .seed(&format!("resample_{stage}"), s.resample[k]);
    }
    if let Some(p) = &common.config {
        manifest.input(p);
    }
    manifest.write(out, &files)?;
    eprint!("{}", summary_text(&report));
    let stages: Vec<_> = report
        .stages
        .iter()
        .map(|st| {
            json!({
                "stage": st.stage,
                "n_features": st.n_features,
                "train_auc": st.train_auc,
                "test_auc": st.test.auc,
                "ci_low": st.test.ci_low,
                "ci_high": st.test.ci_high,
            })
        })
        .collect();
    print_json(&json!({ "stages": stages, "planted": report.planted, "removal_crossed": report.removal.crossed }))
}

fn cmd_report(
    common: &Common,
    data: &Option<PathBuf>,
    model: &Option<PathBuf>,
    selected: Option<&Path>,
    svg: bool,
    out: &Option<PathBuf>,
) -> Result<()> {
    if common.print_config {
        return print_json(&load_config(common)?);
    }
    let (data, model_path) = (require(data, "data")?, require(model, "model")?);
    let ds = load_dataset(data)?;
    let model = read_model(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let columns: Vec<usize> = match selected {
        Some(p) => read_selection(p, &ds.names)?.into_iter().collect(),
        None => (0..ds.x.cols()).collect(),
    };
    let scorer = ColumnSubset::new(&model, columns.clone(), ds.x.cols())?;
    let ranking = univariate_model_auc(&scorer, &ds.x, &ds.labels, &ds.names)?;
    let in_model: BTreeSet<&str> = columns.iter().map(|&j| ds.names[j].as_str()).collect();
    let csv = ranking.to_csv(|name| {
        if in_model.contains(name) {
            "model".into()
        } else {
            "none".into()
        }
    });
    if let Some(out) = out {
        make_dir(out)?;
        let mut files = vec![write_text(out, "ranking.csv", &csv)?];
        if svg {
            files.push(write_text(out, "ranking.svg", &ranking.to_svg())?);
        }
        let mut manifest = ManifestBuilder::new("report", json!({ "svg": svg }), common.record_time);
        manifest.input(data).input(model_path);
        if let Some(p) = selected {
            manifest.input(p);
        }
        manifest.write(out, &files)?;
    } else if svg {
        bail!("--svg needs --out");
    }
    emit(&csv)
}

fn axiom_line(r: &AxiomReport) -> String {
    format!(
        "sweep {}: {:?} (probes {}, max deviation {:e})",
        r.axiom, r.verdict, r.probes, r.max_deviation
    )
}

/// Baseline invariance on a random affine function, with the second baseline
/// moved orthogonally to the weights so both baselines have the same value.
fn baseline_sweep(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<AxiomReport> {
    let w = pairs[0].1.clone();
    let f = AffineFn::new(w.clone(), 0.0);
    let b1 = pairs[1].1.clone();
    let v = &pairs[2 % pairs.len()].0;
    let along = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().map(|a| a * a).sum::<f64>();
    let b2: Vec<f64> = b1.iter().zip(v).zip(&w).map(|((b, v), w)| b + v - along * w).collect();
    Ok(check_baseline_invariance(&f, &pairs[0].0, &b1, &b2, DEFAULT_STEPS)?)
}

fn cmd_axioms(common: &Common, as_json: bool, probes: usize) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    if probes < 2 {
        bail!("--probes must be at least 2");
    }
    let demo = theorem1_demo()?;

    // Sweeps on a random small network with input 3 gated off.
    let mut net = MlpModel::new(MlpConfig::new(4, derive(seed, "axioms.net")).with_hidden(&[6, 4]))?;
    net.input_mask.theta[3] = -1.0;
    let mut other = MlpModel::new(MlpConfig::new(4, derive(seed, "axioms.other")).with_hidden(&[6, 4]))?;
    other.input_mask.theta[3] = -1.0;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..probes as u64)
        .map(|k| {
            let rng_point = |label: &str| -> Vec<f64> {
                (0..4)
                    .map(|d| {
                        let z = derive(seed, &format!("{label}.{k}.{d}"));
                        (z >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
                    })
                    .collect()
            };
            (rng_point("x"), rng_point("b"))
        })
        .collect();
    let steps = 4096;
    let sweeps = vec![
        check_completeness(&net, &pairs, steps, 1e-3)?,
        check_additivity(&net, &other, &pairs, steps, 1e-6)?,
        check_specificity(&net, &[3], probes, derive(seed, "axioms.specificity"))?,
        baseline_sweep(&pairs)?,
    ];

    if as_json {
        return print_json(&json!({ "theorem1": demo, "sweeps": sweeps }));
    }
    let mut text = demo.render();
    for r in &sweeps {
        text.push_str(&axiom_line(r));
        text.push('\n');
    }
    text.push_str(
        "verdict: no attribution method satisfies all four axioms; baseline invariance fails for path methods\n",
    );
    emit(&text)
}

fn cmd_explain(
    common: &Common,
    graph: Option<&Path>,
    model: Option<&Path>,
    selected: Option<&Path>,
    input: Option<Vec<f64>>,
    write_to: Option<&Path>,
) -> Result<()> {
    let (g, cut) = match (graph, model) {
        (Some(p), None) => read_graph(p).with_context(|| format!("reading {}", p.display()))?,
        (None, Some(p)) => {
            let m = read_model(p).with_context(|| format!("reading {}", p.display()))?;
            let names: Vec<String> = (0..m.n_inputs()).map(|i| format!("x{i}")).collect();
            let set = match selected {
                Some(s) => read_selection_loose(s, names.len())?,
                None => (0..m.n_inputs()).collect(),
            };
            let (g, c) = to_compgraph(&m, &set)?;
            (g, Some(c))
        }
        _ => bail!("give exactly one of --graph or --model"),
    };
    let cut = cut.unwrap_or_else(|| Cut::trivial(&g));
    if let Some(w) = write_to {
        if let Some(d) = w.parent().filter(|d| !d.as_os_str().is_empty()) {
            make_dir(d)?;
        }
        write_graph(w, &g, Some(&cut)).with_context(|| format!("writing {}", w.display()))?;
        let dir = w
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let name = w.file_name().expect("file path").to_string_lossy().into_owned();
        let mut manifest = ManifestBuilder::new("explain", json!({}), common.record_time);
        if let Some(p) = graph.or(model) {
            manifest.input(p);
        }
        manifest.write(dir, &[name])?;
    }
    let Some(x) = input else {
        if write_to.is_none() {
            bail!("nothing to do: give --input or --write-graph");
        }
        return Ok(());
    };
    let ev = g.evaluate(&x)?;
    let e = explain(&g, &cut, &x)?;
    let replayed = replay(&g, &cut, &e)?;
    let entries: Vec<_> = e
        .entries
        .iter()
        .map(|&(v, value)| json!({ "vertex": v, "label": g.vertex(v).label, "value": value }))
        .collect();
    print_json(&json!({
        "output": ev.output,
        "explanation": entries,
        "replay": replayed,
        "bit_exact": replayed.to_bits() == ev.output.to_bits(),
    }))
}

/// Selection files for `explain --model`: column indices only.
fn read_selection_loose(path: &Path, n: usize) -> Result<BTreeSet<usize>> {
    let text = io(std::fs::read_to_string(path), || format!("reading {}", path.display()))?;
    let mut set = BTreeSet::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let col: usize = line
            .split(',')
            .next()
            .unwrap_or("")
            .parse()
            .context("bad column index")?;
        if col >= n {
            bail!("column {col} is out of range for a model with {n} inputs");
        }
        set.insert(col);
    }
    Ok(set)
}
