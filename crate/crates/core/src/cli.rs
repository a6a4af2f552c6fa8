//! Command-line front end.
//!
//! Every subcommand resolves its settings from built-in defaults, then an
//! optional `--config` JSON object (same keys as the `config` block of the
//! report), then explicit flags. Reports go to `--out` (`-` for stdout) as
//! JSON, or CSV when the path ends in `.csv` or `--format csv` is given.
//!
//! Exit codes: 0 success, 1 domain or I/O error, 2 usage error.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    self, frequency_to_names, generate_synthetic, load_frequency_table, load_scene_graphs,
    validate_file, Evaluation, LabeledConfusion, RecordKind, Report, ReportFormat, SyntheticConfig,
    Tabular, ValidationReport, Vocabulary,
};
use crate::error::{Error, Result};
use crate::infotheory::{
    conditional_entropy, confusion_matrix, entropy, prior_reliance_report, to_bits, ConfusionMatrix,
    Distribution, JointTable, PairFilter, PriorRelianceReport,
};
use crate::irg::{irg_rounds, IrgDims, RelationHeadParams, CATEGORY_NAMES};
use crate::metrics::{
    mean_recall_at_k, split_report, Aggregation, Constraint, EvalConfig, TaskMode,
    DEFAULT_IOU_THRESHOLD, DEFAULT_KS, DEFAULT_SEMI_THRESHOLD,
};
use crate::mgsm::{
    optimal_lambda_from_norm_sq, simulate_memory, stationary_variance, steady_state_bias,
    sweep_lambda, EmpiricalError, LambdaSweep, MgsmCell, NoiseModel, OptimalLambda,
    SimulationTrace, ABLATION_GRID,
};
use crate::numeric::{gaussian_sample, Matrix, RngStream};
use crate::scene::{BBox, SceneGraphFrame};

/// Default memory update rate for SGCLS.
pub const LAMBDA_SGCLS: f64 = 0.04;
/// Default memory update rate for SGDET.
pub const LAMBDA_SGDET: f64 = 0.06;
/// Default number of generator rounds.
pub const DEFAULT_ROUNDS: usize = 1;

#[derive(Debug, Parser)]
#[command(name = "debias-sgg", version, about = "Debiasing analytics and unbiased evaluation for video scene graphs")]
struct Cli {
    /// Worker threads (default: available parallelism). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with settings; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scene-graph JSONL file against the vocabulary and record invariants.
    Validate(ValidateArgs),
    /// Compute R@K / mR@K (and head/body/tail mR@K) for predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo simulation of the EMA memory against its closed-form variance and bias.
    SimulateMemory(SimulateArgs),
    /// Analytic and empirical bias/variance trade-off over a grid of update rates.
    SweepLambda(SweepArgs),
    /// Confusion matrix, conditional entropy and prior-reliance KL report.
    Infotheory(InfoArgs),
    /// Generate a synthetic long-tail dataset with matching predictions.
    Generate(GenerateArgs),
    /// Run memory smoothing and the iterative relation generator on a synthetic pair.
    PipelineDemo(DemoArgs),
}

#[derive(Debug, Clone, Args)]
struct OutputArgs {
    /// Output path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// Output format (default: from the file extension, JSON for stdout).
    #[arg(long, value_parser = parse_from_str::<ReportFormat>)]
    format: Option<ReportFormat>,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// `gt` or `pred`.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<RecordKind>,
    /// Vocabulary JSON (default: built-in 35 objects / 26 predicates).
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_kind(s: &str) -> std::result::Result<RecordKind, String> {
    match s {
        "gt" | "groundtruth" | "ground-truth" => Ok(RecordKind::GroundTruth),
        "pred" | "prediction" => Ok(RecordKind::Prediction),
        other => Err(format!("unknown record kind {other:?} (expected gt or pred)")),
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Frequency table JSON (`{"predicate": count}`) for head/body/tail splits.
    #[arg(long)]
    freq: Option<PathBuf>,
    #[arg(long, value_parser = parse_from_str::<TaskMode>)]
    mode: Option<TaskMode>,
    #[arg(long, value_parser = parse_from_str::<Constraint>)]
    constraint: Option<Constraint>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long)]
    semi_threshold: Option<f64>,
    /// `micro` (instance-level, default) or `macro` (per-frame) per-class recall.
    #[arg(long, value_parser = parse_from_str::<Aggregation>)]
    aggregation: Option<Aggregation>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Task {
    #[default]
    SgCls,
    SgDet,
}

impl Task {
    fn default_lambda(self) -> f64 {
        match self {
            Task::SgCls => LAMBDA_SGCLS,
            Task::SgDet => LAMBDA_SGDET,
        }
    }
}

fn parse_pair(s: &str) -> std::result::Result<[String; 2], String> {
    match s.split_once(',') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains(',') => Ok([a.to_string(), b.to_string()]),
        _ => Err(format!("expected `subject,object`, got {s:?}")),
    }
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s.to_ascii_lowercase().as_str() {
        "sgcls" => Ok(Task::SgCls),
        "sgdet" => Ok(Task::SgDet),
        other => Err(format!("unknown task {other:?} (expected sgcls or sgdet)")),
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Selects the default update rate (sgcls 0.04, sgdet 0.06).
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Per-coordinate noise variance.
    #[arg(long)]
    sigma: Option<f64>,
    /// Per-coordinate drift per step.
    #[arg(long, allow_hyphen_values = true)]
    drift: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Squared drift norm, spread evenly over the coordinates.
    #[arg(long)]
    drift_norm_sq: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Monte-Carlo trials per grid point; 0 skips the empirical columns.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Frequency table used as the predicate prior (default: ground-truth counts).
    #[arg(long)]
    freq: Option<PathBuf>,
    /// Pseudo-count added to every prior count.
    #[arg(long)]
    prior_smoothing: Option<f64>,
    /// Restrict the confusion matrix to `subject,object` class names.
    #[arg(long, value_parser = parse_pair)]
    pair: Option<[String; 2]>,
    /// Report information quantities in bits instead of nats.
    #[arg(long)]
    bits: bool,
    /// Also write the per-instance prior-reliance table here.
    #[arg(long)]
    reliance_out: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Directory receiving gt.jsonl, pred.jsonl, freq.json and vocab.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    frames_per_video: Option<usize>,
    #[arg(long)]
    entities_per_frame: Option<usize>,
    #[arg(long)]
    zipf_exponent: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    max_predicates_per_pair: Option<usize>,
    #[arg(long)]
    distractors_per_pair: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Generator rounds N.
    #[arg(long)]
    rounds: Option<usize>,
    /// Frames fed through the memory before relation prediction.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relation head parameters JSON (default: seeded random weights).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

macro_rules! overlay {
    ($cfg:ident, $args:ident; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v.into(); })+
    };
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: p.to_path_buf(),
                source,
            })
        }
    }
}

fn load_vocab(path: Option<&Path>) -> Result<Vocabulary> {
    match path {
        Some(p) => Vocabulary::from_json_file(p),
        None => Ok(Vocabulary::action_genome()),
    }
}

fn require<'a>(what: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("missing required --{what}")))
}

fn emit<T: Serialize + Tabular>(report: &Report<T>, output: &OutputArgs) -> Result<()> {
    dataio::write_report(report, output.format, &output.out)
}

impl Tabular for ValidationReport {
    fn columns(&self) -> Vec<String> {
        vec!["line".into(), "message".into()]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.issues
            .iter()
            .map(|i| vec![i.line.to_string(), i.message.clone()])
            .collect()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ValidateConfig {
    input: Option<PathBuf>,
    kind: Option<RecordKind>,
    vocab: Option<PathBuf>,
}

fn cmd_validate(args: &ValidateArgs, config: Option<&Path>) -> Result<i32> {
    let mut cfg: ValidateConfig = load_config(config)?;
    if args.input.is_some() {
        cfg.input = args.input.clone();
    }
    if args.kind.is_some() {
        cfg.kind = args.kind;
    }
    if args.vocab.is_some() {
        cfg.vocab = args.vocab.clone();
    }
    let kind = *cfg.kind.get_or_insert(RecordKind::GroundTruth);
    let vocab = load_vocab(cfg.vocab.as_deref())?;
    let report = validate_file(require("input", &cfg.input)?, &vocab, kind)?;
    let valid = report.is_valid();
    for i in &report.issues {
        eprintln!("line {}: {}", i.line, i.message);
    }
    emit(&Report::new("validate", &cfg, None, report), &args.output)?;
    Ok(if valid { 0 } else { 1 })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateConfig {
    gt: Option<PathBuf>,
    pred: Option<PathBuf>,
    vocab: Option<PathBuf>,
    freq: Option<PathBuf>,
    mode: TaskMode,
    constraint: Constraint,
    k: Vec<usize>,
    iou: f64,
    semi_threshold: f64,
    aggregation: Aggregation,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            gt: None,
            pred: None,
            vocab: None,
            freq: None,
            mode: TaskMode::PredCls,
            constraint: Constraint::With,
            k: DEFAULT_KS.to_vec(),
            iou: DEFAULT_IOU_THRESHOLD,
            semi_threshold: DEFAULT_SEMI_THRESHOLD,
            aggregation: Aggregation::Micro,
        }
    }
}

fn cmd_evaluate(args: &EvaluateArgs, config: Option<&Path>) -> Result<i32> {
    let mut cfg: EvaluateConfig = load_config(config)?;
    overlay!(cfg, args; mode, constraint, k, iou, semi_threshold, aggregation);
    for (slot, flag) in [
        (&mut cfg.gt, &args.gt),
        (&mut cfg.pred, &args.pred),
        (&mut cfg.vocab, &args.vocab),
        (&mut cfg.freq, &args.freq),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    let vocab = load_vocab(cfg.vocab.as_deref())?;
    let gt = load_scene_graphs(require("gt", &cfg.gt)?, &vocab, RecordKind::GroundTruth)?;
    let pred = load_scene_graphs(require("pred", &cfg.pred)?, &vocab, RecordKind::Prediction)?;
    let eval = EvalConfig {
        mode: cfg.mode,
        constraint: cfg.constraint,
        semi_threshold: cfg.semi_threshold,
        ks: cfg.k.clone(),
        iou_threshold: cfg.iou,
        aggregation: cfg.aggregation,
    };
    let metrics = mean_recall_at_k(&pred, &gt, &eval, vocab.num_predicates())?;
    let splits = match &cfg.freq {
        Some(p) => Some(split_report(&metrics, &load_frequency_table(p, &vocab)?)?),
        None => None,
    };
    let result = Evaluation {
        predicates: vocab.predicates().to_vec(),
        metrics,
        splits,
    };
    emit(&Report::new("evaluate", &cfg, None, result), &args.output)?;
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    task: Task,
    lambda: Option<f64>,
    dim: usize,
    sigma: f64,
    drift: f64,
    steps: usize,
    trials: usize,
    seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            task: Task::SgCls,
            lambda: None,
            dim: 8,
            sigma: 1.0,
            drift: 0.0,
            steps: 10_000,
            trials: 200,
            seed: 0,
        }
    }
}

/// Tail statistics of a simulation next to their closed forms; the CSV form
/// is the full per-step trace.
#[derive(Debug, Serialize)]
struct SimulationOutput {
    tail_variance: Vec<f64>,
    stationary_variance: Vec<f64>,
    tail_bias: Vec<f64>,
    steady_state_bias: Option<Vec<f64>>,
    final_bias: Vec<f64>,
    empirical: EmpiricalError,
    #[serde(skip)]
    trace: SimulationTrace,
}

impl Tabular for SimulationOutput {
    fn columns(&self) -> Vec<String> {
        self.trace.columns()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.trace.rows()
    }
}

fn cmd_simulate(args: &SimulateArgs, config: Option<&Path>) -> Result<i32> {
    let mut cfg: SimulateConfig = load_config(config)?;
    overlay!(cfg, args; task, dim, sigma, drift, steps, trials, seed);
    if args.lambda.is_some() {
        cfg.lambda = args.lambda;
    }
    let lambda = *cfg.lambda.get_or_insert(cfg.task.default_lambda());
    let model = NoiseModel::isotropic(cfg.dim, cfg.sigma, cfg.drift)?;
    let trace = simulate_memory(&model, lambda, cfg.steps, cfg.trials, cfg.seed)?;
    let output = SimulationOutput {
        tail_variance: trace.tail_variance(),
        stationary_variance: stationary_variance(lambda, &model.sigma_diag)?,
        tail_bias: trace.tail_bias(),
        steady_state_bias: (cfg.drift != 0.0)
            .then(|| steady_state_bias(&model.drift, lambda))
            .transpose()?,
        final_bias: trace.final_bias().to_vec(),
        empirical: trace.empirical_error(),
        trace,
    };
    let seed = cfg.seed;
    emit(&Report::new("simulate-memory", &cfg, Some(seed), output), &args.output)?;
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepConfig {
    grid: Vec<f64>,
    dim: usize,
    sigma: f64,
    drift_norm_sq: f64,
    steps: usize,
    trials: usize,
    seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: ABLATION_GRID.to_vec(),
            dim: 8,
            sigma: 1.0,
            drift_norm_sq: 1.6e-5,
            steps: 10_000,
            trials: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepOutput {
    optimal: OptimalLambda,
    #[serde(flatten)]
    sweep: LambdaSweep,
}

impl Tabular for SweepOutput {
    fn columns(&self) -> Vec<String> {
        self.sweep.columns()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.sweep.rows()
    }
}

fn cmd_sweep(args: &SweepArgs, config: Option<&Path>) -> Result<i32> {
    let mut cfg: SweepConfig = load_config(config)?;
    overlay!(cfg, args; grid, dim, sigma, drift_norm_sq, steps, trials, seed);
    if cfg.dim == 0 || cfg.drift_norm_sq < 0.0 {
        return Err(Error::InvalidInput("dim must be positive and drift_norm_sq nonnegative".into()));
    }
    let drift = (cfg.drift_norm_sq / cfg.dim as f64).sqrt();
    let model = NoiseModel::isotropic(cfg.dim, cfg.sigma, drift)?;
    let sweep = sweep_lambda(&cfg.grid, &model, cfg.steps, cfg.trials, cfg.seed)?;
    let optimal = optimal_lambda_from_norm_sq(cfg.drift_norm_sq, model.sigma_mean())?;
    let seed = cfg.seed;
    emit(&Report::new("sweep-lambda", &cfg, Some(seed), SweepOutput { optimal, sweep }), &args.output)?;
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InfoConfig {
    gt: Option<PathBuf>,
    pred: Option<PathBuf>,
    vocab: Option<PathBuf>,
    freq: Option<PathBuf>,
    prior_smoothing: f64,
    pair: Option<[String; 2]>,
    bits: bool,
}

impl Default for InfoConfig {
    fn default() -> Self {
        InfoConfig {
            gt: None,
            pred: None,
            vocab: None,
            freq: None,
            prior_smoothing: 1.0,
            pair: None,
            bits: false,
        }
    }
}

#[derive(Debug, Serialize)]
struct InfoOutput {
    units: &'static str,
    predicates: Vec<String>,
    prior: Distribution,
    /// `H(R)` over ground-truth predicates.
    label_entropy: f64,
    /// `H(R | subject class, object class)` over ground truth.
    conditional_entropy: f64,
    /// Ground-truth relations without any scored prediction for their pair.
    skipped_instances: usize,
    confusion: ConfusionMatrix,
    reliance: PriorRelianceReport,
}

impl Tabular for InfoOutput {
    fn columns(&self) -> Vec<String> {
        self.labeled().columns()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.labeled().rows()
    }
}

impl InfoOutput {
    fn labeled(&self) -> LabeledConfusion {
        LabeledConfusion {
            predicates: self.predicates.clone(),
            matrix: self.confusion.clone(),
        }
    }
}

/// Predicted score mass per predicate for every ground-truth relation's pair.
fn pair_posteriors(preds: &[SceneGraphFrame], gts: &[SceneGraphFrame], n: usize) -> Result<(Vec<Distribution>, usize)> {
    let index: HashMap<(&str, u64), &SceneGraphFrame> =
        preds.iter().map(|f| ((f.video.as_str(), f.frame), f)).collect();
    let mut posteriors = Vec::new();
    let mut skipped = 0;
    for gt in gts {
        let pred = index.get(&(gt.video.as_str(), gt.frame));
        for rel in &gt.relations {
            let mut weights = vec![0.0; n];
            for p in pred.map_or(&[][..], |p| &p.relations) {
                if p.pair() == rel.pair() && p.predicate < n {
                    weights[p.predicate] += p.score;
                }
            }
            if weights.iter().all(|w| *w == 0.0) {
                skipped += 1;
            } else {
                posteriors.push(Distribution::from_weights(&weights)?);
            }
        }
    }
    Ok((posteriors, skipped))
}

fn cmd_infotheory(args: &InfoArgs, config: Option<&Path>) -> Result<i32> {
    let mut cfg: InfoConfig = load_config(config)?;
    overlay!(cfg, args; prior_smoothing);
    for (slot, flag) in [
        (&mut cfg.gt, &args.gt),
        (&mut cfg.pred, &args.pred),
        (&mut cfg.vocab, &args.vocab),
        (&mut cfg.freq, &args.freq),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    if args.pair.is_some() {
        cfg.pair = args.pair.clone();
    }
    cfg.bits |= args.bits;
    if !(cfg.prior_smoothing.is_finite() && cfg.prior_smoothing >= 0.0) {
        return Err(Error::InvalidInput("prior smoothing must be finite and >= 0".into()));
    }
    let vocab = load_vocab(cfg.vocab.as_deref())?;
    let n = vocab.num_predicates();
    let gt = load_scene_graphs(require("gt", &cfg.gt)?, &vocab, RecordKind::GroundTruth)?;
    let pred = load_scene_graphs(require("pred", &cfg.pred)?, &vocab, RecordKind::Prediction)?;

    let filter = match &cfg.pair {
        None => None,
        Some(names) => {
            let id = |name: &String| {
                vocab
                    .object_id(name)
                    .ok_or_else(|| Error::Vocabulary(format!("unknown object class {name:?}")))
            };
            Some(PairFilter {
                subject_class: id(&names[0])?,
                object_class: id(&names[1])?,
            })
        }
    };
    let confusion = confusion_matrix(&pred, &gt, n, filter)?;

    let counts: Vec<f64> = match &cfg.freq {
        Some(p) => load_frequency_table(p, &vocab)?.counts.iter().map(|&c| c as f64).collect(),
        None => confusion_matrix(&pred, &gt, n, None)?
            .row_sums()
            .into_iter()
            .map(|c| c as f64)
            .collect(),
    };
    let smoothed: Vec<f64> = counts.iter().map(|c| c + cfg.prior_smoothing).collect();
    let prior = Distribution::from_weights(&smoothed)?;

    let mut buckets: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut pairs = Vec::new();
    for f in &gt {
        for r in &f.relations {
            if let (Some(s), Some(o)) = (f.entity(r.subject), f.entity(r.object)) {
                let next = buckets.len();
                let b = *buckets.entry((s.class, o.class)).or_insert(next);
                pairs.push((r.predicate, b));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut joint = Matrix::zeros(n, buckets.len());
    for (p, b) in pairs {
        joint.set(p, b, joint.get(p, b) + 1.0);
    }
    let joint = JointTable::from_counts(&joint)?;
    let label_entropy = entropy(&Distribution::new(joint.label_marginal())?);
    let cond = conditional_entropy(&joint);

    let (posteriors, skipped) = pair_posteriors(&pred, &gt, n)?;
    let mut reliance = prior_reliance_report(&posteriors, &prior)?;
    let (units, scale): (&str, fn(f64) -> f64) = if cfg.bits { ("bits", to_bits) } else { ("nats", |x| x) };
    for i in &mut reliance.instances {
        i.kl = scale(i.kl);
        i.cross_entropy = scale(i.cross_entropy);
        i.posterior_entropy = scale(i.posterior_entropy);
        i.identity_gap = scale(i.identity_gap);
    }
    for x in [
        &mut reliance.mean_kl,
        &mut reliance.prior_entropy,
        &mut reliance.mean_posterior_entropy,
        &mut reliance.entropy_drop,
        &mut reliance.max_abs_identity_gap,
    ] {
        *x = scale(*x);
    }
    if let Some(path) = &args.reliance_out {
        let r = Report::new("infotheory", &cfg, None, reliance.clone());
        dataio::write_report(&r, None, path)?;
    }
    let output = InfoOutput {
        units,
        predicates: vocab.predicates().to_vec(),
        prior,
        label_entropy: scale(label_entropy),
        conditional_entropy: scale(cond),
        skipped_instances: skipped,
        confusion,
        reliance,
    };
    emit(&Report::new("infotheory", &cfg, None, output), &args.output)?;
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct GenerateConfig {
    out_dir: Option<PathBuf>,
    vocab: Option<PathBuf>,
    #[serde(flatten)]
    synthetic: SyntheticConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            out_dir: None,
            vocab: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct GenerateOutput {
    files: BTreeMap<&'static str, PathBuf>,
    frames: usize,
    gt_relations: usize,
    pred_relations: usize,
    band_sizes: BTreeMap<&'static str, usize>,
}

impl Tabular for GenerateOutput {
    fn columns(&self) -> Vec<String> {
        vec!["file".into(), "path".into()]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.files
            .iter()
            .map(|(k, v)| vec![k.to_string(), v.display().to_string()])
            .collect()
    }
}

fn cmd_generate(args: &GenerateArgs, config: Option<&Path>) -> Result<i32> {
    let mut cfg: GenerateConfig = load_config(config)?;
    if args.out_dir.is_some() {
        cfg.out_dir = args.out_dir.clone();
    }
    if args.vocab.is_some() {
        cfg.vocab = args.vocab.clone();
    }
    let s = &mut cfg.synthetic;
    if let Some(v) = args.videos {
        s.videos = v;
    }
    if let Some(v) = args.frames_per_video {
        s.frames_per_video = v;
    }
    if let Some(v) = args.entities_per_frame {
        s.entities_per_frame = v;
    }
    if let Some(v) = args.zipf_exponent {
        s.zipf_exponent = v;
    }
    if let Some(v) = args.noise {
        s.noise = v;
    }
    if let Some(v) = args.max_predicates_per_pair {
        s.max_predicates_per_pair = v;
    }
    if let Some(v) = args.distractors_per_pair {
        s.distractors_per_pair = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    let vocab = load_vocab(cfg.vocab.as_deref())?;
    let dir = require("out-dir", &cfg.out_dir)?.to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let data = generate_synthetic(&cfg.synthetic, &vocab)?;

    let files: BTreeMap<&'static str, PathBuf> = [
        ("gt", dir.join("gt.jsonl")),
        ("pred", dir.join("pred.jsonl")),
        ("freq", dir.join("freq.json")),
        ("vocab", dir.join("vocab.json")),
    ]
    .into_iter()
    .collect();
    dataio::write_scene_graphs(&files["gt"], &data.ground_truth, &vocab, RecordKind::GroundTruth)?;
    dataio::write_scene_graphs(&files["pred"], &data.predictions, &vocab, RecordKind::Prediction)?;
    let freq_json = serde_json::to_string_pretty(&frequency_to_names(&data.frequency, &vocab)).expect("map serializes");
    dataio::write_text(&files["freq"], &(freq_json + "\n"))?;
    let vocab_json = serde_json::to_string_pretty(&vocab).expect("vocabulary serializes");
    dataio::write_text(&files["vocab"], &(vocab_json + "\n"))?;

    let mut band_sizes = BTreeMap::new();
    for b in data.frequency.bands() {
        let name = match b {
            crate::metrics::Band::Head => "head",
            crate::metrics::Band::Body => "body",
            crate::metrics::Band::Tail => "tail",
        };
        *band_sizes.entry(name).or_insert(0) += 1;
    }
    let output = GenerateOutput {
        files,
        frames: data.ground_truth.len(),
        gt_relations: data.ground_truth.iter().map(|f| f.relations.len()).sum(),
        pred_relations: data.predictions.iter().map(|f| f.relations.len()).sum(),
        band_sizes,
    };
    let seed = cfg.synthetic.seed;
    emit(&Report::new("generate", &cfg, Some(seed), output), &args.output)?;
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DemoConfig {
    task: Task,
    lambda: Option<f64>,
    rounds: usize,
    frames: usize,
    seed: u64,
    params: Option<PathBuf>,
    vocab: Option<PathBuf>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            task: Task::SgCls,
            lambda: None,
            rounds: DEFAULT_ROUNDS,
            frames: 8,
            seed: 0,
            params: None,
            vocab: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct CategoryResult {
    category: &'static str,
    top_predicate: String,
    probabilities: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RoundResult {
    round: usize,
    categories: Vec<CategoryResult>,
}

#[derive(Debug, Serialize)]
struct DemoOutput {
    subject_class: String,
    object_class: String,
    memory_norms: [f64; 2],
    rounds: Vec<RoundResult>,
}

impl Tabular for DemoOutput {
    fn columns(&self) -> Vec<String> {
        ["round", "category", "top_predicate", "probabilities"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rounds
            .iter()
            .flat_map(|r| {
                r.categories.iter().map(move |c| {
                    vec![
                        r.round.to_string(),
                        c.category.to_string(),
                        c.top_predicate.clone(),
                        c.probabilities
                            .iter()
                            .map(|p| dataio::format_float(*p))
                            .collect::<Vec<_>>()
                            .join(";"),
                    ]
                })
            })
            .collect()
    }
}

/// Visual feature width used by the demo when parameters are generated.
const DEMO_VISUAL: usize = 16;

fn cmd_demo(args: &DemoArgs, config: Option<&Path>) -> Result<i32> {
    let mut cfg: DemoConfig = load_config(config)?;
    overlay!(cfg, args; task, rounds, frames, seed);
    if args.lambda.is_some() {
        cfg.lambda = args.lambda;
    }
    if args.params.is_some() {
        cfg.params = args.params.clone();
    }
    if args.vocab.is_some() {
        cfg.vocab = args.vocab.clone();
    }
    let lambda = *cfg.lambda.get_or_insert(cfg.task.default_lambda());
    if cfg.frames == 0 {
        return Err(Error::InvalidInput("frames must be at least 1".into()));
    }
    let vocab = load_vocab(cfg.vocab.as_deref())?;
    let frame_size = [640.0, 480.0];
    let params = match &cfg.params {
        Some(p) => RelationHeadParams::from_json_file(p)?,
        None => {
            let dims = IrgDims {
                visual: DEMO_VISUAL,
                visual_proj: 8,
                union: 8,
                semantic: 8,
                predicate: 8,
                categories: vocab.category_sizes(),
            };
            RelationHeadParams::seeded(dims, vocab.predicates(), vocab.objects(), frame_size, cfg.seed)?
        }
    };
    if params.dims.categories != vocab.category_sizes() {
        return Err(Error::Vocabulary("parameter file and vocabulary disagree on category sizes".into()));
    }
    let width = params.dims.visual;

    let mut rng = RngStream::derive(cfg.seed, 1);
    let mut cells = [
        MgsmCell::seeded(width, lambda, 4, &mut rng)?,
        MgsmCell::seeded(width, lambda, 4, &mut rng)?,
    ];
    let base: [Vec<f64>; 2] = std::array::from_fn(|_| (0..width).map(|_| rng.standard_normal()).collect());
    let drift = 0.01;
    let noise = vec![0.25; width];
    let mut enhanced = [vec![0.0; width], vec![0.0; width]];
    for t in 0..cfg.frames {
        for k in 0..2 {
            let mean: Vec<f64> = base[k].iter().map(|b| b + drift * t as f64).collect();
            let v = gaussian_sample(&mut rng, &mean, &noise)?;
            enhanced[k] = cells[k].step(&v)?;
        }
    }
    let subject_class = vocab.object_id("person").unwrap_or(0);
    let object_class = (subject_class + 1 + rng.below(vocab.num_objects() - 1)) % vocab.num_objects();
    let [e_subj, e_obj] = enhanced;
    let subj = params.entity(0, subject_class, BBox::new(120.0, 60.0, 320.0, 460.0), e_subj)?;
    let obj = params.entity(1, object_class, BBox::new(260.0, 240.0, 600.0, 470.0), e_obj)?;
    let rounds = irg_rounds(&subj, &obj, &params, cfg.rounds)?;

    let output = DemoOutput {
        subject_class: vocab.objects()[subject_class].clone(),
        object_class: vocab.objects()[object_class].clone(),
        memory_norms: [
            crate::numeric::norm(&cells[0].state().memory),
            crate::numeric::norm(&cells[1].state().memory),
        ],
        rounds: rounds
            .iter()
            .enumerate()
            .map(|(round, d)| RoundResult {
                round,
                categories: (0..CATEGORY_NAMES.len())
                    .map(|k| {
                        let global = params.dims.category_offset(k) + d.argmax()[k];
                        CategoryResult {
                            category: CATEGORY_NAMES[k],
                            top_predicate: vocab.predicates()[global].clone(),
                            probabilities: d.categories[k].probs().to_vec(),
                        }
                    })
                    .collect(),
            })
            .collect(),
    };
    let seed = cfg.seed;
    emit(&Report::new("pipeline-demo", &cfg, Some(seed), output), &args.output)?;
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Validate(a) => cmd_validate(a, config),
        Command::Evaluate(a) => cmd_evaluate(a, config),
        Command::SimulateMemory(a) => cmd_simulate(a, config),
        Command::SweepLambda(a) => cmd_sweep(a, config),
        Command::Infotheory(a) => cmd_infotheory(a, config),
        Command::Generate(a) => cmd_generate(a, config),
        Command::PipelineDemo(a) => cmd_demo(a, config),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e @ Error::InvalidInput(_)) if e.to_string().contains("missing required") => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
