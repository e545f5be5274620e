//! Command-line surface.
//!
//! Every subcommand reads its randomness from `--seed` through named streams,
//! so reruns with the same arguments write byte-identical files.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::config::{ExperimentConfig, OrderMethod};
use crate::dataset::{read_order, write_file, write_order, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_against, nn_order, propagate, distance_scorer, Metric, StartPolicy};
use crate::exec::Exec;
use crate::nn::grad_check_extrapolated;
use crate::oneshot::{accuracy_summary, run_episodes};
use crate::ordering::{
    brute_force_order_with, greedy_order_sampled_with, greedy_order_with, sequence_log_likelihood, Permutation,
    TabularScorer,
};
use crate::rng;
use crate::training::{load_model, save_model, train, TransitionModel};
use crate::transition::{Architecture, GatedTransitionNet, State, StateKind};

/// Relative-error threshold for `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Outer step of the extrapolated central difference.
pub const GRADCHECK_STEP: f64 = 1e-4;
/// Triples with a relu pre-activation closer than this to zero are redrawn.
pub const GRADCHECK_KINK_MARGIN: f64 = 1e-3;
const GRADCHECK_MAX_DRAWS: usize = 1000;
/// Largest state dimension `gradcheck` accepts.
pub const GRADCHECK_MAX_DIM: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "chainorder", version, about = "Learn a transition operator and recover generation orders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a shuffled synthetic dataset and its truth sidecar. The
    /// `clusters` family also writes one file per class.
    Gen(GenArgs),
    /// Train a transition model on a dataset.
    Train(TrainArgs),
    /// Recover an order for a dataset under a trained model.
    Order(OrderArgs),
    /// Score an order file against a truth file.
    Eval(EvalArgs),
    /// Follow the most probable successor from a start state.
    Propagate(PropagateArgs),
    /// Run one-shot classification episodes.
    Oneshot(OneshotArgs),
    /// Compare analytic and numeric gradients on random models.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load_or_default(self.config.as_deref())
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Truth sidecar; defaults to `<out>.truth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step history CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Overrides `train.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Full,
    Sampled,
    Brute,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides `order.method`.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Start count for `sampled`; overrides `order.num_starts`.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Order file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub order: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Dataset for the nearest-neighbour baseline row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset label for the report; defaults to the truth file's stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Method label of the order file's row.
    #[arg(long, default_value = "ordernet")]
    pub method: String,
    /// Measure wall time; without it the column is 0 so reports stay reproducible.
    #[arg(long)]
    pub timing: bool,
    /// Report CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub start: usize,
    #[arg(long)]
    pub steps: usize,
    /// Never return to an already visited state.
    #[arg(long)]
    pub no_revisit: bool,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OneshotArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// One dataset file per class.
    #[arg(long, num_args = 1.., required = true)]
    pub classes: Vec<PathBuf>,
    #[arg(long)]
    pub way: Option<usize>,
    /// Chain length per class.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub queries_per_class: Option<usize>,
    /// Summary CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-query episode report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Continuous,
    Binary,
    /// Alternate between the two.
    Both,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// State dimension, at most 8.
    #[arg(long, default_value_t = 3)]
    pub dims: usize,
    /// Number of random (model, s, s') triples.
    #[arg(long, default_value_t = 20)]
    pub triples: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Both)]
    pub kind: KindArg,
    /// Result CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturb the analytic gradient before comparing (negative control).
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The command ran but its check did not pass.
    CheckFailed,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<Outcome> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|()| Outcome::Success),
        Command::Train(a) => cmd_train(&a).map(|()| Outcome::Success),
        Command::Order(a) => cmd_order(&a).map(|()| Outcome::Success),
        Command::Eval(a) => emit(cmd_eval(&a)?, a.out.as_deref(), stdout).map(|()| Outcome::Success),
        Command::Propagate(a) => emit(cmd_propagate(&a)?, a.out.as_deref(), stdout).map(|()| Outcome::Success),
        Command::Oneshot(a) => emit(cmd_oneshot(&a)?, a.out.as_deref(), stdout).map(|()| Outcome::Success),
        Command::Gradcheck(a) => {
            let (text, passed) = cmd_gradcheck(&a)?;
            emit(text, a.out.as_deref(), stdout)?;
            Ok(if passed { Outcome::Success } else { Outcome::CheckFailed })
        }
    }
}

fn emit(text: String, path: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_file(p, &text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let config = args.common.config()?;
    let out = config.output_path(&args.out);
    let truth_path = config.output_path(&args.truth.clone().unwrap_or_else(|| sidecar(&args.out, ".truth")));
    let traj = config.generator.generate(args.common.seed)?;
    let mut shuffle = rng::stream(args.common.seed, "shuffle");
    let (dataset, truth) = crate::datagen::shuffle_with_truth(&traj, &mut shuffle)?;
    dataset.write_csv(&out)?;
    write_order(&truth_path, &truth, None)?;
    if let Some(chains) = config.generator.cluster_chains(args.common.seed) {
        for (c, class) in chains?.datasets()?.iter().enumerate() {
            class.write_csv(class_path(&out, c))?;
        }
    }
    Ok(())
}

/// `data.csv` → `data.class3.csv`.
pub fn class_path(out: &Path, class: usize) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.class{class}.{}", ext.to_string_lossy()),
        None => format!("{stem}.class{class}"),
    };
    out.with_file_name(name)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = args.common.config()?;
    let dataset = Dataset::read_csv(&args.data)?;
    let mut tc = config.train.clone();
    tc.seed = args.common.seed;
    if let Some(steps) = args.steps {
        tc.total_steps = steps;
    }
    let (model, history) = train(&dataset, &tc)?;
    let out = config.output_path(&args.out);
    let history_path = config.output_path(&args.history.clone().unwrap_or_else(|| sidecar(&args.out, ".history.csv")));
    save_model(&model, &out)?;
    history.write_csv(&history_path)
}

fn load_matching(model: &Path, data: &Path) -> Result<(TransitionModel, Dataset)> {
    let model = load_model(model)?;
    let dataset = Dataset::read_csv(data)?;
    if model.net.dim() != dataset.dim() {
        return Err(Error::Dimension(format!(
            "model has state dimension {}, dataset has {}",
            model.net.dim(),
            dataset.dim()
        )));
    }
    if model.net.kind() != dataset.kind() {
        return Err(Error::KindMismatch {
            expected: model.net.kind().as_str(),
            got: dataset.kind().as_str(),
        });
    }
    Ok((model, dataset))
}

pub fn cmd_order(args: &OrderArgs) -> Result<()> {
    let config = args.common.config()?;
    let (model, dataset) = load_matching(&args.model, &args.data)?;
    let method = match (args.method, config.order) {
        (Some(MethodArg::Full), _) => OrderMethod::Full,
        (Some(MethodArg::Brute), _) => OrderMethod::Brute,
        (Some(MethodArg::Sampled), OrderMethod::Sampled(k)) => OrderMethod::Sampled(args.starts.unwrap_or(k)),
        (Some(MethodArg::Sampled), _) => OrderMethod::Sampled(args.starts.unwrap_or(1)),
        (None, OrderMethod::Sampled(k)) => OrderMethod::Sampled(args.starts.unwrap_or(k)),
        (None, m) => m,
    };
    let exec = Exec::default();
    let scorer = TabularScorer::from_model(&model.net, dataset.states(), exec)?;
    let order = match method {
        OrderMethod::Full => greedy_order_with(&scorer, exec),
        OrderMethod::Sampled(k) => {
            let mut rng = rng::stream(args.common.seed, "order");
            greedy_order_sampled_with(&scorer, k, &mut rng, exec)?
        }
        OrderMethod::Brute => brute_force_order_with(&scorer, exec)?,
    };
    let ll = sequence_log_likelihood(&scorer, &order)?;
    write_order(config.output_path(&args.out), &order, Some(ll))
}

pub const EVAL_HEADER: &str = "dataset,method,seed,tau_forward,tau_reverse,tau_best,wall_time_ms";

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let (order, _) = read_order(&args.order)?;
    let (truth, _) = read_order(&args.truth)?;
    if order.len() != truth.len() {
        return Err(Error::Size(format!(
            "order has {} entries, truth has {}",
            order.len(),
            truth.len()
        )));
    }
    let name = args.name.clone().unwrap_or_else(|| {
        let stem = args.truth.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        stem.strip_suffix(".csv").map(str::to_string).unwrap_or(stem)
    });
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    let mut row = |method: &str, recovered: &Permutation, started: Instant| -> Result<()> {
        let r = evaluate_against(&truth, recovered, method)?;
        let ms = if args.timing { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        writeln!(
            out,
            "{name},{method},{},{},{},{},{ms}",
            args.common.seed, r.tau_forward, r.tau_reverse, r.tau_best
        )
        .expect("writing to a string");
        Ok(())
    };
    row(&args.method, &order, Instant::now())?;
    if let Some(path) = &args.data {
        let dataset = Dataset::read_csv(path)?;
        if dataset.len() != truth.len() {
            return Err(Error::Size(format!(
                "dataset has {} rows, truth has {}",
                dataset.len(),
                truth.len()
            )));
        }
        let started = Instant::now();
        let nn = nn_order(dataset.states(), StartPolicy::Best, Metric::Euclidean)?;
        row("nn", &nn, started)?;
    }
    Ok(out)
}

pub fn cmd_propagate(args: &PropagateArgs) -> Result<String> {
    let (model, dataset) = load_matching(&args.model, &args.data)?;
    let revisit = !args.no_revisit;
    let learned = TabularScorer::from_model(&model.net, dataset.states(), Exec::default())?;
    let euclid = distance_scorer(dataset.states(), Metric::Euclidean);
    let a = propagate(&learned, args.start, args.steps, revisit)?;
    let b = propagate(&euclid, args.start, args.steps, revisit)?;
    let mut out = String::from("step,learned,euclidean\n");
    let cell = |p: &[usize], i: usize| p.get(i).map_or(String::new(), ToString::to_string);
    for i in 0..a.path.len().max(b.path.len()) {
        writeln!(out, "{i},{},{}", cell(&a.path, i), cell(&b.path, i)).expect("writing to a string");
    }
    Ok(out)
}

pub const ONESHOT_HEADER: &str = "way,k,episodes,queries_per_class,mean_accuracy,std_accuracy";

pub fn cmd_oneshot(args: &OneshotArgs) -> Result<String> {
    let config = args.common.config()?;
    let mut spec = config.oneshot;
    spec.way = args.way.unwrap_or(spec.way);
    spec.k = args.k.unwrap_or(spec.k);
    spec.episodes = args.episodes.unwrap_or(spec.episodes);
    spec.queries_per_class = args.queries_per_class.unwrap_or(spec.queries_per_class);
    if args.classes.len() < spec.way {
        return Err(Error::Episode(format!(
            "{}-way episodes need at least {} class files, got {}",
            spec.way,
            spec.way,
            args.classes.len()
        )));
    }
    let model = load_model(&args.model)?;
    let pool = args.classes.iter().map(Dataset::read_csv).collect::<Result<Vec<_>>>()?;
    for (path, d) in args.classes.iter().zip(&pool) {
        if d.dim() != model.net.dim() || d.kind() != model.net.kind() {
            return Err(Error::Dimension(format!(
                "{}: {} {}-dimensional states for a {} {}-dimensional model",
                path.display(),
                d.kind(),
                d.dim(),
                model.net.kind(),
                model.net.dim()
            )));
        }
    }
    let seed = args.common.seed;
    let outcomes = run_episodes(&model.net, &pool, spec, seed, Exec::default())?;

    if let Some(path) = &args.report {
        let mut report = String::from("episode,seed,query,truth,prediction");
        for c in 0..spec.way {
            write!(report, ",ll_{c}").expect("writing to a string");
        }
        report.push('\n');
        for o in &outcomes {
            for (q, ((_, truth), (pred, scores))) in o
                .episode
                .queries
                .iter()
                .zip(o.result.predictions.iter().zip(&o.result.scores))
                .enumerate()
            {
                write!(report, "{},{seed},{q},{truth},{pred}", o.index).expect("writing to a string");
                for s in scores {
                    write!(report, ",{s}").expect("writing to a string");
                }
                report.push('\n');
            }
        }
        write_file(&config.output_path(path), &report)?;
    }

    let (mean, std) = accuracy_summary(&outcomes)
        .ok_or_else(|| Error::Episode("no episode had queries; accuracy is undefined".into()))?;
    Ok(format!(
        "{ONESHOT_HEADER}\n{},{},{},{},{mean},{std}\n",
        spec.way, spec.k, spec.episodes, spec.queries_per_class
    ))
}

fn random_state(kind: StateKind, dim: usize, rng: &mut rng::Rng) -> Result<State> {
    let values = match kind {
        StateKind::Continuous => (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
        StateKind::Binary => (0..dim).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect(),
    };
    State::new(values, kind)
}

/// A random `(net, s, s')` whose relu units all sit clear of their kinks, so
/// central differences are meaningful. Redraws otherwise.
fn gradcheck_triple(
    kind: StateKind,
    dims: usize,
    arch: &Architecture,
    seed: u64,
    index: u64,
) -> Result<(GatedTransitionNet, State, State)> {
    let mut rng = rng::substream(seed, "gradcheck", index);
    for _ in 0..GRADCHECK_MAX_DRAWS {
        let net = GatedTransitionNet::new(kind, dims, arch, 0.0, &mut rng)?;
        let s = random_state(kind, dims, &mut rng)?;
        let next = random_state(kind, dims, &mut rng)?;
        if net.relu_margin(&s)? > GRADCHECK_KINK_MARGIN {
            return Ok((net, s, next));
        }
    }
    Err(Error::Numeric(format!(
        "no kink-free triple in {GRADCHECK_MAX_DRAWS} draws"
    )))
}

/// Max relative gradient error over random triples, and whether it passed.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(String, bool)> {
    if args.dims == 0 || args.dims > GRADCHECK_MAX_DIM {
        return Err(Error::Parameter(format!(
            "gradcheck dims must lie in 1..={GRADCHECK_MAX_DIM}, got {}",
            args.dims
        )));
    }
    if args.triples == 0 {
        return Err(Error::Parameter("gradcheck needs at least one triple".into()));
    }
    let arch = Architecture {
        encoder_hidden: vec![8, 8],
        head_hidden: vec![4],
    };
    let mut worst = 0.0f64;
    for t in 0..args.triples {
        let kind = match args.kind {
            KindArg::Continuous => StateKind::Continuous,
            KindArg::Binary => StateKind::Binary,
            KindArg::Both if t % 2 == 0 => StateKind::Continuous,
            KindArg::Both => StateKind::Binary,
        };
        let (net, s, next) = gradcheck_triple(kind, args.dims, &arch, args.common.seed, t as u64)?;
        let (_, mut grad) = net.log_transition_grad(&s, &next)?;
        if args.corrupt {
            grad[0] += 1e-2 * (1.0 + grad[0].abs());
        }
        let params = net.flat_params();
        let mut probe = net.clone();
        let err = grad_check_extrapolated(
            |p| {
                probe.set_flat_params(p).expect("same parameter count");
                probe.log_transition(&s, &next).unwrap_or(f64::NAN)
            },
            &grad,
            &params,
            GRADCHECK_STEP,
        )?;
        worst = worst.max(err);
    }
    let passed = worst < GRADCHECK_TOLERANCE;
    let text = format!(
        "dims,triples,max_relative_error,passed\n{},{},{worst:e},{passed}\n",
        args.dims, args.triples
    );
    Ok((text, passed))
}
