use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_tree::data::{builtin, load_csv, read_matrix, Dataset, Schema};
use latent_tree::experiment::{self, ExperimentSpec, Task};
use latent_tree::gradcheck::{self, GradcheckConfig};
use latent_tree::model::{Activation, InputMode};
use latent_tree::oracles::{qp_oracle, OracleConfig};
use latent_tree::solver::{self, SolverConfig};
use latent_tree::studies::{self, BenchConfig, GapStudyConfig};
use latent_tree::train::{OptimizerConfig, TrainConfig};
use latent_tree::{Error, Result, TreeTopology};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "latent-tree",
    version,
    about = "Learn pruned binary decision trees by argmin differentiation"
)]
#[command(args_conflicts_with_subcommands = true, allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tree model and write a checkpoint, metrics and a summary.
    Train(Box<TrainArgs>),
    /// Solve the relaxed traversal-and-pruning program for a reward matrix.
    Solve(SolveArgs),
    /// Time the tree solver against the generic projected-gradient oracle.
    Bench(BenchArgs),
    /// Compare relaxed and exact pruning solutions on random problems.
    Gapstudy(GapArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Reg,
    Cls,
    Cluster,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Qhadam,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputArg {
    Concat,
    TreeOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Identity,
    Elu,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    /// CSV path with a header row, or `builtin:<name>` (glass, tictactoe,
    /// synthetic-regression, synthetic-classification).
    #[arg(long)]
    data: String,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Target column of a CSV file. For clustering it holds the class labels.
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated categorical columns of a CSV file.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Feature columns (names or 0-based indices) regressed when clustering.
    #[arg(long, value_delimiter = ',')]
    target_cols: Vec<String>,
    /// JSON training configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Per-epoch JSON lines; defaults to `<out-dir>/metrics.jsonl`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    lr_plateau_epochs: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Fully connected predictor layers (1 = linear).
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, value_enum)]
    predictor_input: Option<InputArg>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SolveArgs {
    /// Headerless CSV: one row per point, one column per node.
    #[arg(long)]
    q: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    depth: usize,
    /// Also run the projected-gradient oracle and report the max-norm gap.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
    depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest n·|T| timed with the oracle.
    #[arg(long, default_value_t = 2000)]
    oracle_cap: usize,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct GapArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10,100")]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(*args),
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Gapstudy(args) => cmd_gapstudy(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": { "code": e.code(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}

fn load_dataset(args: &TrainArgs) -> Result<Dataset> {
    if let Some(name) = args.data.strip_prefix("builtin:") {
        return builtin::by_name(name)
            .unwrap_or_else(|| Err(Error::Argument(format!("unknown built-in dataset \"{name}\""))));
    }
    let schema = Schema {
        target: args.target.clone(),
        categorical: args.categorical.clone(),
    };
    load_csv(&args.data, &schema)
}

fn resolve_columns(dataset: &Dataset, columns: &[String]) -> Result<Vec<usize>> {
    columns
        .iter()
        .map(|c| {
            dataset
                .column_index(c)
                .or_else(|| c.parse().ok())
                .ok_or_else(|| Error::Argument(format!("unknown feature column \"{c}\"")))
        })
        .collect()
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut c: TrainConfig = match &args.config {
        Some(path) => serde_json::from_reader(File::open(path)?)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { c.$field = v; })*};
    }
    set!(
        depth,
        lambda,
        seed,
        learning_rate,
        batch_size,
        max_epochs,
        patience,
        lr_decay_factor,
        lr_plateau_epochs
    );
    if let Some(o) = args.optimizer {
        c.optimizer = match o {
            OptimizerArg::Adam => OptimizerConfig::adam(),
            OptimizerArg::Qhadam => OptimizerConfig::qhadam(),
        };
    }
    if let Some(v) = args.layers {
        c.predictor.layers = v;
    }
    if let Some(v) = args.hidden {
        c.predictor.hidden = v;
    }
    if let Some(v) = args.dropout {
        c.predictor.dropout = v;
    }
    if let Some(v) = args.predictor_input {
        c.predictor.input = match v {
            InputArg::Concat => InputMode::Concat,
            InputArg::TreeOnly => InputMode::TreeOnly,
        };
    }
    if let Some(v) = args.activation {
        c.activation = match v {
            ActivationArg::Identity => Activation::Identity,
            ActivationArg::Elu => Activation::Elu,
        };
    }
    Ok(c)
}

fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(out.flush()?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = train_config(&args)?;
    config.validate()?;
    let dataset = load_dataset(&args)?;
    let task = match args.task {
        TaskArg::Reg => Task::Reg,
        TaskArg::Cls => Task::Cls,
        TaskArg::Cluster => Task::Cluster,
    };
    let mut spec = ExperimentSpec::new(task, config.seed);
    if task == Task::Cluster {
        if args.target_cols.is_empty() {
            return Err(Error::Argument("clustering needs --target-cols".into()));
        }
        spec.target_columns = resolve_columns(&dataset, &args.target_cols)?;
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| args.out_dir.join("metrics.jsonl"));
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    let outcome = experiment::run_with(&dataset, &spec, &config, |record| {
        serde_json::to_writer(&mut metrics, record)?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        Ok(())
    })?;
    outcome.trained.save(args.out_dir.join("checkpoint.json"))?;
    write_json(&args.out_dir.join("summary.json"), &outcome.summary)?;
    print_stdout(&serde_json::to_string_pretty(&outcome.summary)?)
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let config = SolverConfig::new(args.lambda)?;
    let topology = TreeTopology::new(args.depth)?;
    let q = read_matrix(File::open(&args.q)?)?;
    if q.ncols() != topology.num_nodes() {
        return Err(Error::Argument(format!(
            "q has {} columns but a depth-{} tree has {} nodes",
            q.ncols(),
            args.depth,
            topology.num_nodes()
        )));
    }
    let solution = solver::solve(q.view(), &config, &topology)?;
    let mut out = serde_json::to_value(solution.dump(args.depth))?;
    if args.oracle {
        let oracle = qp_oracle(q.view(), args.lambda, &topology, &OracleConfig::tuned_for(args.lambda))?;
        let gap = solution
            .a
            .iter()
            .zip(&oracle.a)
            .chain(solution.z.iter().zip(&oracle.z))
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        out["oracle_max_gap"] = json!(gap);
    }
    print_stdout(&serde_json::to_string_pretty(&out)?)
}

fn write_csv<T: serde::Serialize>(rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let rows = studies::bench(&BenchConfig {
        depths: args.depths,
        ns: args.ns,
        reps: args.reps,
        lambda: args.lambda,
        seed: args.seed,
        oracle_cap: args.oracle_cap,
    })?;
    write_csv(&rows)
}

fn cmd_gapstudy(args: GapArgs) -> Result<()> {
    let rows = studies::gap_study(&GapStudyConfig {
        lambdas: args.lambdas,
        n: args.n,
        depth: args.depth,
        instances: args.instances,
        seed: args.seed,
    })?;
    write_csv(&rows)
}

fn cmd_gradcheck(args: GradArgs) -> Result<()> {
    let config = GradcheckConfig {
        trials: args.trials,
        seed: args.seed,
        ..GradcheckConfig::default()
    };
    let reports = gradcheck::run_all(&config)?;
    let mut failure = None;
    for r in &reports {
        let relation = if r.passed { "<" } else { ">=" };
        print_stdout(&format!(
            "{}: max_rel_err {relation} {:e} (observed {:.3e}; {} trials, {} resampled)",
            r.name, r.tolerance, r.max_rel_err, r.trials, r.resampled
        ))?;
        if !r.passed && failure.is_none() {
            let at = r.worst.as_ref().map_or(String::new(), |w| {
                format!(
                    " at trial {} {}: analytic {:e}, numeric {:e}",
                    w.trial, w.coordinate, w.analytic, w.numeric
                )
            });
            failure = Some(format!("{} gradient check failed{at}", r.name));
        }
    }
    match failure {
        Some(message) => Err(Error::Numeric(message)),
        None => Ok(()),
    }
}
