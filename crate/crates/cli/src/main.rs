mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "sememnn", version, about = "Semantic-matrix memory network text classifier")]
struct Cli {
    /// Root seed; every random stream in the run is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Evaluation threads. Bit-exact reproducibility is only promised for 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenize CSV splits, build the vocabulary and write binary caches.
    Prepare(PrepareArgs),
    /// Train a model; settings come from --config plus --key value overrides.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a cached split.
    Eval(EvalArgs),
    /// Finite-difference check of every primitive and the toy-size model.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate the bag-of-words softmax baseline.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 2)]
    pub min_freq: usize,
    /// Vocabulary size including the pad and unk tokens.
    #[arg(long, default_value_t = 50_000)]
    pub max_vocab: usize,
    #[arg(long, default_value_t = 32)]
    pub abstract_len: usize,
    #[arg(long, default_value_t = 256)]
    pub content_len: usize,
    /// Also write a class-balanced subset of the training split.
    #[arg(long)]
    pub subset_per_class: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `--key value` pairs, e.g. `--classifier SAB --lr 0.001`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test_cache: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 12)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Shared embedding, memory and addressing width.
    #[arg(long, default_value_t = 4)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub units: usize,
    #[arg(long, default_value_t = 4)]
    pub attention_width: usize,
    #[arg(long, default_value_t = 5)]
    pub abstract_len: usize,
    #[arg(long, default_value_t = 6)]
    pub content_len: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Test hook: break the backward rule of one op (e.g. `relu`).
    #[arg(long)]
    pub corrupt: Option<String>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    pub train_cache: PathBuf,
    #[arg(long)]
    pub test_cache: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
}

pub struct Globals {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let globals = Globals { seed: cli.seed, out_dir: cli.out_dir, threads: cli.threads };
    if let Some(t) = globals.threads.filter(|&t| t > 1) {
        eprintln!("note: --threads {t}: evaluation is sharded across threads; bit-exact reproducibility is only guaranteed with --threads 1");
    }
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(&a, &globals),
        Command::Train(a) => commands::train(&a, &globals),
        Command::Eval(a) => commands::eval(&a, &globals),
        Command::Gradcheck(a) => commands::gradcheck(&a, &globals),
        Command::Baseline(a) => commands::baseline(&a, &globals),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
