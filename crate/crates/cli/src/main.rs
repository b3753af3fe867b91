use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod settings;

#[derive(Parser, Debug)]
#[command(name = "concern-dp", version, about = "Personality-adaptive privacy budgets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random stream of the command (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat key=value file overriding defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $CONCERNDP_OUT_DIR, else ./out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ResourceArgs {
    /// Word vectors, one `token v1 … v300` per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Topic features CSV (user_id, lsi_*, lda_*).
    #[arg(long)]
    pub topics: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train one model on an 80/20 split and report metrics.
    Train(TrainArgs),
    /// Run budget controllers against each other.
    Simulate(SimulateArgs),
    /// Oversample the concern labels and report class counts.
    Smote(SmoteArgs),
    /// Gold concern score and label from trait scores or a dataset.
    Score(ScoreArgs),
    /// Empirical differential-privacy check of a counting mechanism.
    VerifyDp(VerifyDpArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub statuses: Option<usize>,
    /// Users per label as LoPC,MePC,HiPC.
    #[arg(long)]
    pub counts: Option<String>,
    /// Leave the network columns empty.
    #[arg(long)]
    pub no_network: bool,
    /// Also write synthetic word vectors and topic features.
    #[arg(long)]
    pub resources: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArg {
    Lr,
    Svr,
    Mlp,
    Nb,
    Svm,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Training fraction.
    #[arg(long)]
    pub split: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskArg {
    Cls,
    Reg,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated: global, random, gold, lr, svr, mlp.
    #[arg(long, default_value = "global,random,gold")]
    pub controllers: String,
    /// Directory holding lr.json, svr.json, mlp.json from `train`.
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SmoteArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: Common,
    /// Five scores in NEU,OPN,CON,AGR,EXT order.
    #[arg(long)]
    pub scores: Option<String>,
    /// Five yes/no labels in NEU,OPN,CON,AGR,EXT order.
    #[arg(long)]
    pub labels: Option<String>,
    /// Score every user of a dataset instead.
    #[arg(long, conflicts_with_all = ["scores", "labels"])]
    pub data: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismArg {
    Laplace,
    Noiseless,
}

#[derive(Args, Debug)]
pub struct VerifyDpArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "laplace")]
    pub mechanism: MechanismArg,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Smote(a) => commands::smote(a),
        Command::Score(a) => commands::score(a),
        Command::VerifyDp(a) => commands::verify_dp(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
