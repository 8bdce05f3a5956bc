use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memaudit::{Error, ExperimentConfig, Run};

#[derive(Parser)]
#[command(name = "memaudit", version, about = "Shadow-fleet membership inference and memorization audits")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for fleet training, querying and attacks.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding all artifacts.
    #[arg(long, global = true, default_value = "memaudit-out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or import) the dataset.
    GenData,
    /// Draw the membership matrix and train the shadow fleet.
    TrainShadows,
    /// Query every model on every sample.
    Query,
    /// Score the target models with the configured attacks.
    Attack,
    /// Per-sample memorization scores and the fleet generalization gap.
    Mem,
    /// Tables, bin analyses and plots; other run directories join the tables.
    Report {
        #[arg(long = "compare", value_name = "DIR")]
        compare: Vec<PathBuf>,
    },
    /// Clean and PGD accuracy of the target models on their held-out samples.
    Robustness,
    /// Every stage whose inputs changed, then the report.
    Run {
        #[arg(long = "compare", value_name = "DIR")]
        compare: Vec<PathBuf>,
    },
}

fn execute(cli: Cli) -> memaudit::Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    let run = Run::new(cfg, cli.global.out_dir, cli.global.jobs);
    match cli.command {
        Command::GenData => run.gen_data(),
        Command::TrainShadows => run.train_shadows(),
        Command::Query => run.query(),
        Command::Attack => run.attack(),
        Command::Mem => run.mem(),
        Command::Report { compare } => run.report(&compare),
        Command::Robustness => run.robustness(),
        Command::Run { compare } => run.run_all(&compare),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memaudit: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
