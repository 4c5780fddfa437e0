use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use parakam::config::ExperimentKind;
use parakam::harness::{self, RunOptions};

#[derive(Parser)]
#[command(name = "parakam", version, about = "Para-differential conjugacy experiments on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Circle map conjugate to a rotation.
    Circle(RunArgs),
    /// Invariant torus of a nearly integrable Hamiltonian.
    Torus(RunArgs),
    /// Slope fits of the operator estimates.
    ValidateOps(RunArgs),
    /// Diophantine constant of a frequency over a range of box sizes.
    Diophantine(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON); repeat with --batch.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed of the randomized probes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run all configs concurrently, each into <out>/<config stem>.
    #[arg(long)]
    batch: bool,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Circle(a) => (ExperimentKind::Circle, a),
        Command::Torus(a) => (ExperimentKind::Torus, a),
        Command::ValidateOps(a) => (ExperimentKind::ValidateOps, a),
        Command::Diophantine(a) => (ExperimentKind::Diophantine, a),
    };
    let outcomes = if args.batch {
        harness::run_batch(&args.config, kind, &args.out, args.seed)
    } else {
        if args.config.len() > 1 {
            eprintln!("error: several configs given without --batch");
            std::process::exit(harness::EXIT_CONFIG);
        }
        let opts = RunOptions {
            out: args.out.clone(),
            seed: args.seed,
        };
        vec![harness::run_file(&args.config[0], kind, &opts)]
    };
    let mut code = harness::EXIT_OK;
    for o in &outcomes {
        match &o.message {
            Some(m) => eprintln!("{}: {m}", o.out.display()),
            None => println!("{}: ok", o.out.display()),
        }
        code = code.max(o.exit_code);
    }
    std::process::exit(code);
}
