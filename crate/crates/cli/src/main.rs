use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyslab_cli::{self as cli, CliError, Overrides};

#[derive(Parser)]
#[command(name = "polyslab", version, about = "Steady polyatomic Boltzmann slab solver and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the boundary value problem by Picard iteration.
    Solve(Common),
    /// Run the verification suite and write a JSON report.
    Verify(Common),
    /// Measure contraction ratios over a list of ε values.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the quadrature seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated ε values, overriding `eps_list`.
    #[arg(long)]
    eps_list: Option<String>,
    /// Worker threads for the rayon pool.
    #[arg(long, env = "POLYSLAB_THREADS")]
    threads: Option<usize>,
}

fn run(cli: Cli) -> Result<cli::Outcome, CliError> {
    let (Command::Solve(c) | Command::Verify(c) | Command::Sweep(c)) = &cli.command;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let eps_list = c.eps_list.as_deref().map(cli::parse_eps_list).transpose().map_err(CliError::Config)?;
    let ov = Overrides { seed: c.seed, out: c.out.clone(), eps_list };
    let cfg = cli::load_config(c.config.as_deref(), &ov)?;
    match cli.command {
        Command::Solve(_) => cli::run_solve(&cfg),
        Command::Verify(_) => cli::run_verify(&cfg),
        Command::Sweep(_) => cli::run_sweep(&cfg),
    }
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(parsed) {
        Ok(o) => {
            print!("{}", o.summary);
            println!("artifacts in {}", o.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
