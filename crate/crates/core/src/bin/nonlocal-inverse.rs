use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonlocal_inverse::config::Scenario;
use nonlocal_inverse::pipeline::{self, Setup};
use nonlocal_inverse::Error;

#[derive(Parser, Debug)]
#[command(name = "nonlocal-inverse", version, about = "Nonlocal diffusion forward and inverse solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML). Defaults to the built-in standard scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Overrides `output` in the scenario.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides `seed` in the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Forward trajectory for the scenario source.
    Forward,
    /// Adjoint trajectory driven by the sensor, with time moments.
    Adjoint,
    /// Synthetic flux measurements for each basis source.
    Measure,
    /// Measurements followed by reconstruction of q.
    Invert,
    /// Identity, duality and maximum-principle checks.
    Verify,
    /// Comparison against the fractional Laplacian.
    LimitCheck,
}

fn is_validation(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::InvalidDomain(_)
            | Error::InvalidKernel(_)
            | Error::InvalidFractional(_)
            | Error::InvalidSensor(_)
            | Error::InvalidSource(_)
            | Error::NegativeCoefficient { .. }
            | Error::EmptyAccessible
    )
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut scenario = match &cli.config {
        Some(p) => Scenario::from_path(p)?,
        None => Scenario::standard(),
    };
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    let out = cli.out.clone().or_else(|| scenario.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let output = match cli.command {
        Command::LimitCheck => {
            scenario.limit.validate()?;
            pipeline::run_limit(&scenario, &out)?.0
        }
        cmd => {
            let setup = Setup::new(&scenario)?;
            match cmd {
                Command::Forward => pipeline::run_forward(&setup, &out)?,
                Command::Adjoint => pipeline::run_adjoint(&setup, &out)?,
                Command::Measure => pipeline::run_measure(&setup, &out)?,
                Command::Invert => pipeline::run_invert(&setup, &out)?.0,
                Command::Verify => {
                    let (output, checks) = pipeline::run_verify(&setup, &out)?;
                    for c in &checks {
                        println!("{:<28} {:<8} {:>12.3e}  {}", c.name, c.status.as_str(), c.value, c.note);
                    }
                    output
                }
                Command::LimitCheck => unreachable!(),
            }
        }
    };
    println!("{}", output.summary);
    for f in &output.files {
        println!("  wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
