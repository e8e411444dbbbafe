use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use pcosync::metrics::{sweep_gain, write_gain_csv, GainMode};
use pcosync::runner;
use pcosync::scenario::Scenario;

#[derive(Parser)]
#[command(
    version,
    about = "Pulse-coupled oscillator vs timestamp broadcast sync simulator"
)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics and summary CSVs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tabulate the nearest-neighbour vs broadcast pathloss gain.
    SweepGain {
        #[arg(long, default_value_t = 10)]
        n_min: u64,
        #[arg(long, default_value_t = 10_000)]
        n_max: u64,
        #[arg(long, default_value_t = 10)]
        n_step: u64,
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        delta: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "per-transmission")]
        mode: Vec<GainMode>,
        #[arg(long, default_value_t = 1e6)]
        area_m2: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file and print its normalized form.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            scenario,
            out_dir,
            seed,
        } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let rows = runner::run(&s, &out_dir)?;
            if !cli.quiet {
                runner::print_summary(&rows, io::stdout().lock())?;
            }
        }
        Command::SweepGain {
            n_min,
            n_max,
            n_step,
            delta,
            mode,
            area_m2,
            out,
        } => {
            if n_min == 0 || n_max < n_min || n_step == 0 {
                return Err("need 1 <= n_min <= n_max and n_step >= 1".into());
            }
            let ns: Vec<u64> = (n_min..=n_max).step_by(n_step as usize).collect();
            let rows = sweep_gain(&ns, &delta, &mode, area_m2);
            match out {
                Some(path) => write_gain_csv(&rows, std::fs::File::create(path)?)?,
                None => write_gain_csv(&rows, io::stdout().lock())?,
            }
        }
        Command::Validate { scenario } => {
            let s = Scenario::load(&scenario)?;
            if !cli.quiet {
                print!("{}", s.to_toml_string());
            }
        }
    }
    Ok(())
}
