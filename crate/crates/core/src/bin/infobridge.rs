use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use infobridge::cli::{cmd_compensator, cmd_convergence, cmd_simulate, cmd_survival, exit_code, EXIT_CONFIG};
use infobridge::config::RunConfig;

#[derive(Parser)]
#[command(name = "infobridge", version, about = "Simulate a Brownian bridge of random length and verify its default compensator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Law of the default time, e.g. `exp:1` or `gamma:2,1`.
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated paths to paths.csv.
    Simulate(Common),
    /// Write the conditional survival curve given beta_t = x.
    Survival {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: f64,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
    },
    /// Run the compensator ensemble and its gates.
    Compensator {
        #[command(flatten)]
        common: Common,
        /// Replace K by zero (negative control).
        #[arg(long = "zero-k")]
        zero_k: bool,
    },
    /// Study K^h -> K along the configured lags.
    Convergence(Common),
}

fn load(c: &Common) -> infobridge::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &c.dist {
        cfg.dist = v.clone();
    }
    if let Some(v) = c.paths {
        cfg.paths = v;
    }
    if let Some(v) = c.dt {
        cfg.dt = v;
    }
    if let Some(v) = c.t_max {
        cfg.t_max = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(c) => load(c).and_then(|cfg| cmd_simulate(&cfg)),
        Command::Survival { common, t, x } => load(common).and_then(|cfg| cmd_survival(&cfg, *t, *x)),
        Command::Compensator { common, zero_k } => load(common).and_then(|mut cfg| {
            cfg.zero_k |= *zero_k;
            cmd_compensator(&cfg)
        }),
        Command::Convergence(c) => load(c).and_then(|cfg| cmd_convergence(&cfg)),
    };
    if let Err(e) = &outcome {
        eprintln!("infobridge: {e}");
    }
    ExitCode::from(exit_code(&outcome) as u8)
}
