use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stap_hmm::base_measure::BaseMeasureMode;
use stap_hmm::cli::{cmd_compare, cmd_fit, cmd_simulate, cmd_summarize, Overrides};
use stap_hmm::error::Result;
use stap_hmm::io::RunConfig;

#[derive(Parser)]
#[command(name = "stap-hmm", version, about = "Behavior segmentation of animal tracks with a sticky HDP-HMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the config
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<BaseMeasureMode>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler and store the draws
    Fit(Common),
    /// Simulate tracks from a truth file
    Simulate {
        /// Simulation truth (TOML)
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sim")]
        out: PathBuf,
    },
    /// Posterior tables from stored draws
    Summarize(Common),
    /// Fit each base-measure mode and tabulate ICL / DIC
    Compare {
        #[command(flatten)]
        common: Common,
        /// Modes to compare
        #[arg(long, value_parser = parse_mode, value_delimiter = ',', default_value = "m1,m2,m3")]
        modes: Vec<BaseMeasureMode>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<BaseMeasureMode, String> {
    BaseMeasureMode::parse(s).ok_or_else(|| format!("unknown mode {s:?}; expected m1, m2 or m3"))
}

fn load(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    Overrides { seed: c.seed, out: c.out.clone(), mode: c.mode, threads: c.threads }.apply(&mut cfg);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(c) => {
            let out = cmd_fit(&load(&c)?)?;
            eprintln!("draws written to {}", out.join("draws").display());
        }
        Command::Simulate { config, seed, out } => cmd_simulate(&config, seed, &out)?,
        Command::Summarize(c) => {
            let out = cmd_summarize(&load(&c)?)?;
            eprintln!("tables written to {}", out.display());
        }
        Command::Compare { common, modes } => {
            let mut cfg = load(&common)?;
            cfg.mcmc.threads = common.threads;
            println!("mode,icl,dic5,dic7");
            for r in cmd_compare(&cfg, &modes)? {
                println!("{},{:.3},{:.3},{:.3}", r.mode.name(), r.icl, r.dic5, r.dic7);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
