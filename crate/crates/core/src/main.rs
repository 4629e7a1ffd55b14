use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mobidfl::harness::{self, ExperimentConfig, SweepParam};
use mobidfl::mobility::MobilityMode;

#[derive(Parser)]
#[command(
    name = "mobidfl",
    version,
    about = "Decentralized federated learning with mobile clients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured Monte Carlo suite and write CSV/SVG artifacts.
    Run(Common),
    /// Record one traced trial and check it against the consensus theory.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Trial index to record.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Run the built-in oracle checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the mobility mode and drops any mode sweep.
    #[arg(long)]
    mode: Option<MobilityMode>,
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => harness::load_config(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mobility.mode = m;
            cfg.sweep.retain(|a| a.param != SweepParam::Mode);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config()?;
            let report = harness::run_suite(&cfg, &common.out)?;
            print!("{}", harness::suite::comparison_text(&report.comparison));
            let failures: Vec<_> = report.failures().collect();
            for f in &failures {
                eprintln!("failed: point {} ({}) trial {}: {}", f.point, f.label, f.trial, f.error);
            }
            if !failures.is_empty() {
                eprintln!("failure list: {}", common.out.join("failures.csv").display());
            }
            Ok(failures.is_empty())
        }
        Command::Analyze { common, trial } => {
            let cfg = common.config()?;
            let report = harness::analyze(&cfg, trial, &common.out)?;
            print!("{}", report.summary());
            Ok(report.all_pass())
        }
        Command::Check { seed } => {
            let report = harness::self_check(seed)?;
            print!("{}", report.summary());
            Ok(report.all_pass())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
