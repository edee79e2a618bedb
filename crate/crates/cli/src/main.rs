use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedcbo_core::baselines::Protocol;
use fedcbo_core::harness::{self, ExperimentConfig};
use fedcbo_core::Error;

/// Simulator for clustered consensus-based optimization and FedCBO.
#[derive(Parser)]
#[command(name = "fedcbo", version)]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to `output.dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured protocols and write metrics, summary and manifest.
    Run {
        #[command(flatten)]
        common: Common,
        /// Protocol to run, overriding `output.protocols`.
        #[arg(long)]
        protocol: Option<Protocol>,
    },
    /// Run several protocols at equal compute and tabulate final accuracy.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Protocols to compare (repeatable; default: all four).
        #[arg(long)]
        protocol: Vec<Protocol>,
    },
    /// Particle-system N-scaling scan against the largest N.
    ScanMeanfield {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the particle system and fit the variance decay rate.
    Sde {
        #[command(flatten)]
        common: Common,
    },
    /// Write every metric of a finished run directory as long-format CSV.
    PlotExport {
        /// Run directory containing manifest.json.
        run: PathBuf,
        /// Destination CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut config = ExperimentConfig::load(&common.config).map_err(|e| match e {
        Error::Io { .. } => Error::Config(vec![e.to_string()]),
        e => e,
    })?;
    if let Some(s) = common.seed {
        config.schedule.seeds = vec![s];
        config.scan.seeds = vec![s];
    }
    let out = common.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok((config, out))
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { common, protocol } => {
            let (mut config, out) = load(&common)?;
            if let Some(p) = protocol {
                config.output.protocols = vec![p];
            }
            let outcome = harness::run_experiment(&config, &out)?;
            for row in harness::summarize(&outcome.runs) {
                println!("{:<8} {:<16} {:>10.4} ± {:.4}", row.protocol, row.metric, row.mean, row.std);
            }
            println!("wrote {}", out.join("manifest.json").display());
        }
        Command::Compare { common, protocol } => {
            let (mut config, out) = load(&common)?;
            config.output.protocols = if protocol.is_empty() { Protocol::ALL.to_vec() } else { protocol };
            let (_, cmp) = harness::run_comparison(&config, &out)?;
            print!("{}", cmp.render());
            println!("wrote {}", out.join("comparison.csv").display());
        }
        Command::ScanMeanfield { common } => {
            let (config, out) = load(&common)?;
            let (_, scan) = harness::run_scan_experiment(&config, &out)?;
            for e in &scan.entries {
                println!("N={:<6} W1={:.5} ± {:.5}", e.n, e.mean, e.stderr);
            }
            println!("decreasing in N: {}", scan.decreasing);
        }
        Command::Sde { common } => {
            let (config, out) = load(&common)?;
            let (_, summaries) = harness::run_sde_experiment(&config, &out)?;
            for s in &summaries {
                println!(
                    "seed {:<4} fitted rate {:>8.4}  theory {:>8.4}  monotone {}  max |m-θ*| {:.2e}",
                    s.seed, s.fitted_rate, s.theoretical_rate, s.monotone, s.max_consensus_error
                );
            }
        }
        Command::PlotExport { run, out } => {
            let n = harness::plot_export(&run, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_divergence() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
