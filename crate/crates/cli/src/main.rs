use std::path::PathBuf;
use std::process::ExitCode;

use cbatt_core::harness::{
    cmd_compare, cmd_gradcheck, cmd_synth, cmd_trace, cmd_train, HarnessError, RunConfig, TraceSource,
};
use clap::{Parser, Subcommand};

/// Community battery scheduling experiments.
#[derive(Debug, Parser)]
#[command(name = "cbatt", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic training and evaluation scenarios as CSV.
    Synth,
    /// Train every configured agent for every seed.
    Train,
    /// Evaluate baselines and trained agents on the held-out days.
    Compare,
    /// Export a one-day dispatch trace.
    Trace {
        /// `greedy`, `dp`, `mpc`, or a checkpoint file.
        #[arg(long, default_value = "greedy")]
        source: String,
        /// Day index within the evaluation scenario.
        #[arg(long, default_value_t = 0)]
        day: usize,
    },
    /// Check backpropagation against finite differences.
    Gradcheck {
        /// Number of random architectures.
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => {
            for p in cmd_synth(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train => {
            for run in cmd_train(&cfg)? {
                let last = run.curve.last().map_or(f64::NAN, |m| m.cum_reward);
                println!(
                    "{} seed {}: {} episodes, final reward {last:.3}, checkpoint {}",
                    run.kind.name(),
                    run.seed,
                    run.curve.len(),
                    run.checkpoint.display()
                );
            }
        }
        Command::Compare => {
            let report = cmd_compare(&cfg)?;
            print!("{}", report.to_table());
            println!("config {}; report in {}", report.config_hash, cfg.out_dir.display());
        }
        Command::Trace { source, day } => {
            let source: TraceSource = source.parse().expect("infallible");
            let (path, trace) = cmd_trace(&cfg, &source, *day)?;
            println!(
                "wrote {} ({} steps, cost {:.2})",
                path.display(),
                trace.rows.len(),
                trace.total_cost()
            );
        }
        Command::Gradcheck { count } => {
            let s = cmd_gradcheck(&cfg, *count)?;
            println!(
                "{} architectures, {} parameters, max relative error {:.3e} ({})",
                s.architectures,
                s.parameters_checked,
                s.max_rel_error,
                if s.passed { "pass" } else { "FAIL" }
            );
            if !s.passed {
                return Err(HarnessError::GradCheckFailed(s.max_rel_error));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
