//! `delaynet` command-line tool.

mod commands;
mod error;
mod output;
mod sweep;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use delaynet::metrics::Buffering;

#[derive(Debug, Parser)]
#[command(name = "delaynet", version, about = "Spiking networks with learnable delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Flags every subcommand accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed override (model initialization, shuffling, data generation).
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file or directory; stdout when omitted (directory for `train`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Machine-readable output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Unshared,
    Shared,
    Both,
}

impl StrategyArg {
    pub fn strategies(self) -> Vec<Buffering> {
        match self {
            StrategyArg::Unshared => vec![Buffering::Unshared],
            StrategyArg::Shared => vec![Buffering::Shared],
            StrategyArg::Both => Buffering::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    #[value(name = "delay_range")]
    DelayRange,
    Sparsity,
    Regularization,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes model.json, metrics.csv and config.toml into --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training set (event file).
        #[arg(long)]
        data: PathBuf,
        /// Optional test set evaluated after every epoch.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with rounded delays.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Buffering strategy used for the reported buffer size.
        #[arg(long, value_enum, default_value_t = StrategyArg::Unshared)]
        strategy: StrategyArg,
    },
    /// Run the event-driven engine against the dense model and report occupancy.
    Events {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
        strategy: StrategyArg,
        /// Only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
        /// Write the last hidden layer's output spikes as an event file.
        #[arg(long)]
        spikes_out: Option<PathBuf>,
    },
    /// Analytic buffer-size and SOP table for every mechanism and strategy.
    Cost {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        d_max: Option<usize>,
        /// Neuron-state bits.
        #[arg(long, default_value_t = 16)]
        s: u32,
        /// Weight-value bits.
        #[arg(long, default_value_t = 16)]
        v: u32,
        /// Address bits; ceil(log2 H) when omitted.
        #[arg(long)]
        m: Option<u32>,
        #[arg(long, default_value_t = 1.0)]
        rho_n: f64,
        #[arg(long, default_value_t = 0.2)]
        rho_p: f64,
        /// Fraction of weights masked, for SOPs per spike.
        #[arg(long)]
        weight_sparsity: Option<f64>,
    },
    /// Train over a grid and aggregate accuracy, spikes and SOPs per cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Comma-separated values: d_max (delay_range), eta:kappa pairs
        /// (sparsity) or alpha_max (regularization).
        #[arg(long)]
        grid: String,
        /// Replicates per grid value.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Regularization strength for the regularization sweep.
        #[arg(long, default_value_t = 0.01)]
        reg_strength: f64,
        /// Training set; a synthetic task is generated per cell when omitted.
        #[arg(long, requires = "test")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 800)]
        train_samples: usize,
        #[arg(long, default_value_t = 400)]
        test_samples: usize,
    },
    /// Generate the synthetic delayed-pattern task as event files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        channels: usize,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, default_value_t = 6)]
        spikes_per_pattern: usize,
        #[arg(long, default_value_t = 12)]
        max_lag: usize,
        #[arg(long, default_value_t = 1)]
        jitter: usize,
        #[arg(long, default_value_t = 0.01)]
        noise_rate: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Also write this many further samples of the same task here.
        #[arg(long, requires = "test_samples")]
        test_out: Option<PathBuf>,
        #[arg(long, requires = "test_out")]
        test_samples: Option<usize>,
    },
}

fn dispatch(cmd: Command) -> error::CliResult {
    match cmd {
        Command::Train { common, data, test } => commands::train(&common, &data, test.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            data,
            strategy,
        } => commands::eval(&common, &checkpoint, &data, strategy),
        Command::Events {
            common,
            checkpoint,
            data,
            strategy,
            limit,
            spikes_out,
        } => commands::events(&common, &checkpoint, &data, strategy, limit, spikes_out.as_deref()),
        Command::Cost {
            common,
            layers,
            hidden,
            d_max,
            s,
            v,
            m,
            rho_n,
            rho_p,
            weight_sparsity,
        } => commands::cost(
            &common,
            commands::CostFlags {
                layers,
                hidden,
                d_max,
                s,
                v,
                m,
                rho_n,
                rho_p,
                weight_sparsity,
            },
        ),
        Command::Sweep {
            common,
            kind,
            grid,
            seeds,
            reg_strength,
            data,
            test,
            train_samples,
            test_samples,
        } => sweep::sweep(
            &common,
            &sweep::SweepArgs {
                kind,
                grid,
                seeds,
                reg_strength,
                data,
                test,
                train_samples,
                test_samples,
            },
        ),
        Command::GenData {
            common,
            classes,
            channels,
            steps,
            spikes_per_pattern,
            max_lag,
            jitter,
            noise_rate,
            samples,
            test_out,
            test_samples,
        } => {
            let spec = delaynet::data::SynthSpec {
                classes,
                channels,
                steps,
                spikes_per_pattern,
                max_lag,
                jitter,
                noise_rate,
                samples,
                seed: 0,
            };
            commands::gen_data(&common, spec, test_out.as_deref(), test_samples)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli.command) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
