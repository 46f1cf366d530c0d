use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use byzsim_core::aggregators::AggregatorKind;
use byzsim_core::bucketing;
use byzsim_core::certify::{certify_aggregator, CertifyConfig};
use byzsim_core::harness::{self, ExperimentConfig, RunOutcome, PRESET_NAMES};
use byzsim_core::Error;

/// Simulator for distributed SGD with Byzantine workers.
#[derive(Parser)]
#[command(name = "byzsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment config, writing a metrics CSV and JSON sidecar per seed.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config's, then $BYZSIM_OUT, then ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value` overrides, e.g. `attack=ipm attack.epsilon=0.2`.
        overrides: Vec<String>,
    },
    /// Run a named experiment set, or print its configs with --list.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace each cell's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the expanded configs as TOML without running them.
        #[arg(long)]
        list: bool,
    },
    /// Monte-Carlo check of an aggregator's robustness constants.
    CertifyAggregator {
        #[arg(long)]
        aggregator: AggregatorKind,
        /// Bucket size; defaults to the largest size the breakdown point allows.
        #[arg(long)]
        s: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 20)]
        workers: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate how bucketing shrinks the spread of i.i.d. unit-variance inputs.
    Lemma1 {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0.125)]
        delta: f64,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    /// Bad or unreadable config: exit 2 with usage.
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Run(other),
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("error: {e}"),
    }
}

fn report_runs(outcomes: &[RunOutcome], out: &std::path::Path) {
    for o in outcomes {
        let s = &o.summary;
        let acc = s
            .mean_accuracy
            .map_or("-".to_string(), |a| format!("{a:.4}"));
        let loss = s.final_loss.map_or("-".to_string(), |l| format!("{l:.6e}"));
        let status = match s.diverged_at {
            Some(t) => format!("diverged at step {t}"),
            None => "ok".to_string(),
        };
        println!(
            "{} seed={} id={} loss={loss} acc={acc} {status}",
            s.name, s.seed, s.run_id
        );
    }
    println!("wrote {} run(s) to {}", outcomes.len(), out.display());
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            overrides,
        } => {
            if !config.is_file() {
                return Err(Failure::Usage(format!(
                    "config file {} not found",
                    config.display()
                )));
            }
            let mut cfg = ExperimentConfig::load(&config)?.with_overrides(&overrides)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let dir = harness::resolve_out_dir(out.as_deref(), &cfg);
            let outcomes = harness::run_experiment(&cfg, &dir)?;
            report_runs(&outcomes, &dir);
            if outcomes.iter().any(|o| o.summary.diverged_at.is_some()) {
                return Err(Failure::Run(Error::InvalidParameter(
                    "at least one run diverged; partial metrics were written".into(),
                )));
            }
        }
        Command::Preset {
            name,
            out,
            seed,
            list,
        } => {
            if list {
                let mut stdout = std::io::stdout().lock();
                for c in harness::preset(&name)? {
                    // a closed pipe just ends the listing
                    if writeln!(stdout, "# --- {}\n{}", c.name, c.to_toml()?).is_err() {
                        break;
                    }
                }
                return Ok(());
            }
            let dir = out
                .or_else(|| std::env::var_os(harness::OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(&name);
            let seeds = seed.map(|s| vec![s]);
            let outcomes = harness::run_preset(&name, &dir, seeds.as_deref())?;
            report_runs(&outcomes, &dir);
        }
        Command::CertifyAggregator {
            aggregator,
            s,
            delta,
            workers,
            dim,
            trials,
            seed,
        } => {
            let report = certify_aggregator(&CertifyConfig {
                aggregator,
                bucket_size: s,
                delta,
                workers,
                dim,
                trials,
                seed,
                ..CertifyConfig::default()
            })?;
            print_json(&report);
            if !report.passed {
                return Err(Failure::Run(Error::InvalidParameter(format!(
                    "mean error {:.4e} exceeds bound {:.4e}",
                    report.mean_error, report.bound
                ))));
            }
        }
        Command::Lemma1 {
            n,
            s,
            trials,
            delta,
            dim,
            seed,
        } => {
            let report = bucketing::lemma1_gaussian(n, s, delta, dim, trials, seed)?;
            print_json(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_help());
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
