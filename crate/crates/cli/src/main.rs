//! `ldarm`: train the planner, executor and projector, evaluate the
//! pipelines, and write diagnostic and repetition reports.
//!
//! Exit codes: 0 success, 2 configuration, contract or data error,
//! 3 non-finite loss.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldarm::config::ExperimentConfig;
use ldarm::diagnostics::render_table;
use ldarm::run::{self, ProjectorOptions, Setup};
use ldarm::Error;

#[derive(Parser)]
#[command(name = "ldarm", version, about = "Diffusion planner / autoregressive executor experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the diffusion planner.
    TrainPlanner(ConfigArg),
    /// Train the autoregressive executor.
    TrainExecutor(ConfigArg),
    /// Train the projector between the frozen planner and executor.
    TrainProjector {
        #[command(flatten)]
        config: ConfigArg,
        /// Continue from the state in projector.ckpt.
        #[arg(long)]
        resume: bool,
        /// Save and exit after this many optimizer steps in total.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Run every configured pipeline over the test split.
    Eval(ConfigArg),
    /// Attribute DDLM→ARM failures to planning or execution.
    Diagnose(ConfigArg),
    /// Repetition metrics of a corpus, one document per line.
    Metrics {
        corpus: PathBuf,
        /// n-gram size for lexical repetition.
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Write <OUT>.jsonl and <OUT>.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// train-planner, train-executor, train-projector, eval, diagnose.
    Reproduce(ConfigArg),
}

#[derive(clap::Args)]
struct ConfigArg {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set seed=2` or
    /// `--set train.projector.lr=1e-3`. Relative paths still resolve
    /// against the configuration file's directory.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArg {
    fn setup(&self) -> ldarm::Result<Setup> {
        Setup::new(ExperimentConfig::load_with(&self.config, &self.overrides)?)
    }
}

fn log(line: &str) {
    eprintln!("{line}");
}

fn train_projector(setup: &Setup, opts: ProjectorOptions) -> ldarm::Result<()> {
    let s = run::cmd_train_projector(setup, opts, &mut log)?;
    println!(
        "projector: {} steps, {}; frozen planner {} executor {}",
        s.steps,
        if s.complete { "complete" } else { "stopped early" },
        s.planner_hash.1,
        s.executor_hash.1
    );
    Ok(())
}

fn eval(setup: &Setup) -> ldarm::Result<()> {
    let out = run::cmd_eval(setup, &mut log)?;
    print!("{}", out.table.render());
    Ok(())
}

fn diagnose(setup: &Setup) -> ldarm::Result<()> {
    print!("{}", render_table(&run::cmd_diagnose(setup)?));
    Ok(())
}

fn dispatch(cmd: Command) -> ldarm::Result<()> {
    match cmd {
        Command::TrainPlanner(c) => {
            let s = run::cmd_train_planner(&c.setup()?, &mut log)?;
            println!("wrote {}", s.checkpoint.display());
        }
        Command::TrainExecutor(c) => {
            let s = run::cmd_train_executor(&c.setup()?, &mut log)?;
            println!("wrote {}", s.checkpoint.display());
        }
        Command::TrainProjector {
            config,
            resume,
            stop_after,
        } => train_projector(&config.setup()?, ProjectorOptions { resume, stop_after })?,
        Command::Eval(c) => eval(&c.setup()?)?,
        Command::Diagnose(c) => diagnose(&c.setup()?)?,
        Command::Metrics { corpus, n, out } => {
            let r = run::cmd_metrics(&corpus, n, out.as_deref())?;
            print!("{}", r.render(&corpus.display().to_string()));
        }
        Command::Reproduce(c) => {
            let setup = c.setup()?;
            run::cmd_train_planner(&setup, &mut log)?;
            run::cmd_train_executor(&setup, &mut log)?;
            train_projector(&setup, ProjectorOptions::default())?;
            eval(&setup)?;
            diagnose(&setup)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
