use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stablespike::data::SynthParams;
use stablespike::experiment::AblationAxis;
use stablespike_cli::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_inspect, cmd_sweep_t, cmd_train, parse_list, set_synth, RunConfig,
};

#[derive(Parser)]
#[command(name = "stablespike", version, about = "Train and inspect spiking networks with temporal consistency losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines with `[section]` headers.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set data.dir=DIR`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Shorthand for `--set run.out=DIR`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(d) = &self.data {
            overrides.push(format!("data.dir={}", d.display()));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("run.out={}", o.display()));
        }
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes config, metrics, report and checkpoints to run.out.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every variant of one config axis and print an accuracy table.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// bitop, noise or consistency_fn.
        #[arg(long)]
        axis: String,
        /// Comma-separated training seeds (default: the config seed).
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Write a synthetic moving-bar event dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override a generator parameter, e.g. `train_count=40` or `travel=6..14`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Paired baseline/method trainings for each number of timesteps.
    #[command(name = "sweep-t")]
    SweepT {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated timestep counts.
        #[arg(long = "t", default_value = "2,4")]
        ts: String,
        /// Repetitions per T; repetition r uses seed + r.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Firing-rate, energy and variance report for a checkpoint.
    Inspect {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for PGM dumps of spike maps and their skeletons.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Number of test samples to dump.
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let report = cmd_train(&c.resolve()?)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Eval { cfg, checkpoint } => {
            println!("{}", serde_json::to_string(&cmd_eval(&cfg.resolve()?, &checkpoint)?)?);
        }
        Command::Ablate { cfg, axis, seeds } => {
            let rc = cfg.resolve()?;
            let axis: AblationAxis = axis.parse()?;
            let seeds = match seeds {
                Some(s) => parse_list(&s)?,
                None => vec![rc.train.seed],
            };
            cmd_ablate(&rc, axis, &seeds)?;
        }
        Command::GenData { out, seed, overrides } => {
            let mut p = SynthParams::default();
            for o in &overrides {
                let (k, v) = stablespike::config::parse_override(o)?;
                set_synth(&mut p, &k, &v)?;
            }
            cmd_gen_data(&out, seed, &p)?;
        }
        Command::SweepT { cfg, ts, repeats } => {
            cmd_sweep_t(&cfg.resolve()?, &parse_list(&ts)?, repeats)?;
        }
        Command::Inspect {
            cfg,
            checkpoint,
            dump,
            samples,
        } => {
            let report = cmd_inspect(&cfg.resolve()?, &checkpoint, dump.as_deref(), samples)?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
