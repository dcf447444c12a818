use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use logcl_cli::render::{self, Format};
use logcl_cli::{run, Scenario};
use logcl_core::{layout_of, locate_bucket, plan_repack, SampleId};

#[derive(Parser)]
#[command(name = "logcl", version, about = "Logarithmic generative-rehearsal scheduler simulator")]
struct Cli {
    /// Output format for the inspection subcommands.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics, histograms and a manifest.
    Run {
        /// Scenario TOML file.
        #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
        scenario: Option<PathBuf>,
        /// Built-in scenario name (extreme100, extreme100_noisy).
        #[arg(long)]
        builtin: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Bucket layout after `n` samples.
    Layout { n: u64 },
    /// Repack plan when `delta` samples arrive on top of `n`.
    Plan { n: u64, delta: u64 },
    /// Bucket holding sample `id` among `n`.
    Locate { n: u64, id: u64 },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            builtin,
            out,
            seed,
        } => {
            let mut scenario = match (scenario, builtin) {
                (Some(path), _) => Scenario::load(&path)?,
                (None, Some(name)) => Scenario::builtin(&name)?,
                (None, None) => bail!("give --scenario or --builtin"),
            };
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            let output = run(&scenario)?;
            output.write_to(&out)?;
            for sys in &output.systems {
                let last = sys.rows.last().expect("scenarios have tasks");
                eprintln!(
                    "{}: {} tasks, {} samples, memory {}, max replays {}, mean error {}",
                    sys.kind.as_str(),
                    sys.rows.len(),
                    last.total_samples,
                    last.memory_units,
                    last.max_replay_count,
                    last.mean_error
                );
            }
        }
        Command::Layout { n } => println!("{}", render::layout(&layout_of(n), cli.format)),
        Command::Plan { n, delta } => {
            println!("{}", render::plan(&plan_repack(n, delta)?, cli.format))
        }
        Command::Locate { n, id } => {
            let bucket = locate_bucket(&layout_of(n), SampleId(id))?;
            println!("{}", render::locate(n, SampleId(id), bucket, cli.format));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
