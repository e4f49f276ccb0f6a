use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use playsmooth::experiment::{compare, run_scenario, write_outputs, Relation};
use playsmooth::scenario::{preset_names, Scenario, KEYS};

/// Layered P2P streaming simulator: playout smoothing and chunk scheduling.
#[derive(Parser)]
#[command(name = "playsmooth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or bundled preset and write CSV tables.
    Run {
        /// Path to a `.scn` file or the name of a bundled preset.
        scenario: String,
        /// Run this seed only.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override a key, e.g. `--set overlay.peers=20`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Run only the named grid.
        #[arg(long)]
        grid: Option<String>,
        /// Ignore grids and run the base configuration.
        #[arg(long, conflicts_with = "grid")]
        no_grids: bool,
    },
    /// Check `A[metric] <relation> B[metric]` row by row.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        metric: String,
        /// One of lt, le, ge.
        #[arg(long)]
        relation: String,
    },
    /// List bundled presets.
    Presets,
    /// Print every scenario key with its default.
    Schema,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { scenario, seed, out, set, grid, no_grids } => {
            let mut s = Scenario::resolve(&scenario)?;
            if let Some(seed) = seed {
                s.set(&format!("seeds={seed}"))?;
            }
            for assignment in &set {
                s.set(assignment)?;
            }
            if no_grids {
                s.clear_grids();
            }
            if let Some(g) = grid {
                if !s.grids().iter().any(|x| x.name == g) {
                    bail!("scenario `{}` has no grid `{g}`", s.name());
                }
                s.retain_grid(&g);
            }
            let results = run_scenario(&s)?;
            let files = write_outputs(&s, &results, &out)?;
            println!("{}: {} runs, {} files in {}", s.name(), results.len(), files.len(), out.display());
            Ok(true)
        }
        Command::Compare { a, b, metric, relation } => {
            let relation: Relation = relation.parse()?;
            let ta = std::fs::read_to_string(&a).with_context(|| a.display().to_string())?;
            let tb = std::fs::read_to_string(&b).with_context(|| b.display().to_string())?;
            let c = compare(&ta, &tb, &metric, relation)?;
            for v in &c.violations {
                println!("row {} [{}]: {} vs {}", v.row, v.key, v.a, v.b);
            }
            let verdict = if c.passed() { "pass" } else { "fail" };
            println!("{verdict}: {} of {} rows satisfy {metric}", c.compared - c.violations.len(), c.compared);
            Ok(c.passed())
        }
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Schema => {
            for (key, default, doc) in KEYS {
                println!("{key} = {default}    # {doc}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
