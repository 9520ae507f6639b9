//! `poold-sim`: experiment runner for the pool load-balancing simulator.

mod common;
mod couple;
mod limits;
mod loss;
mod settings;
mod simulate;
mod sweep;

use std::process::ExitCode;

use anyhow::Result;
use clap::Command;

use settings::{command, Key, Settings};

type Runner = fn(&Settings) -> Result<bool>;

const SUBCOMMANDS: &[(&str, &str, &[Key], Runner)] = &[
    ("simulate", "simulate one system; writes trajectory.csv, steady.csv, meta.txt", simulate::KEYS, simulate::run),
    ("couple", "run two policies under the T-coupling; writes coupled.csv, checks.csv, meta.txt", couple::KEYS, couple::run),
    ("limits", "fluid, OU and reflected paths, or diffusion rescaling of a trajectory", limits::KEYS, limits::run),
    ("loss", "long-run loss against the Erlang bounds; writes loss.csv, meta.txt", loss::KEYS, loss::run),
    ("sweep", "one metric over an N-grid or d-grid; writes sweep.csv, meta.txt", sweep::KEYS, sweep::run),
];

fn cli() -> Command {
    let mut cli = Command::new("poold-sim")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Power-of-d load balancing over N server pools")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, keys, _) in SUBCOMMANDS {
        cli = cli.subcommand(command(name, about, keys));
    }
    cli
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let (_, _, keys, run) = SUBCOMMANDS.iter().find(|c| c.0 == name).expect("registered subcommand");
    let outcome = Settings::resolve(name, keys, sub, None).and_then(|s| run(&s));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("poold-sim {name}: a runtime check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("poold-sim {name}: error: {e:#}");
            ExitCode::from(2)
        }
    }
}
