//! File formats and the command-line front end for `lagnet-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{CliError, CliResult};

pub fn run(cli: cli::Cli) -> CliResult<()> {
    use cli::Command;
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::FieldAccel(a) => commands::field_accel(a),
    }
}
