//! Subcommands behind the `gprd` binary.
//!
//! Scan files use the GPRB1 container and are named `<stem>_<role>.gprb`,
//! where the role is `raw`, `bg` (clutter only), `gt` (clutter free) or a
//! method name for processed output.

use std::fmt;

pub mod args;
mod declutter;
mod evaluate;
pub mod files;
mod hybridize;
mod scoring;
mod simulate;
mod train;

pub use args::{Cli, Command};
pub use scoring::{score, ScanScore};

/// Bad flags or inconsistent inputs; the binary exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Hybridize(a) => hybridize::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Declutter(a) => declutter::run(&a),
        Command::Evaluate(a) => evaluate::run(&a),
    }
}

/// 2 for usage errors and invalid arguments, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let invalid = err.chain().any(|e| {
        e.is::<UsageError>() || matches!(e.downcast_ref::<gprd_core::Error>(), Some(gprd_core::Error::InvalidArgument(_)))
    });
    if invalid {
        2
    } else {
        1
    }
}
