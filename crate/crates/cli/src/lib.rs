//! Command-line front end: argument definitions and the subcommand bodies
//! behind the `pgp` binary.

pub mod args;
pub mod commands;

use pgp_core::{ErrorKind, PgpError};

pub use args::Cli;
pub use commands::run;

/// Process exit status for a failed command: 2 configuration, 3 data, 4 numerical.
pub fn exit_code(err: &PgpError) -> u8 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}
