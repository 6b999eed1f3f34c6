//! Library side of the `ilicast` binary: configuration and the four commands.

pub mod commands;
pub mod config;

use ilicast::Error;

pub use commands::{cmd_evaluate, cmd_forecast, cmd_gradcheck, cmd_train};
pub use config::{Loaded, Overrides, RunConfig};

pub const EXIT_GRADCHECK_FAILED: u8 = 1;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFiniteLoss { .. } => 3,
        Error::Io { .. } => 4,
        Error::Checkpoint(_) => 5,
        _ => 2,
    }
}
