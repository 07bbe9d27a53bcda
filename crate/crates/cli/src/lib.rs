//! The `hava` command line: synthetic data, two-stage training, inference
//! to per-frame OBJ files, evaluation and pose augmentation.

pub mod cli;
pub mod commands;
pub mod error;
pub mod pipeline;
pub mod settings;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub use error::{CliError, Result};
pub use pipeline::{infer_sequence, InferOptions, InferOutput, PoseSource};
pub use settings::{desk_settings, Settings};

use cli::{Cli, Command};

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hava: error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Synth(a) => commands::synth(a, config),
        Command::Train(a) => commands::train(a, config),
        Command::Infer(a) => commands::infer(a, config),
        Command::Eval(a) => commands::eval(a),
        Command::Augment(a) => commands::augment(a),
    }
}

/// Keeps large tape buffers on the heap between steps instead of
/// returning them to the kernel after every allocation cycle.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 512 << 20);
    }
}
