//! File formats, config parsing and the command implementations behind the
//! `cofidec` binary.
//!
//! Every format is line-oriented text. Blank lines and lines starting with `#`
//! are ignored on input. Floats are written with 17 significant digits so that
//! parsing a written value gives back the same bits.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod formats;

pub use commands::{cmd_barycenter, cmd_bench, cmd_decode, cmd_fuse_replay, cmd_views, BarycenterArgs, DecodeArgs, InputSource, ViewsArgs};
pub use config::{parse_config, parse_experiment, parse_report, render_experiment, write_config, write_experiment, write_report, Report, RunConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Decode(#[from] crate::decoding::DecodeError),
    #[error(transparent)]
    Bench(#[from] crate::bench::BenchError),
    #[error(transparent)]
    Ot(#[from] crate::ot::OtError),
    #[error(transparent)]
    Views(#[from] crate::views::ViewError),
    #[error(transparent)]
    Model(#[from] crate::scene_models::ModelError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Reads a file and parses it, tagging errors with the path.
pub fn read_with<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T, FormatError>) -> CliResult<T> {
    let text = read_text(path)?;
    parse(&text).map_err(|source| CliError::Format { path: path.to_path_buf(), source })
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes every file or none: each goes to a temporary sibling first, and the
/// renames happen only once all temporaries exist. Anything already renamed
/// is removed if a later step fails.
pub fn write_all(outputs: &[(PathBuf, String)]) -> CliResult<()> {
    let mut temps = Vec::with_capacity(outputs.len());
    let cleanup = |temps: &[PathBuf]| {
        for t in temps {
            let _ = fs::remove_file(t);
        }
    };
    for (path, text) in outputs {
        let tmp = temp_path(path);
        if let Err(source) = fs::write(&tmp, text) {
            cleanup(&temps);
            let _ = fs::remove_file(&tmp);
            return Err(CliError::Io { path: path.clone(), source });
        }
        temps.push(tmp);
    }
    for (i, ((path, _), tmp)) in outputs.iter().zip(&temps).enumerate() {
        if let Err(source) = fs::rename(tmp, path) {
            cleanup(&temps[i..]);
            for (done, _) in &outputs[..i] {
                let _ = fs::remove_file(done);
            }
            return Err(CliError::Io { path: path.clone(), source });
        }
    }
    Ok(())
}
