//! Run-directory bookkeeping shared by every command that produces outputs.
//!
//! Each run directory carries enough to re-issue the run bit-for-bit: the
//! resolved config snapshot (seed included) and the binary version. Nothing
//! here records wall-clock time, so identical invocations produce identical
//! directories.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline; key order follows the struct, so
/// repeated runs serialize byte-identically.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &format!("{body}\n"))
}

/// Refuses to write into a directory that already has entries unless the
/// caller forces it; protects prior outputs from silent interleaving.
pub fn guard_out_dir(path: &Path, force: bool) -> Result<(), CliError> {
    if !force && path.is_dir() {
        let mut entries = fs::read_dir(path).map_err(|e| CliError::io(path, e))?;
        if entries.next().is_some() {
            return Err(CliError::Refused(format!(
                "output directory {} is not empty; pass --force to overwrite",
                path.display()
            )));
        }
    }
    create_dir(path)
}
