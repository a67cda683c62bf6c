//! File formats shared by every command.

pub mod binary;
mod matrix;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use matrix::{
    decode_binary, encode_binary, read_matrix, sidecar_path, write_matrix, LabeledMatrix,
    MatrixFormat, MATRIX_MAGIC, MATRIX_VERSION,
};

use crate::error::{Error, Result};

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
