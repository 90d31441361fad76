//! Shared helpers for the CSV and JSON artifacts.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// 17 significant digits: enough to round-trip any `f64` and byte-stable.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_f64(field: &str, column: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::invalid(format!("column `{column}`: cannot parse `{field}`")))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}
