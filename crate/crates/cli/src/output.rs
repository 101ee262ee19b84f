//! Artifact writing. JSON files are `{"meta": ..., "result": ...}` envelopes;
//! CSV files start with one `#` comment line carrying the same metadata.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub version: String,
    pub config_sha256: String,
    pub model_fingerprint: String,
    pub seed: u64,
    pub command: String,
}

impl Meta {
    pub fn header_line(&self) -> String {
        format!(
            "# fixtail {} command={} config_sha256={} model={} seed={}\n",
            self.version, self.command, self.config_sha256, self.model_fingerprint, self.seed
        )
    }
}

#[derive(Serialize, Deserialize)]
pub struct Envelope<T> {
    pub meta: Meta,
    pub result: T,
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, result: &T) -> Result<(), CliError> {
    let env = Envelope {
        meta: meta.clone(),
        result,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(fixtail::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(fixtail::Error::from)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Envelope<T>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Prepends the metadata line to a CSV file written by the library.
pub fn stamp_csv(path: &Path, meta: &Meta) -> Result<(), CliError> {
    let body = fs::read_to_string(path).map_err(fixtail::Error::from)?;
    fs::write(path, meta.header_line() + &body).map_err(fixtail::Error::from)?;
    Ok(())
}

/// Writes a stamped CSV from a header and preformatted rows.
pub fn write_csv(
    path: &Path,
    meta: &Meta,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut text = meta.header_line();
    text.push_str(&header.join(","));
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(fixtail::Error::from)?;
    Ok(())
}
