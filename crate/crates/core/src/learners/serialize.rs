//! Versioned JSON envelopes for fitted models.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOB_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    model: T,
}

/// Serialise `model` under the format tag `format`.
pub fn to_blob<T: Serialize>(format: &str, model: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope { format: format.to_string(), version: BLOB_VERSION, model })?)
}

/// Parse a blob written by [`to_blob`], checking format tag and version.
pub fn from_blob<T: DeserializeOwned>(format: &str, text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format != format {
        return Err(Error::Format(format!("expected a '{format}' blob, found '{}'", env.format)));
    }
    if env.version != BLOB_VERSION {
        return Err(Error::Format(format!("unsupported blob version {}", env.version)));
    }
    Ok(env.model)
}
