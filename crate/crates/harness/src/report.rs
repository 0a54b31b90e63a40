use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::HarnessError;

/// Canonical JSON, or indented JSON with `pretty`.
pub fn to_json<T: Serialize>(value: &T, pretty: bool) -> Result<String, HarnessError> {
    if pretty {
        serde_json::to_string_pretty(value).map_err(|e| HarnessError::Setup(e.to_string()))
    } else {
        aegis_core::canonical::to_canonical_string(value)
            .map_err(|e| HarnessError::Setup(e.to_string()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = to_json(value, pretty)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
