pub mod evaluate;
pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod phantom;

use crate::error::CliError;
use l1dfl_core::volgrid::{read_vvol, VolumeGrid};
use serde::de::DeserializeOwned;
use std::path::Path;

/// Reads a JSON config; syntax and schema errors map to exit code 2.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))
}

pub fn read_volume(path: &Path) -> Result<VolumeGrid, CliError> {
    read_vvol(path).map_err(|e| (path.to_path_buf(), e).into())
}
