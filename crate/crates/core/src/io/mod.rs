//! Files: dataset CSVs, JSON documents, prediction records and the binary
//! posterior archive.

mod archive;
mod tables;

pub use archive::{archive_from_bytes, archive_to_bytes, read_archive, write_archive, ArchiveManifest, FORMAT_VERSION, MAGIC};
pub use tables::{
    read_dataset, read_eval_records, write_dataset, write_eval_records, COVARIATES_FILE, LONGITUDINAL_FILE,
    SURVIVAL_FILE,
};

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}
