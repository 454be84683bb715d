//! The `.jma` posterior archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"JMA\0"
//! u32    format version
//! u64    metadata length, then that many bytes of JSON
//! u64    rows (draws), u64 columns, then rows*columns f64, column-major
//! u64    rows, u64 columns, then the subject random effects, column-major
//! ```
//!
//! The metadata holds the model, priors, sampler settings, parameter column
//! names, training subject ids and diagnostics. Nothing time-dependent is
//! stored, so identical fits produce identical files.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::archive::PosteriorArchive;
use crate::inference::diagnostics::Diagnostics;
use crate::inference::priors::PriorSpec;
use crate::inference::sampler::ChainConfig;
use crate::model::params::ParameterDraw;
use crate::model::spec::ModelSpec;

pub const MAGIC: &[u8; 4] = b"JMA\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    spec: ModelSpec,
    spec_hash: String,
    priors: PriorSpec,
    config: ChainConfig,
    draws_per_chain: usize,
    columns: Vec<String>,
    subject_ids: Vec<String>,
    diagnostics: Diagnostics,
}

fn write_matrix(out: &mut Vec<u8>, rows: &[Vec<f64>], cols: usize) {
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for j in 0..cols {
        for r in rows {
            out.extend_from_slice(&r[j].to_le_bytes());
        }
    }
}

pub fn archive_to_bytes(archive: &PosteriorArchive) -> Result<Vec<u8>> {
    let spec = &archive.spec;
    let meta = Metadata {
        spec: spec.clone(),
        spec_hash: spec.hash(),
        priors: archive.priors.clone(),
        config: archive.config.clone(),
        draws_per_chain: archive.draws_per_chain,
        columns: ParameterDraw::column_names(spec),
        subject_ids: archive.subject_ids.clone(),
        diagnostics: archive.diagnostics.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let rows: Vec<Vec<f64>> = archive.draws.iter().map(|d| d.to_columns(spec)).collect();
    write_matrix(&mut out, &rows, meta.columns.len());
    let width = archive.subject_effects.first().map_or(0, Vec::len);
    write_matrix(&mut out, &archive.subject_effects, width);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Archive("file is truncated".into()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self) -> Result<Vec<Vec<f64>>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8));
        let blob = self.take(n.ok_or_else(|| Error::Archive("matrix size overflows".into()))?)?;
        let mut out = vec![vec![0.0; cols]; rows];
        for (k, chunk) in blob.chunks_exact(8).enumerate() {
            out[k % rows.max(1)][k / rows.max(1)] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(out)
    }
}

pub fn archive_from_bytes(bytes: &[u8]) -> Result<PosteriorArchive> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Archive("not a posterior archive (bad magic)".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Archive(format!("unsupported archive version {version}")));
    }
    let len = c.u64()? as usize;
    let meta: Metadata = serde_json::from_slice(c.take(len)?)?;
    if meta.spec.hash() != meta.spec_hash {
        return Err(Error::Archive("model hash does not match the stored model".into()));
    }
    if meta.columns != ParameterDraw::column_names(&meta.spec) {
        return Err(Error::Archive("parameter columns do not match the model".into()));
    }
    let draws = c
        .matrix()?
        .iter()
        .map(|row| ParameterDraw::from_columns(&meta.spec, row))
        .collect::<Result<Vec<_>>>()?;
    let subject_effects = c.matrix()?;
    if c.pos != bytes.len() {
        return Err(Error::Archive("trailing bytes after the archive".into()));
    }
    let archive = PosteriorArchive {
        spec: meta.spec,
        priors: meta.priors,
        config: meta.config,
        draws,
        draws_per_chain: meta.draws_per_chain,
        subject_ids: meta.subject_ids,
        subject_effects,
        diagnostics: meta.diagnostics,
    };
    archive.validate()?;
    Ok(archive)
}

pub fn write_archive(path: &Path, archive: &PosteriorArchive) -> Result<()> {
    let bytes = archive_to_bytes(archive)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<PosteriorArchive> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    archive_from_bytes(&bytes)
}

/// What the service lists about each stored archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    /// File stem of the archive inside the store.
    pub id: String,
    pub spec_hash: String,
    /// File modification time, seconds since the Unix epoch.
    pub created: Option<u64>,
    pub n_draws: usize,
    /// Seed the archive was fitted with.
    pub seed: u64,
    #[serde(with = "optional_float")]
    pub max_rhat: f64,
    #[serde(with = "optional_float")]
    pub min_acceptance: f64,
    #[serde(with = "optional_float")]
    pub max_acceptance: f64,
}

impl ArchiveManifest {
    pub fn new(id: &str, archive: &PosteriorArchive, created: Option<u64>) -> Self {
        let (lo, hi) = archive.diagnostics.acceptance_range();
        Self {
            id: id.into(),
            spec_hash: archive.spec.hash(),
            created,
            n_draws: archive.len(),
            seed: archive.config.seed,
            max_rhat: archive.diagnostics.max_rhat(),
            min_acceptance: lo,
            max_acceptance: hi,
        }
    }

    /// Manifest of the archive file at `path`, with the file's mtime.
    pub fn for_file(path: &Path, archive: &PosteriorArchive) -> Self {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let created = std::fs::metadata(path)
            .and_then(|m| m.modified())
            .ok()
            .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
            .map(|d| d.as_secs());
        Self::new(id, archive, created)
    }
}

/// Non-finite summaries (no acceptance data, infinite R̂) become `null`.
mod optional_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
