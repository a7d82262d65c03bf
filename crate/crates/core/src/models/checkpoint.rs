//! Binary checkpoint: `AUXTSCKP`, a little-endian u32 format version, a
//! little-endian u64 header length, a JSON header, then every parameter value
//! as a little-endian f64. A `<file>.manifest` text file lists each
//! parameter's byte offset and shape.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EncoderConfig;
use crate::autodiff::{ParamGroup, ParamRegistry, ParamVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AUXTSCKP";
const VERSION: u32 = 1;

/// Saved model state: encoder (+ heads) parameters, optionally the weighting model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    /// Encoder parameters and any head parameters, with their groups.
    pub params: ParamVector,
    pub weighting: Option<ParamVector>,
    pub fingerprint: String,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    fingerprint: String,
    step: u64,
    model: Vec<EntryHeader>,
    weighting: Option<Vec<EntryHeader>>,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
    group: ParamGroup,
}

fn entries(p: &ParamVector) -> Vec<EntryHeader> {
    p.layout()
        .entries()
        .iter()
        .map(|e| EntryHeader {
            name: e.name.clone(),
            shape: e.shape.clone(),
            group: e.group,
        })
        .collect()
}

fn rebuild(entries: &[EntryHeader], values: &[f64]) -> Result<ParamVector> {
    let mut reg = ParamRegistry::new();
    let mut at = 0;
    for e in entries {
        let n: usize = e.shape.iter().product();
        let chunk = values
            .get(at..at + n)
            .ok_or_else(|| Error::Format("checkpoint payload is truncated".into()))?;
        reg.register(e.name.clone(), &e.shape, e.group, chunk.to_vec())?;
        at += n;
    }
    Ok(reg.freeze())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

impl Checkpoint {
    /// Serializes to bytes; equal checkpoints always give equal bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let all = self
            .params
            .values()
            .iter()
            .chain(self.weighting.iter().flat_map(|w| w.values()));
        for v in all {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let header = Header {
            encoder: self.encoder.clone(),
            fingerprint: self.fingerprint.clone(),
            step: self.step,
            model: entries(&self.params),
            weighting: self.weighting.as_ref().map(entries),
            sha256: hex(&Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("not a checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).unwrap_or_default();
        if body.len() < hlen {
            return Err(bad("header is truncated"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        if hex(&Sha256::digest(payload)) != header.sha256 {
            return Err(Error::Format("checkpoint payload checksum mismatch".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = rebuild(&header.model, &values)?;
        let used = params.len();
        let weighting = match &header.weighting {
            Some(e) => Some(rebuild(e, &values[used..])?),
            None => None,
        };
        let total = used + weighting.as_ref().map_or(0, |w| w.len());
        if total != values.len() {
            return Err(bad("payload has trailing values"));
        }
        Ok(Self {
            encoder: header.encoder,
            params,
            weighting,
            fingerprint: header.fingerprint,
            step: header.step,
        })
    }

    /// Lines of `name<TAB>byte_offset<TAB>shape`, offsets counted from the start of the file.
    pub fn manifest(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let base = 20 + hlen;
        let mut out = format!("# encoder={} fingerprint={} step={}\n", self.encoder.kind, self.fingerprint, self.step);
        let mut write_part = |p: &ParamVector, start: usize| {
            for e in p.layout().entries() {
                let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
                let _ = writeln!(out, "{}\t{}\t{}", e.name, base + 8 * (start + e.offset), dims.join("x"));
            }
        };
        write_part(&self.params, 0);
        if let Some(w) = &self.weighting {
            write_part(w, self.params.len());
        }
        Ok(out)
    }

    /// Writes the checkpoint and its manifest next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        fs::write(&mpath, self.manifest()?).map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
