//! Self-describing snapshot container.
//!
//! Layout: an 8-byte magic, a little-endian u64 header length, a JSON
//! header (format version, caller metadata, array index), then the raw
//! array data as little-endian f64 in index order. Values are stored in
//! f64 regardless of the training precision, which round-trips f32
//! parameters bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scalar};

const MAGIC: &[u8; 8] = b"SADPT\0v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

/// One named array in a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Decoded snapshot: caller metadata plus named arrays.
#[derive(Debug, Clone)]
pub struct RawSnapshot {
    pub meta: serde_json::Value,
    pub arrays: Vec<SnapshotArray>,
}

impl RawSnapshot {
    pub fn array(&self, name: &str) -> Option<&SnapshotArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Copy parameter values back into a store built from the same specs.
    /// Arrays are matched by name with prefix `prefix.`; shape differences
    /// are spec mismatches.
    pub fn load_into_store<A: Scalar>(&self, store: &mut ParamStore<A>) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let arr = self.array(&name).ok_or_else(|| {
                Error::SpecMismatch(format!("snapshot is missing parameter `{name}`"))
            })?;
            if arr.shape != store.value(id).shape() {
                return Err(Error::SpecMismatch(format!(
                    "parameter `{name}`: snapshot shape {:?} vs model shape {:?}",
                    arr.shape,
                    store.value(id).shape()
                )));
            }
            for (dst, src) in store.value_mut(id).iter_mut().zip(&arr.data) {
                *dst = A::from_f64(*src);
            }
        }
        Ok(())
    }
}

/// Flatten a parameter store into snapshot arrays.
pub fn store_arrays<A: Scalar>(store: &ParamStore<A>) -> Vec<SnapshotArray> {
    store
        .iter()
        .map(|(_, name, value)| SnapshotArray {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            data: value.iter().map(|v| v.to_f64().unwrap()).collect(),
        })
        .collect()
}

pub fn write_snapshot(path: &Path, meta: &serde_json::Value, arrays: &[SnapshotArray]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let header = Header {
        format_version: 1,
        meta: meta.clone(),
        arrays: arrays
            .iter()
            .map(|a| ArrayEntry { name: a.name.clone(), shape: a.shape.clone() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    // write to a temp file then rename so a crash cannot leave a torn snapshot
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        for arr in arrays {
            let expect: usize = arr.shape.iter().product();
            assert_eq!(expect, arr.data.len(), "array {} length mismatch", arr.name);
            for v in &arr.data {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<RawSnapshot> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)
        .map_err(|_| Error::Validation(format!("{}: truncated snapshot", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Validation(format!("{}: not a snapshot file", path.display())));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)
        .map_err(|_| Error::Validation(format!("{}: truncated header", path.display())))?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format_version != 1 {
        return Err(Error::Validation(format!(
            "unsupported snapshot format version {}",
            header.format_version
        )));
    }
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in header.arrays {
        let len: usize = entry.shape.iter().product();
        let mut data = vec![0f64; len];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            f.read_exact(&mut buf).map_err(|_| {
                Error::Validation(format!(
                    "{}: truncated data for array `{}`",
                    path.display(),
                    entry.name
                ))
            })?;
            *v = f64::from_le_bytes(buf);
        }
        arrays.push(SnapshotArray { name: entry.name, shape: entry.shape, data });
    }
    Ok(RawSnapshot { meta: header.meta, arrays })
}
