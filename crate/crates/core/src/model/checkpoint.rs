//! Checkpoint container.
//!
//! ```text
//! magic        8 bytes   "UCLFCKPT"
//! version      u32 LE    currently 1
//! header_len   u32 LE
//! header       header_len bytes of UTF-8 JSON: spec, prune history, tensor shapes
//! payload      per parameter in canonical order: value then sparsity mask,
//!              each as little-endian f32
//! ```
//!
//! Optimizer moments and gradients are not stored.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::param::Parameter;
use crate::tensor::Tensor;

use super::spec::NetworkSpec;
use super::state::ModelState;

pub const MAGIC: &[u8; 8] = b"UCLFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    prune_history: Vec<String>,
    shapes: Vec<[usize; 4]>,
}

pub fn encode(model: &ModelState) -> Vec<u8> {
    let header = Header {
        spec: model.spec.clone(),
        prune_history: model.prune_history.clone(),
        shapes: model.params.iter().map(Parameter::shape).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let payload: usize = model.params.iter().map(|p| p.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + header.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in &model.params {
        for t in [&p.value, &p.sparsity_mask] {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(FormatError::Truncated {
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelState> {
    let prefix = bytes.len().min(MAGIC.len());
    if bytes[..prefix] != MAGIC[..prefix] {
        return Err(FormatError::BadMagic.into());
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(MAGIC.len())?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| FormatError::Header(e.to_string()))?;
    header
        .spec
        .validate()
        .map_err(|e| FormatError::Header(e.to_string()))?;

    let mut params = Vec::with_capacity(header.shapes.len());
    for shape in &header.shapes {
        let n: usize = shape.iter().product();
        let value = Tensor::from_vec(*shape, r.f32s(n)?)?;
        let mask = Tensor::from_vec(*shape, r.f32s(n)?)?;
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(FormatError::Header("sparsity mask entries must be 0 or 1".into()).into());
        }
        let mut p = Parameter::new(value);
        p.sparsity_mask = mask;
        params.push(p);
    }
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(FormatError::TrailingBytes(rest).into());
    }
    let model = ModelState {
        spec: header.spec,
        params,
        prune_history: header.prune_history,
    };
    model
        .check_invariants()
        .map_err(|e| FormatError::Header(e.to_string()))?;
    Ok(model)
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelState {
        let mut m = ModelState::build_default_uclf(0.1, 5).unwrap();
        m.params[4].sparsity_mask.data_mut()[0] = 0.0;
        m.params[4].apply_mask();
        m.prune_history.push("sweep-1".into());
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.spec, m.spec);
        assert_eq!(back.prune_history, m.prune_history);
        for (a, b) in back.params.iter().zip(&m.params) {
            assert_eq!(a.value, b.value);
            assert_eq!(a.sparsity_mask, b.sparsity_mask);
        }
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&model());
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        assert!(matches!(
            decode(&bad_magic),
            Err(Error::Format(FormatError::BadMagic))
        ));

        let mut bad_version = bytes.clone();
        bad_version[8] = 9;
        assert!(matches!(
            decode(&bad_version),
            Err(Error::Format(FormatError::UnsupportedVersion(9)))
        ));

        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        assert!(matches!(
            decode(&bytes[..5]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            decode(&extra),
            Err(Error::Format(FormatError::TrailingBytes(1)))
        ));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let m = model();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.count_parameters(), m.count_parameters());
        let leftovers: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(leftovers.len(), 1);
    }
}
