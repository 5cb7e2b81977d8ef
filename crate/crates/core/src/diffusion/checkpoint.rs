//! `DIIPCKPT1` weight files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DIIPCKPT1" version
//! meta_count  { key_len key value_len value }*      UTF-8 strings
//! array_count { name_len name rank dim* }*          manifest
//! f32 payloads in manifest order
//! ```
//!
//! Schedule parameters live in the metadata block so a model is never paired
//! with the wrong schedule.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

const MAGIC: &[u8; 9] = b"DIIPCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        let a = Self {
            name: name.into(),
            dims,
            data,
        };
        debug_assert_eq!(a.dims.iter().product::<usize>(), a.data.len());
        a
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    version: u32,
    meta: BTreeMap<String, String>,
    arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(schedule: &NoiseSchedule, arrays: Vec<NamedArray>) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("schedule.steps".into(), schedule.steps().to_string());
        meta.insert("schedule.beta_start".into(), format!("{:?}", schedule.beta_start()));
        meta.insert("schedule.beta_end".into(), format!("{:?}", schedule.beta_end()));
        Self {
            version: FORMAT_VERSION,
            meta,
            arrays,
        }
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn kind(&self) -> Option<&str> {
        self.meta("kind")
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format {
                kind: "checkpoint",
                reason: format!("missing array {name:?}"),
            })
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key).ok_or_else(|| Error::Format {
            kind: "checkpoint",
            reason: format!("missing metadata {key:?}"),
        })?;
        raw.parse().map_err(|_| Error::Format {
            kind: "checkpoint",
            reason: format!("metadata {key:?} has unparsable value {raw:?}"),
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(
            self.meta_parse("schedule.steps")?,
            self.meta_parse("schedule.beta_start")?,
            self.meta_parse("schedule.beta_end")?,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.version);
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.arrays.len() as u32);
        for a in &self.arrays {
            put_str(&mut out, &a.name);
            put_u32(&mut out, a.dims.len() as u32);
            for &d in &a.dims {
                put_u32(&mut out, d as u32);
            }
        }
        for a in &self.arrays {
            for &v in &a.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format_err(&format!("unsupported version {version}")));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            manifest.push((name, dims));
        }
        let mut arrays = Vec::with_capacity(count);
        for (name, dims) in manifest {
            let n: usize = dims.iter().product();
            let raw = r.take(n * 4).map_err(|_| {
                format_err(&format!("payload for {name:?} shorter than its shape {dims:?}"))
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            arrays.push(NamedArray { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(format_err("trailing bytes after payloads"));
        }
        Ok(Self {
            version,
            meta,
            arrays,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn format_err(reason: &str) -> Error {
    Error::Format {
        kind: "checkpoint",
        reason: reason.to_string(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err("string is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(
            &NoiseSchedule::default(),
            vec![
                NamedArray::new("a", vec![2, 3], vec![0.5, 1.0, -2.0, 0.25, 3.0, 4.0]),
                NamedArray::new("b.bias", vec![1], vec![7.0]),
            ],
        );
        c.set_meta("dataset", "gmm-toy");
        c
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..9], b"DIIPCKPT1");
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), FORMAT_VERSION);
    }

    #[test]
    fn round_trip_preserves_schedule_and_arrays() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.schedule().unwrap(), NoiseSchedule::default());
        assert_eq!(back.meta("dataset"), Some("gmm-toy"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT1").is_err());
    }
}
