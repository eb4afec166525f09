//! `KWSM` binary container for models, quantized models and profiles.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      4 bytes  "KWSM"
//! version    u32      1
//! arch tag   u16 length + UTF-8
//! dims       u32 count, then count × u32
//! metadata   u32 count, then per entry:
//!              key   u16 length + UTF-8
//!              value u32 length + UTF-8
//! blobs      u32 count, then per blob:
//!              name  u16 length + UTF-8
//!              type  u8 length + ASCII ("f64" or "q8")
//!              shape u32 rank, then rank × u32
//!              f64:  numel × f64
//!              q8:   scale f64, then numel × i8
//! ```
//!
//! Nothing may follow the last blob.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::encoder::{ArchConfig, Model, ParamStore};
use crate::error::{Error, Result};
use crate::ndmath::Tensor;
use crate::quant::QuantTensor;

pub const KWSM_MAGIC: &[u8; 4] = b"KWSM";
pub const KWSM_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Blob {
    F64(Tensor),
    Q8(QuantTensor),
}

impl Blob {
    pub fn type_tag(&self) -> &'static str {
        match self {
            Blob::F64(_) => "f64",
            Blob::Q8(_) => "q8",
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Blob::F64(t) => t.shape(),
            Blob::Q8(q) => q.shape(),
        }
    }

    /// Bytes of numeric payload (excluding name, tag and shape).
    pub fn payload_bytes(&self) -> usize {
        match self {
            Blob::F64(t) => 8 * t.numel(),
            Blob::Q8(q) => 8 + q.values().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub arch_tag: String,
    pub dims: Vec<u32>,
    pub meta: Vec<(String, String)>,
    pub blobs: Vec<(String, Blob)>,
}

fn fmt_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        module: "checkpoint",
        what,
        detail: detail.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| fmt_err("KWSM", format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn str(&mut self, len: usize, what: &str) -> Result<String> {
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| fmt_err("KWSM", format!("{what} is not UTF-8")))
    }
    /// A count whose elements take at least `min_each` bytes; rejects
    /// counts the remaining input cannot hold before anything is allocated.
    fn count(&mut self, min_each: usize, what: &str) -> Result<usize> {
        let n = self.u32(what)? as usize;
        if n.saturating_mul(min_each) > self.remaining() {
            return Err(fmt_err("KWSM", format!("{what} {n} exceeds remaining input")));
        }
        Ok(n)
    }
}

fn put_str16(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    let n = u16::try_from(s.len()).map_err(|_| fmt_err("KWSM", format!("{what} longer than 65535 bytes")))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| fmt_err("KWSM", format!("{what} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Container {
    pub fn new(arch_tag: impl Into<String>, dims: Vec<u32>) -> Self {
        Self {
            arch_tag: arch_tag.into(),
            dims,
            ..Self::default()
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.set_meta(key, value);
        self
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn payload_bytes(&self) -> usize {
        self.blobs.iter().map(|(_, b)| b.payload_bytes()).sum()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64 + self.payload_bytes());
        out.extend_from_slice(KWSM_MAGIC);
        out.extend_from_slice(&KWSM_VERSION.to_le_bytes());
        put_str16(&mut out, &self.arch_tag, "arch tag")?;
        put_u32(&mut out, self.dims.len(), "dim count")?;
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_u32(&mut out, self.meta.len(), "metadata count")?;
        for (k, v) in &self.meta {
            put_str16(&mut out, k, "metadata key")?;
            put_u32(&mut out, v.len(), "metadata value length")?;
            out.extend_from_slice(v.as_bytes());
        }
        put_u32(&mut out, self.blobs.len(), "blob count")?;
        for (name, blob) in &self.blobs {
            put_str16(&mut out, name, "blob name")?;
            let tag = blob.type_tag();
            out.push(tag.len() as u8);
            out.extend_from_slice(tag.as_bytes());
            put_u32(&mut out, blob.shape().len(), "rank")?;
            for d in blob.shape() {
                put_u32(&mut out, *d, "dimension")?;
            }
            match blob {
                Blob::F64(t) => {
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Blob::Q8(q) => {
                    out.extend_from_slice(&q.scale().to_le_bytes());
                    out.extend(q.values().iter().map(|v| *v as u8));
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != KWSM_MAGIC {
            return Err(fmt_err("KWSM", "bad magic"));
        }
        let version = r.u32("version")?;
        if version != KWSM_VERSION {
            return Err(fmt_err("KWSM", format!("unsupported version {version}")));
        }
        let n = r.u16("arch tag")? as usize;
        let arch_tag = r.str(n, "arch tag")?;
        let nd = r.count(4, "dim count")?;
        let dims = (0..nd).map(|_| r.u32("dim")).collect::<Result<Vec<_>>>()?;
        let nm = r.count(6, "metadata count")?;
        let mut meta = Vec::with_capacity(nm);
        for _ in 0..nm {
            let kl = r.u16("metadata key")? as usize;
            let k = r.str(kl, "metadata key")?;
            let vl = r.u32("metadata value")? as usize;
            let v = r.str(vl, "metadata value")?;
            meta.push((k, v));
        }
        let nb = r.count(7, "blob count")?;
        let mut blobs: Vec<(String, Blob)> = Vec::with_capacity(nb);
        for _ in 0..nb {
            let nl = r.u16("blob name")? as usize;
            let name = r.str(nl, "blob name")?;
            if blobs.iter().any(|(n, _)| *n == name) {
                return Err(fmt_err("KWSM", format!("duplicate blob '{name}'")));
            }
            let tl = r.u8("blob type")? as usize;
            let tag = r.str(tl, "blob type")?;
            let rank = r.u32("rank")? as usize;
            if rank > MAX_RANK {
                return Err(fmt_err("KWSM", format!("blob '{name}' has rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .ok_or_else(|| fmt_err("KWSM", format!("blob '{name}' shape overflows")))?;
            let blob = match tag.as_str() {
                "f64" => {
                    if numel.saturating_mul(8) > r.remaining() {
                        return Err(fmt_err("KWSM", format!("blob '{name}' truncated")));
                    }
                    let data = r
                        .take(numel * 8, "f64 payload")?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect::<Vec<_>>();
                    if data.iter().any(|v| !v.is_finite()) {
                        return Err(fmt_err("KWSM", format!("blob '{name}' holds non-finite values")));
                    }
                    Blob::F64(Tensor::new(shape, data)?)
                }
                "q8" => {
                    let scale = r.f64("q8 scale")?;
                    let values: Vec<i8> = r.take(numel, "q8 payload")?.iter().map(|b| *b as i8).collect();
                    Blob::Q8(
                        QuantTensor::from_parts(values, scale, shape)
                            .map_err(|e| fmt_err("KWSM", format!("blob '{name}': {e}")))?,
                    )
                }
                other => return Err(fmt_err("KWSM", format!("blob '{name}' has unknown type '{other}'"))),
            };
            blobs.push((name, blob));
        }
        if r.remaining() != 0 {
            return Err(fmt_err("KWSM", format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            arch_tag,
            dims,
            meta,
            blobs,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the encoded container, hex.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.encode()?)))
    }
}

/// Float checkpoint of a model.
pub fn model_to_container(model: &Model) -> Container {
    let arch = model.arch();
    Container {
        arch_tag: arch.tag().to_string(),
        dims: arch.dims(),
        meta: vec![("kind".into(), "model".into())],
        blobs: model
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), Blob::F64(t.clone())))
            .collect(),
    }
}

/// Rebuilds a float model; every blob must be `f64` and match the layout.
pub fn model_from_container(c: &Container) -> Result<Model> {
    let arch = ArchConfig::from_tag(&c.arch_tag, &c.dims)?;
    let entries = c
        .blobs
        .iter()
        .map(|(n, b)| match b {
            Blob::F64(t) => Ok((n.clone(), t.clone())),
            Blob::Q8(_) => Err(Error::integrity(
                "checkpoint",
                format!("blob '{n}' is quantized; load it as a quantized model"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    Model::from_params(arch, ParamStore::new(entries))
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    model_to_container(model).write(path)
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_container(&Container::read(path)?)
}

/// Checksum identifying a model's weights.
pub fn model_checksum(model: &Model) -> Result<String> {
    model_to_container(model).checksum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, LstmConfig};

    fn sample() -> Container {
        Container::new("lstm", vec![40, 8, 1, 4])
            .with_meta("kind", "test")
            .with_meta("note", "é")
    }

    #[test]
    fn round_trip_with_both_blob_types() {
        let mut c = sample();
        c.blobs.push(("w".into(), Blob::F64(Tensor::matrix(2, 2, vec![1.0, -2.5, 0.0, 3.25]).unwrap())));
        c.blobs.push((
            "q".into(),
            Blob::Q8(QuantTensor::from_parts(vec![1, -127, 0], 0.5, vec![3]).unwrap()),
        ));
        let bytes = c.encode().unwrap();
        assert_eq!(&bytes[..4], b"KWSM");
        assert_eq!(Container::decode(&bytes).unwrap(), c);
        assert_eq!(c.payload_bytes(), 32 + 8 + 3);
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut c = sample();
        c.blobs.push(("w".into(), Blob::F64(Tensor::vector(vec![1.0, 2.0]))));
        let bytes = c.encode().unwrap();
        for cut in 0..bytes.len() {
            assert!(Container::decode(&bytes[..cut]).is_err(), "prefix {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::decode(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::decode(&bad).is_err());
        let mut huge = b"KWSM".to_vec();
        huge.extend_from_slice(&1u32.to_le_bytes());
        huge.extend_from_slice(&0u16.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(Container::decode(&huge), Err(Error::Format { .. })));
    }

    #[test]
    fn model_round_trip_and_checksum() {
        let m = init_params(&ArchConfig::Lstm(LstmConfig { hidden_dim: 8, embedding_dim: 4, ..Default::default() }), 3)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kwsm");
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_checksum(&back).unwrap(), model_checksum(&m).unwrap());
        let other = init_params(m.arch(), 4).unwrap();
        assert_ne!(model_checksum(&other).unwrap(), model_checksum(&m).unwrap());

        let mut c = model_to_container(&m);
        c.blobs.pop();
        assert!(matches!(model_from_container(&c), Err(Error::Integrity { .. })));
    }
}
