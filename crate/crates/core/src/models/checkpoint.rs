//! Binary checkpoint: a magic line, the model spec as key-value text, then
//! every parameter and buffer as name, kind, shape and little-endian `f64`s.

use std::path::Path;

use super::model::Model;
use super::spec::ModelSpec;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::layers::ParamKind;
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"XRFCKPT1\n";

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("length fits u32").to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u64).to_le_bytes());
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut buf = MAGIC.to_vec();
    let header = model.spec.to_kv().render();
    put_u64(&mut buf, header.len());
    buf.extend_from_slice(header.as_bytes());
    put_u64(&mut buf, model.params.len());
    for (_, p) in model.params.iter() {
        put_u32(&mut buf, p.name.len());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(match p.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        put_u32(&mut buf, p.value.rank());
        for &d in p.value.shape() {
            put_u64(&mut buf, d);
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> std::result::Result<usize, String> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| format!("length {v} out of range"))
    }

    fn text(&mut self, n: usize) -> std::result::Result<&'a str, String> {
        std::str::from_utf8(self.take(n)?).map_err(|e| e.to_string())
    }
}

struct Entry {
    name: String,
    kind: ParamKind,
    value: Tensor,
}

fn parse(bytes: &[u8]) -> std::result::Result<(KeyValues, Vec<Entry>), String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC) {
        return Err("not an xrf checkpoint".into());
    }
    let header_len = r.u64()?;
    let header = KeyValues::parse(r.text(header_len)?).map_err(|e| e.to_string())?;
    let count = r.u64()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = r.text(name_len)?.to_owned();
        let kind = match r.take(1)?[0] {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            k => return Err(format!("parameter `{name}` has unknown kind {k}")),
        };
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or("shape overflow")?;
        let raw = r.take(n.checked_mul(8).ok_or("shape overflow")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let value = Tensor::new(shape, data).map_err(|e| format!("parameter `{name}`: {e}"))?;
        entries.push(Entry { name, kind, value });
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok((header, entries))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let (header, entries) = parse(bytes).map_err(bad)?;
    let spec = ModelSpec::from_kv(&header).map_err(|e| bad(e.to_string()))?;
    let mut model = Model::build(&spec)?;
    if entries.len() != model.params.len() {
        return Err(bad(format!(
            "checkpoint holds {} entries, {} model expects {}",
            entries.len(),
            spec.family,
            model.params.len()
        )));
    }
    for ((_, p), e) in model.params.iter_mut().zip(entries) {
        if p.name != e.name || p.kind != e.kind || p.value.shape() != e.value.shape() {
            return Err(bad(format!(
                "entry `{}` {:?} does not match model parameter `{}` {:?}",
                e.name,
                e.value.shape(),
                p.name,
                p.value.shape()
            )));
        }
        p.value = e.value;
    }
    Ok(model)
}

/// Writes `model` to `path` through a temporary file, so an interrupted
/// write never leaves a truncated checkpoint behind.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(model)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
