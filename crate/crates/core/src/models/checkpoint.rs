//! Binary checkpoint: magic, architecture tag, config as key/value pairs,
//! then named tensors (name, rank, dims, little-endian f64 values). All
//! lengths and counts are little-endian u32, dims are u64.

use super::{ModelConfig, ModelParameters};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"IMPLAB01";

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::BadCheckpoint(format!("length {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_checkpoint<W: Write>(params: &ModelParameters, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    put_str(&mut out, params.architecture().as_str())?;
    let value = serde_json::to_value(&params.config)?;
    let fields: Vec<(&String, &serde_json::Value)> = value
        .as_object()
        .ok_or_else(|| Error::BadCheckpoint("config is not a record".into()))?
        .iter()
        .filter(|(k, _)| k.as_str() != "arch")
        .collect();
    put_u32(&mut out, fields.len())?;
    for (k, v) in fields {
        put_str(&mut out, k)?;
        put_str(&mut out, &v.to_string())?;
    }
    put_u32(&mut out, params.len())?;
    for (name, t) in params.iter() {
        put_str(&mut out, name)?;
        put_u32(&mut out, t.rank())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::BadCheckpoint("truncated file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.bytes(8)?;
        usize::try_from(u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .map_err(|_| Error::BadCheckpoint("dimension overflow".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::BadCheckpoint("non-utf8 string".into()))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelParameters> {
    let mut r = Reader { inner: input };
    if r.bytes(MAGIC.len())? != MAGIC {
        return Err(Error::BadCheckpoint("bad magic".into()));
    }
    let arch = r.string()?;
    let mut config = serde_json::Map::new();
    config.insert("arch".into(), serde_json::Value::String(arch));
    for _ in 0..r.u32()? {
        let key = r.string()?;
        let value: serde_json::Value = serde_json::from_str(&r.string()?)?;
        config.insert(key, value);
    }
    let config: ModelConfig = serde_json::from_value(serde_json::Value::Object(config))
        .map_err(|e| Error::BadCheckpoint(format!("config: {e}")))?;
    config.validate()?;

    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.bytes(len * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    let params = ModelParameters::new(config, tensors);
    if params.count() != params.config.parameter_count() {
        return Err(Error::BadCheckpoint(format!(
            "{} values stored, config implies {}",
            params.count(),
            params.config.parameter_count()
        )));
    }
    Ok(params)
}
