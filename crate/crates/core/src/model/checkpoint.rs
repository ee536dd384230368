//! Checkpoint files.
//!
//! ```text
//! "EOCK" | version u32 | text_len u64 | key = value text (model config, step)
//! | n_tensors u64 | n_tensors × { name_len u32 | name | ndim u32 | dims u64… | offset u64 }
//! | payload (f32 LE, offsets relative to payload start)
//! ```

use std::path::Path;

use super::{tensor_specs, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::kv::KeyValues;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"EOCK";
pub const VERSION: u32 = 1;

const MAX_TEXT: u64 = 1 << 20;
const MAX_NAME: u32 = 1024;
const MAX_DIMS: u32 = 8;

/// Parameters plus the step they were saved at.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
}

pub fn encode_checkpoint(params: &ModelParams, step: u64) -> Vec<u8> {
    let mut text = params.config().to_kv();
    text.push_str(&format!("step = {step}\n"));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.tensors().len() as u64).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.len() as u64;
    }
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"EOCK\""));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let text_len = r.u64("config length")?;
    if text_len > MAX_TEXT {
        return Err(Error::format(8, format!("config block of {text_len} bytes is too large")));
    }
    let text_at = r.pos as u64;
    let text = std::str::from_utf8(r.take(text_len as usize, "config block")?)
        .map_err(|e| Error::format(text_at, format!("config block is not UTF-8: {e}")))?;
    let mut kv = KeyValues::parse(text)
        .map_err(|e| Error::format(text_at, format!("config block: {e}")))?;
    let step = kv
        .take::<u64>("step")
        .map_err(|e| Error::format(text_at, e.to_string()))?
        .unwrap_or(0);
    let config = ModelConfig::from_kv(&mut kv, None)
        .and_then(|c| kv.finish().map(|_| c))
        .map_err(|e| Error::format(text_at, format!("config block: {e}")))?;

    let specs = tensor_specs(&config);
    let count_at = r.pos as u64;
    let n = r.u64("tensor count")?;
    if n != specs.len() as u64 {
        return Err(Error::format(
            count_at,
            format!("config implies {} tensors, manifest lists {n}", specs.len()),
        ));
    }
    let mut manifest = Vec::with_capacity(specs.len());
    let mut expected_offset = 0u64;
    for s in &specs {
        let entry_at = r.pos as u64;
        let name_len = r.u32("tensor name length")?;
        if name_len > MAX_NAME {
            return Err(Error::format(entry_at, "tensor name too long"));
        }
        let name = std::str::from_utf8(r.take(name_len as usize, "tensor name")?)
            .map_err(|_| Error::format(entry_at + 4, "tensor name is not UTF-8"))?;
        let ndim = r.u32("tensor rank")?;
        if ndim > MAX_DIMS {
            return Err(Error::format(entry_at, format!("tensor rank {ndim} too large")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(r.u64("tensor dimension")?);
        }
        let offset = r.u64("tensor offset")?;
        if name != s.name || shape.len() != s.shape.len() || shape.iter().zip(&s.shape).any(|(&a, &b)| a != b as u64) {
            return Err(Error::format(
                entry_at,
                format!("tensor {name} {shape:?} does not match layout {} {:?}", s.name, s.shape),
            ));
        }
        if offset != expected_offset {
            return Err(Error::format(
                entry_at,
                format!("tensor {name} offset {offset}, expected {expected_offset}"),
            ));
        }
        let len: usize = s.shape.iter().product();
        expected_offset += 4 * len as u64;
        manifest.push((name.to_string(), s.shape.clone(), len));
    }

    let payload_at = r.pos;
    let remaining = (bytes.len() - payload_at) as u64;
    if remaining != expected_offset {
        return Err(Error::format(
            payload_at as u64,
            format!("payload is {remaining} bytes, manifest declares {expected_offset}"),
        ));
    }
    let mut named = Vec::with_capacity(manifest.len());
    for (name, shape, len) in manifest {
        let at = r.pos;
        let raw = r.take(4 * len, "payload")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format((at + 4 * i) as u64, format!("non-finite value in {name}")));
        }
        named.push((name, Tensor::new(&shape, data)?));
    }
    let params = ModelParams::from_tensors(config, named)?;
    Ok(Checkpoint { params, step })
}

pub fn write_checkpoint(params: &ModelParams, step: u64, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(params, step))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn round_trip_bit_exact() {
        let m = build_model(&ModelConfig::preset("nano").unwrap(), 9).unwrap();
        let bytes = encode_checkpoint(&m, 42);
        let c = decode_checkpoint(&bytes).unwrap();
        assert_eq!(c.step, 42);
        assert_eq!(c.params, m);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let m = build_model(&ModelConfig::preset("nano").unwrap(), 9).unwrap();
        let bytes = encode_checkpoint(&m, 1);
        for cut in [0, 3, 8, 15, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let mut long = bytes;
        long.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Format { .. })));
    }
}
