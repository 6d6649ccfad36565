//! `COFCKPT1` checkpoints.
//!
//! Layout, all integers little-endian:
//! magic `COFCKPT1`; `u32` header length; header JSON (`{"model": …, "step": …}`);
//! `u32` tensor count; then per tensor `u32` name length, UTF-8 name, `u32`
//! rank, `u32` extents, and `f32` values. Parameters come first in
//! declaration order, followed by `adam.m.*` and `adam.v.*` moments when the
//! state has them. Values are rounded to `f32` on write.

use std::fs;
use std::path::Path;

use cof_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{layout, ModelState};
use crate::{CofError, Result};

pub const MAGIC: &[u8; 8] = b"COFCKPT1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    step: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CofError::Format(format!("{v} does not fit in u32")))?;
    buf.extend(v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(state: &ModelState) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        model: state.config.clone(),
        step: state.step,
    })?;
    let mut tensors: Vec<(String, &Tensor)> = state.names.iter().cloned().zip(state.params.iter()).collect();
    if let Some((m, v)) = &state.moments {
        for (prefix, moments) in [("adam.m.", m), ("adam.v.", v)] {
            tensors.extend(state.names.iter().map(|n| format!("{prefix}{n}")).zip(moments.iter()));
        }
    }
    let mut buf = MAGIC.to_vec();
    put_u32(&mut buf, header.len())?;
    buf.extend(&header);
    put_u32(&mut buf, tensors.len())?;
    for (name, t) in tensors {
        put_u32(&mut buf, name.len())?;
        buf.extend(name.as_bytes());
        put_u32(&mut buf, t.rank())?;
        for &e in t.shape() {
            put_u32(&mut buf, e)?;
        }
        for &x in t.data() {
            buf.extend((x as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CofError::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelState> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CofError::Format("not a COFCKPT1 checkpoint".into()));
    }
    let hlen = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    header.model.validate()?;
    let count = r.u32()?;
    let mut read = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()?;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| CofError::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(
            len.checked_mul(4)
                .ok_or_else(|| CofError::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        read.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(CofError::Format("trailing bytes after checkpoint".into()));
    }

    let expected = layout(&header.model);
    let np = expected.len();
    if read.len() != np && read.len() != 3 * np {
        return Err(CofError::Format(format!(
            "{} tensors for a model with {np} parameters",
            read.len()
        )));
    }
    let mut groups = read.into_iter();
    let mut collect = |prefix: &str| -> Result<Vec<Tensor>> {
        expected
            .iter()
            .map(|(name, shape)| {
                let (got, t) = groups.next().expect("count checked");
                if got != format!("{prefix}{name}") || t.shape() != shape.as_slice() {
                    return Err(CofError::Format(format!(
                        "tensor {got} {:?} where {prefix}{name} {shape:?} was expected",
                        t.shape()
                    )));
                }
                Ok(t)
            })
            .collect()
    };
    let params = collect("")?;
    let moments = if 3 * np == count {
        Some((collect("adam.m.")?, collect("adam.v.")?))
    } else {
        None
    };
    Ok(ModelState {
        config: header.model,
        names: expected.into_iter().map(|(n, _)| n).collect(),
        params,
        step: header.step,
        moments,
    })
}

pub fn save(path: &Path, state: &ModelState) -> Result<()> {
    fs::write(path, to_bytes(state)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelState> {
    from_bytes(&fs::read(path)?)
}
