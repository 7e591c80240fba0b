//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u8   version (currently 1)
//! u8   value width in bytes (4 = f32, 8 = f64)
//! [4]  magic "CAPK"
//! u64  optimizer step counter
//! u32  metadata length, then that many bytes of UTF-8 JSON
//! u32  parameter count
//! per parameter:
//!   u16 name length, name bytes (UTF-8)
//!   u8  rank, then rank × u64 dims
//!   values (product of dims × width)
//! u8   1 if optimizer moments follow, else 0
//! per parameter, in the same order: first moment values, second moment values
//! u8   1 if an AdamW config follows (as u32-length-prefixed JSON), else 0
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::optim::{AdamWConfig, OptimizerState};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"CAPK";

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub optimizer: Option<OptimizerState<T>>,
    /// Free-form metadata (model config, vocabulary size, run info).
    pub meta: serde_json::Value,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = vec![CHECKPOINT_VERSION, T::BYTES as u8];
        out.extend_from_slice(MAGIC);
        let step = self.optimizer.as_ref().map_or(0, |o| o.step);
        out.extend_from_slice(&step.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, t) in self.params.iter() {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        match &self.optimizer {
            Some(opt) => {
                out.push(1);
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    for &x in m.data() {
                        x.write_le(&mut out);
                    }
                    for &x in v.data() {
                        x.write_le(&mut out);
                    }
                }
                out.push(1);
                let cfg = serde_json::to_vec(&opt.config)?;
                out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
                out.extend_from_slice(&cfg);
            }
            None => {
                out.push(0);
                out.push(0);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(ck(format!("unsupported version {version}")));
        }
        let width = r.u8()? as usize;
        if width != T::BYTES {
            return Err(ck(format!(
                "value width {width} does not match requested type ({} bytes)",
                T::BYTES
            )));
        }
        if r.take(4)? != MAGIC {
            return Err(ck("bad magic"));
        }
        let step = r.u64()?;
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| ck("parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let data = r.values::<T>(n)?;
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        let optimizer = if r.u8()? == 1 {
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for id in params.ids() {
                let shape = params.get(id).shape().to_vec();
                let n = params.get(id).len();
                m.push(Tensor::new(shape.clone(), r.values::<T>(n)?)?);
                v.push(Tensor::new(shape, r.values::<T>(n)?)?);
            }
            let config = if r.u8()? == 1 {
                let len = r.u32()? as usize;
                serde_json::from_slice(r.take(len)?)?
            } else {
                AdamWConfig::default()
            };
            Some(OptimizerState { config, step, m, v })
        } else {
            None
        };
        if r.pos != bytes.len() {
            // a trailing config flag of 0 is the only allowed remainder
            if !(r.pos + 1 == bytes.len() && bytes[r.pos] == 0) {
                return Err(ck("trailing bytes"));
            }
        }
        Ok(Self {
            params,
            optimizer,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(ck("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n * T::BYTES)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}
