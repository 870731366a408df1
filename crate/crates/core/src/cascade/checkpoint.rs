//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "ONIONNET"
//! version   u32
//! dtype     u32 length + UTF-8 ("f32" / "f64")
//! channels  u32      input channels
//! arch      u32 length + UTF-8 canonical architecture text
//! count     u32      number of tensors
//! tensors   rank u32, dims u32 × rank, little-endian values
//! ```
//!
//! Tensors follow the declaration order: for each level the S1 filters and
//! bias, then the S2 filters and bias. Optimizer state is not stored.

use std::io::{Read, Write};
use std::path::Path;

use super::model::CascadeModel;
use crate::arch::parse_arch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"ONIONNET";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}

impl<T: Scalar> CascadeModel<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        put_str(&mut out, T::DTYPE)?;
        put_u32(&mut out, self.input_channels)?;
        put_str(&mut out, &self.spec.canonical())?;
        let params = self.params_in_order();
        put_u32(&mut out, params.len() * 2)?;
        for p in params {
            put_u32(&mut out, p.filters.rank())?;
            for &d in p.filters.shape() {
                put_u32(&mut out, d)?;
            }
            p.filters.data().iter().for_each(|v| v.write_le(&mut out));
            put_u32(&mut out, 1)?;
            put_u32(&mut out, p.bias.len())?;
            p.bias.iter().for_each(|v| v.write_le(&mut out));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = c.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dtype = c.string()?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint stores {dtype}, requested {}",
                T::DTYPE
            )));
        }
        let channels = c.u32()?;
        let spec = parse_arch(&c.string()?)?;
        let mut model = Self::build(&spec, channels, 0)?;
        let count = c.u32()?;
        let mut params = model.params_in_order_mut();
        if count != params.len() * 2 {
            return Err(Error::Format(format!(
                "checkpoint has {count} tensors, the architecture needs {}",
                params.len() * 2
            )));
        }
        let mut read_tensor = |expected: &[usize], dst: &mut [T]| -> Result<()> {
            let rank = c.u32()?;
            let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
            if dims != expected {
                return Err(Error::Format(format!(
                    "tensor shape {dims:?} does not match the architecture ({expected:?})"
                )));
            }
            let raw = c.take(dst.len() * T::BYTES)?;
            for (v, chunk) in dst.iter_mut().zip(raw.chunks_exact(T::BYTES)) {
                *v = T::read_le(chunk);
            }
            Ok(())
        };
        for p in params.iter_mut() {
            let shape = p.filters.shape().to_vec();
            read_tensor(&shape, p.filters.data_mut())?;
            let blen = p.bias.len();
            read_tensor(&[blen], &mut p.bias)?;
        }
        drop(params);
        if c.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after the last tensor".into()));
        }
        model.reset_momentum();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
