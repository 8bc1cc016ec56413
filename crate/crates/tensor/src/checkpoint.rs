//! Named-tensor container: `LJPT` magic, format version, dtype, a string
//! metadata table, then each tensor's name, shape and little-endian payload.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::scalar::{DType, Real};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LJPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<F>)>,
}

impl<F: Real> Default for Checkpoint<F> {
    fn default() -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
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
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Format("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| TensorError::Format(e.to_string()))
    }
}

impl<F: Real> Checkpoint<F> {
    pub fn from_params(store: &ParamStore<F>) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            tensors: store.iter().map(|(_, e)| (e.name.clone(), e.value.clone())).collect(),
        }
    }

    /// Overwrites values in `store` by name. Every stored parameter must be present.
    pub fn restore_into(&self, store: &mut ParamStore<F>) -> Result<()> {
        for (name, t) in &self.tensors {
            let id = store
                .id(name)
                .ok_or_else(|| TensorError::Format(format!("unknown tensor {name}")))?;
            if store.value(id).shape() != t.shape() {
                return Err(TensorError::Shape {
                    op: "checkpoint restore",
                    left: store.value(id).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            *store.value_mut(id) = t.clone();
        }
        if self.tensors.len() != store.len() {
            return Err(TensorError::Format(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        out.push(F::DTYPE.code());
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.put_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(TensorError::Format(format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(r.take(1)?[0])
            .ok_or_else(|| TensorError::Format("unknown dtype".into()))?;
        if dtype != F::DTYPE {
            return Err(TensorError::Format(format!(
                "file holds {dtype:?}, requested {:?}",
                F::DTYPE
            )));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let mut tensors = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let w = dtype.width();
            let payload = r.take(n * w)?;
            let data = payload.chunks_exact(w).map(F::get_le).collect();
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(TensorError::Format("trailing bytes".into()));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
