//! Self-describing binary weight files.
//!
//! Layout (all integers little-endian):
//! magic (8 bytes), version `u32`, run-config hash (`u32` length + UTF-8),
//! training step `u64`, model config JSON (`u32` length + UTF-8), parameter
//! count `u32`, then per parameter: name (`u32` length + UTF-8), rank `u32`,
//! dims `u64` each, values `f64` each.

use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDEPTHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub step: u64,
    pub model: Model,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config_hash);
        out.extend(self.step.to_le_bytes());
        put_str(&mut out, &serde_json::to_string(&self.model.config).expect("config serializes"));
        out.extend((self.model.params.len() as u32).to_le_bytes());
        for (name, t) in self.model.params.iter() {
            put_str(&mut out, name);
            out.extend((t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_hash = r.string()?;
        let step = r.u64()?;
        let config: ModelConfig = serde_json::from_str(&r.string()?)?;
        config.validate()?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::default();
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.filter(|l| l.checked_mul(8).is_some_and(|b| b <= r.remaining()));
            let Some(len) = len else {
                return Err(Error::Format(format!("parameter `{name}` overruns the file")));
            };
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(name, Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        let expected = Model::init(config.clone(), 0)?;
        let layout = |p: &ParamStore| p.iter().map(|(n, t)| (n.to_owned(), t.shape().to_vec())).collect::<Vec<_>>();
        if layout(&expected.params) != layout(&params) {
            return Err(Error::Format("parameter layout does not match the stored model config".into()));
        }
        Ok(Checkpoint {
            config_hash,
            step,
            model: Model { config, params },
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Write atomically: a temporary sibling file is renamed over `path`.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&ck.to_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
