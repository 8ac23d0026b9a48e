//! Binary checkpoint container, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "NAGCKPT\0"
//! version      u32
//! header_len   u32, then header_len bytes of UTF-8 `key=value` lines (ModelConfig)
//! n_params     u32
//! per parameter:
//!   name_len u32, name bytes
//!   rank     u32, rank × u64 dims
//!   data     product(dims) × f64
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelError, Result, Seq2Seq};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NAGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Seq2Seq, path: &Path) -> Result<()> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Seq2Seq> {
    decode(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn encode(model: &Seq2Seq) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let header: String = model
        .config()
        .to_kv()
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(header.as_bytes());
    put_u32(&mut out, model.params().len() as u32);
    for (name, t) in model.params().iter() {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("invalid utf-8".into()))
    }
}

pub(crate) fn decode(buf: &[u8]) -> Result<Seq2Seq> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let header_len = r.u32()? as usize;
    let header = r.string(header_len)?;
    let kv: BTreeMap<String, String> = header
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let config = ModelConfig::from_kv(&kv)?;
    let mut model = Seq2Seq::new(config, 0)?;
    let n = r.u32()? as usize;
    if n != model.params().len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameters, found {n}",
            model.params().len()
        )));
    }
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter {name}")))?;
        let target = model.params_mut().get_mut(id);
        if target.shape() != shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "shape mismatch for {name}: {shape:?} vs {:?}",
                target.shape()
            )));
        }
        for v in target.data_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}
