use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::layout;
use super::{ModelConfig, ModelError, ParameterStore, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"SCRLAB01";

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

/// Serializes `params` and `cfg` in the checkpoint format.
pub fn write_checkpoint(params: &ParameterStore<f32>, cfg: &ModelConfig) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(params.param_count() * 4 + 4096);
    out.extend_from_slice(MAGIC);
    let text = cfg.to_kv();
    put_u64(&mut out, text.len() as u64);
    out.extend_from_slice(text.as_bytes());
    for (name, t) in params.iter() {
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, t.rank() as u64);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(ModelError::Checkpoint(format!("truncated at byte {}", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > limit as u64 {
            return Err(ModelError::Checkpoint(format!("length {n} exceeds remaining data")));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len(self.buf.len() - self.at)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Checkpoint("invalid UTF-8".into()))
    }
}

/// Parses a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ParameterStore<f32>, ModelConfig)> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let cfg = ModelConfig::from_kv(&r.string()?)?;
    let mut store = ParameterStore::new();
    for (want_name, want_shape) in layout(&cfg) {
        let name = r.string()?;
        if name != want_name {
            return Err(ModelError::Checkpoint(format!("found {name}, expected {want_name}")));
        }
        let rank = r.len(8)?;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != want_shape {
            return Err(ModelError::Checkpoint(format!("{name}: shape {shape:?}, expected {want_shape:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.at != bytes.len() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok((store, cfg))
}

/// Writes through a temporary file so a failed save never leaves a partial checkpoint.
pub fn save_checkpoint(params: &ParameterStore<f32>, cfg: &ModelConfig, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(params, cfg)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore<f32>, ModelConfig)> {
    read_checkpoint(&fs::read(path)?)
}
