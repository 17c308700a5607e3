//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "DLEN"  u32 version
//! config: u32 width, seb_width, lwn_hidden, ilb_blocks[3], ilb_heads[3],
//!         seb_blocks[4], seb_refine, seb_heads[4]; u8 use_lwn, use_seab;
//!         u32 train_h, train_w
//! u32 count, then per parameter:
//!         u32 name_len, name (UTF-8), u32 rank, u32 extents[rank], f32 values
//! ```
//!
//! Loading parses the whole file before building a model, so a bad file
//! never yields a partially loaded one.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use crate::config::DlenConfig;
use crate::error::{Error, Result};
use crate::model::DlenModel;
use crate::params::Params;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DLEN";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend((v as u32).to_le_bytes());
}

pub fn encode_checkpoint(model: &DlenModel<f32>) -> Vec<u8> {
    let c = &model.config;
    let mut out = MAGIC.to_vec();
    out.extend(VERSION.to_le_bytes());
    for v in [c.width, c.seb_width, c.lwn_hidden] {
        put_u32(&mut out, v);
    }
    for v in c.ilb_blocks.iter().chain(&c.ilb_heads).chain(&c.seb_blocks) {
        put_u32(&mut out, *v);
    }
    put_u32(&mut out, c.seb_refine);
    for v in &c.seb_heads {
        put_u32(&mut out, *v);
    }
    out.push(c.use_lwn as u8);
    out.push(c.use_seab as u8);
    put_u32(&mut out, c.train_h);
    put_u32(&mut out, c.train_w);
    put_u32(&mut out, model.params.len());
    for (name, t) in model.params.iter() {
        put_u32(&mut out, name.len());
        out.extend(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &e in t.shape() {
            put_u32(&mut out, e);
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
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
                self.bytes.len() as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u32s<const N: usize>(&mut self, what: &str) -> Result<[usize; N]> {
        let mut out = [0; N];
        for v in &mut out {
            *v = self.u32(what)?;
        }
        Ok(out)
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        let at = self.pos;
        match self.take(1, what)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::format(at as u64, format!("{what} flag must be 0 or 1, got {b}"))),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DlenModel<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, not a checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let [width, seb_width, lwn_hidden] = r.u32s("config")?;
    let ilb_blocks = r.u32s("config")?;
    let ilb_heads = r.u32s("config")?;
    let seb_blocks = r.u32s("config")?;
    let seb_refine = r.u32("config")?;
    let seb_heads = r.u32s("config")?;
    let use_lwn = r.flag("use_lwn")?;
    let use_seab = r.flag("use_seab")?;
    let [train_h, train_w] = r.u32s("config")?;
    let config = DlenConfig {
        width,
        seb_width,
        lwn_hidden,
        ilb_blocks,
        ilb_heads,
        seb_blocks,
        seb_refine,
        seb_heads,
        use_lwn,
        use_seab,
        train_h,
        train_w,
    };
    let config_end = r.pos as u64;
    config
        .validate()
        .map_err(|e| Error::format(config_end, format!("invalid config: {e}")))?;

    let count = r.u32("parameter count")?;
    let mut params = Params::new();
    for _ in 0..count {
        let start = r.pos as u64;
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(start, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank > 8 {
            return Err(Error::format(start, format!("{name}: rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(start, format!("{name}: extents overflow")))?;
        let raw = r.take(n * 4, "parameter values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data)?;
        params
            .insert(name.clone(), t)
            .map_err(|_| Error::format(start, format!("duplicate parameter {name}")))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after parameter table"));
    }
    DlenModel::from_parts(config, params)
        .map_err(|e| Error::format(bytes.len() as u64, format!("parameters do not fit config: {e}")))
}

pub fn save_checkpoint(model: &DlenModel<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DlenModel<f32>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_checkpoint(&bytes)
}
