//! Little-endian binary checkpoint format.
//!
//! ```text
//! "DBOX"                     magic
//! u32                        format version
//! u64                        config hash (first 8 bytes of SHA-256 of the config JSON)
//! u32                        profile (0 = paper, 1 = small)
//! u32                        input side
//! f32 x 3                    per-channel means
//! u32                        training stage
//! u64                        iteration
//! u32 + bytes                config JSON
//! u32                        record count
//! per record:
//!   u32 + bytes              name
//!   u32                      rank
//!   u32 x rank               dims
//!   f32 x prod(dims)         payload
//! ```
//!
//! The eight parameter records come first, named as in [`LAYER_NAMES`];
//! optional momentum buffers follow as `momentum/<name>`.

use std::io::{Read, Write};
use std::path::Path;

use super::{layer_shapes, Layers, NetConfig, NetParams, Profile, LAYER_NAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DBOX";
const MOMENTUM_PREFIX: &str = "momentum/";

/// Parameters plus optional optimizer momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams<f32>,
    pub momentum: Option<Vec<Tensor<f32>>>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    let config_json = serde_json::to_vec(&p.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&p.config.hash().to_le_bytes());
    put_u32(&mut out, p.config.profile.code());
    put_u32(&mut out, p.config.input_side as u32);
    for m in p.means {
        out.extend_from_slice(&m.to_le_bytes());
    }
    put_u32(&mut out, p.stage);
    out.extend_from_slice(&p.iteration.to_le_bytes());
    put_u32(&mut out, config_json.len() as u32);
    out.extend_from_slice(&config_json);
    let momentum = ckpt.momentum.as_deref().unwrap_or(&[]);
    put_u32(&mut out, (8 + momentum.len()) as u32);
    for (name, t) in LAYER_NAMES.iter().zip(p.layers.tensors()) {
        put_record(&mut out, name, t);
    }
    for (name, t) in LAYER_NAMES.iter().zip(momentum) {
        put_record(&mut out, &format!("{MOMENTUM_PREFIX}{name}"), t);
    }
    w.write_all(&out)
        .map_err(|e| Error::io("writing checkpoint", e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a DBOX checkpoint".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hash = c.u64("config hash")?;
    let profile_code = c.u32("profile")?;
    let input_side = c.u32("input side")? as usize;
    let means = [c.f32("means")?, c.f32("means")?, c.f32("means")?];
    let stage = c.u32("stage")?;
    let iteration = c.u64("iteration")?;
    let json_len = c.u32("config length")? as usize;
    let config: NetConfig = serde_json::from_slice(c.take(json_len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("config JSON: {e}")))?;
    if config.hash() != hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    if Profile::from_code(profile_code) != Some(config.profile) || config.input_side != input_side {
        return Err(Error::Checkpoint("header disagrees with embedded config".into()));
    }
    let count = c.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        if !(1..=4).contains(&rank) {
            return Err(Error::Checkpoint(format!("{name}: bad rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32("dims")? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = c.take(len * 4, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::from_vec(&dims, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - c.pos
        )));
    }

    let shapes = layer_shapes(&config)?;
    let mut params = Vec::with_capacity(8);
    let mut momentum = Vec::new();
    for (i, (name, t)) in records.into_iter().enumerate() {
        let (expected, slot) = if i < 8 {
            (LAYER_NAMES[i].to_string(), &mut params)
        } else {
            (format!("{MOMENTUM_PREFIX}{}", LAYER_NAMES[i - 8]), &mut momentum)
        };
        if name != expected || i >= 16 {
            return Err(Error::Checkpoint(format!("unexpected record {name:?} at position {i}")));
        }
        if t.shape() != shapes[i % 8].as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name} has shape {:?}, config expects {:?}",
                t.shape(),
                shapes[i % 8]
            )));
        }
        slot.push(t);
    }
    if params.len() != 8 || !(momentum.is_empty() || momentum.len() == 8) {
        return Err(Error::Checkpoint("incomplete parameter set".into()));
    }
    Ok(Checkpoint {
        params: NetParams {
            config,
            means,
            stage,
            iteration,
            layers: Layers::from_vec(params)?,
        },
        momentum: if momentum.is_empty() { None } else { Some(momentum) },
    })
}

/// Write atomically: to a sibling temp file, then rename.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, ckpt)?;
    crate::dataio::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
