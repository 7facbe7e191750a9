//! Versioned binary model dump.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! magic    b"DFMN"
//! version  u16      1: single block, shared NMF; 2: adds layout and share mode
//! reserved u16
//! length   u64      payload bytes
//! checksum u64      FNV-1a of the payload
//! payload
//! ```
//!
//! The payload stores the NMF factors, the demixer blocks and `Λ`, then a
//! free-form metadata string (usually the run configuration as JSON).

use std::path::Path;

use crate::error::{Error, Result};
use crate::hermlin::{BlockLayout, CMat, C64};
use crate::model::{BlockModel, NmfModel, ShareMode, SpatialModel};

pub const MAGIC: [u8; 4] = *b"DFMN";
pub const VERSION_FULL: u16 = 1;
pub const VERSION_BLOCK: u16 = 2;
const HEADER_LEN: usize = 24;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dump {
    pub model: BlockModel,
    pub metadata: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Container(format!("truncated payload at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Container("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }
}

fn version_for(model: &BlockModel) -> u16 {
    if model.spatial.n_blocks() == 1 && model.mode == ShareMode::Shared {
        VERSION_FULL
    } else {
        VERSION_BLOCK
    }
}

pub fn encode(model: &BlockModel, metadata: &str) -> Result<Vec<u8>> {
    model.validate()?;
    let version = version_for(model);
    let sp = &model.spatial;
    let mut w = Writer(Vec::new());
    if version == VERSION_BLOCK {
        w.u8(match model.mode {
            ShareMode::Shared => 0,
            ShareMode::Independent => 1,
        });
        w.u32(sp.n_blocks());
        for &s in sp.layout.sizes() {
            w.u32(s);
        }
    } else {
        w.u32(sp.n_chan());
    }
    w.u32(sp.n_freq);
    w.u32(sp.n_src);
    w.u32(model.nmf.len());
    for nmf in &model.nmf {
        w.u32(nmf.n_frames);
        w.u32(nmf.n_bases);
        w.f64s(&nmf.t);
        w.f64s(&nmf.v);
    }
    for blk in &sp.w {
        for c in blk.as_slice() {
            w.f64s(&[c.re, c.im]);
        }
    }
    w.f64s(&sp.lambda);
    w.bytes(metadata.as_bytes());

    let payload = w.0;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Dump> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Container(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION_FULL && version != VERSION_BLOCK {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let sum = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(Error::Container(format!("payload is {} bytes, header says {len}", payload.len())));
    }
    if fnv1a(payload) != sum {
        return Err(Error::Container("checksum mismatch".into()));
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let (mode, layout) = if version == VERSION_BLOCK {
        let mode = match r.u8()? {
            0 => ShareMode::Shared,
            1 => ShareMode::Independent,
            other => return Err(Error::Container(format!("unknown share mode {other}"))),
        };
        let nb = r.u32()?;
        let sizes = (0..nb).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        (mode, BlockLayout::new(sizes).map_err(|e| Error::Container(e.to_string()))?)
    } else {
        (ShareMode::Shared, BlockLayout::single(r.u32()?))
    };
    let n_freq = r.u32()?;
    let n_src = r.u32()?;
    let n_nmf = r.u32()?;
    if n_nmf > layout.n_blocks() {
        return Err(Error::Container(format!("{n_nmf} NMF models for {} blocks", layout.n_blocks())));
    }
    let mut nmf = Vec::with_capacity(n_nmf);
    for _ in 0..n_nmf {
        let n_frames = r.u32()?;
        let n_bases = r.u32()?;
        let t = r.f64s(n_freq * n_bases * n_src)?;
        let v = r.f64s(n_bases * n_frames * n_src)?;
        nmf.push(NmfModel { n_freq, n_frames, n_bases, n_src, t, v });
    }
    let mut w = Vec::with_capacity(n_freq * layout.n_blocks());
    for _ in 0..n_freq {
        for &s in layout.sizes() {
            let raw = r.f64s(2 * s * s)?;
            let data = raw.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect();
            w.push(CMat::from_vec(s, s, data)?);
        }
    }
    let lambda = r.f64s(n_freq * n_src * layout.total())?;
    let metadata = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Container("metadata is not UTF-8".into()))?;
    if r.pos != payload.len() {
        return Err(Error::Container(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    let model = BlockModel { mode, nmf, spatial: SpatialModel { layout, n_freq, n_src, w, lambda } };
    model.validate().map_err(|e| Error::Container(e.to_string()))?;
    Ok(Dump { model, metadata })
}

pub fn save(path: impl AsRef<Path>, model: &BlockModel, metadata: &str) -> Result<()> {
    std::fs::write(path, encode(model, metadata)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dump> {
    decode(&std::fs::read(path)?)
}

/// Human-readable dump of the same state.
pub fn to_json(model: &BlockModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(model)?)
}
