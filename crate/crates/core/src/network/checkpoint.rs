//! Self-describing binary checkpoint (little-endian).
//!
//! ```text
//! "SPKCKPT1" u32 format-version
//! u32 input, u32 hidden, u32 output, f32 k, u8 learnable, u8[output] active
//! 6 x (u32 len, f32[len])                       parameters, declared order
//! u8 has_optimizer [u64 step, f32 lr, beta1, beta2, eps, 6 x m, 6 x v]
//! u32 n_rng, n x (u8[32] seed, u64 stream, u128 word_pos)
//! u32 n_sections, n x (u16 tag_len, tag, u64 len, u8[len])
//! ```

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dims, FcSnn, OptimizerState, ParamTensors};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPKCKPT1";
const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: FcSnn<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub rngs: Vec<RngState>,
    /// Named opaque payloads for run-level state.
    pub sections: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn section(&self, tag: &str) -> Option<&[u8]> {
        self.sections.iter().find(|(t, _)| t == tag).map(|(_, b)| b.as_slice())
    }
}

fn put_tensors(out: &mut Vec<u8>, t: &ParamTensors<f32>) {
    for g in t.groups() {
        out.extend_from_slice(&(g.len() as u32).to_le_bytes());
        for v in g {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let net = &ckpt.net;
    let dims = net.dims();
    for d in [dims.input, dims.hidden, dims.output] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&net.lif().k.to_le_bytes());
    out.push(u8::from(net.learnable()));
    out.extend(net.active_classes().iter().map(|&a| u8::from(a)));
    put_tensors(&mut out, net.params());
    match &ckpt.optimizer {
        None => out.push(0),
        Some(opt) => {
            out.push(1);
            out.extend_from_slice(&opt.step.to_le_bytes());
            for v in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_tensors(&mut out, &opt.m);
            put_tensors(&mut out, &opt.v);
        }
    }
    out.extend_from_slice(&(ckpt.rngs.len() as u32).to_le_bytes());
    for r in &ckpt.rngs {
        out.extend_from_slice(&r.seed);
        out.extend_from_slice(&r.stream.to_le_bytes());
        out.extend_from_slice(&r.word_pos.to_le_bytes());
    }
    out.extend_from_slice(&(ckpt.sections.len() as u32).to_le_bytes());
    for (tag, body) in &ckpt.sections {
        let tag_len = u16::try_from(tag.len()).map_err(|_| Error::Checkpoint("section tag too long".into()))?;
        out.extend_from_slice(&tag_len.to_le_bytes());
        out.extend_from_slice(tag.as_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(body);
    }
    w.write_all(&out)?;
    Ok(())
}

/// Little-endian cursor over a byte slice.
#[derive(Debug)]
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

macro_rules! le_getter {
    ($name:ident, $t:ty) => {
        pub fn $name(&mut self) -> Result<$t> {
            let b = self.take(std::mem::size_of::<$t>())?;
            Ok(<$t>::from_le_bytes(b.try_into().expect("sized slice")))
        }
    };
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated { expected: self.pos.saturating_add(n), found: self.bytes.len() })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    le_getter!(u8, u8);
    le_getter!(u16, u16);
    le_getter!(u32, u32);
    le_getter!(u64, u64);
    le_getter!(u128, u128);
    le_getter!(f32, f32);
    le_getter!(f64, f64);

    /// Length prefix bounded by the bytes that remain, so corrupt counts
    /// fail instead of allocating.
    pub fn len_prefix(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_size.max(1)) > self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!("length {n} exceeds remaining data")));
        }
        Ok(n)
    }
}

fn get_tensors(r: &mut ByteReader<'_>, dims: Dims) -> Result<ParamTensors<f32>> {
    let mut t = ParamTensors::zeros(dims);
    for g in t.groups_mut() {
        let n = r.len_prefix(4)?;
        if n != g.len() {
            return Err(Error::Checkpoint(format!("tensor of {n} values, expected {}", g.len())));
        }
        for v in g.iter_mut() {
            *v = r.f32()?;
        }
    }
    Ok(t)
}

pub fn read_checkpoint<R: Read>(mut rd: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    rd.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes);
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let dims = Dims { input: r.u32()? as usize, hidden: r.u32()? as usize, output: r.u32()? as usize };
    let k = r.f32()?;
    let learnable = r.u8()? != 0;
    let active = r.take(dims.output)?.iter().map(|&b| b != 0).collect();
    let params = get_tensors(&mut r, dims)?;
    let mut net = FcSnn::from_params(dims, params, k, learnable)?;
    net.set_active(active)?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let (lr, beta1, beta2, eps) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?);
            let m = get_tensors(&mut r, dims)?;
            let v = get_tensors(&mut r, dims)?;
            Some(OptimizerState { m, v, step, lr, beta1, beta2, eps })
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    let n_rng = r.len_prefix(56)?;
    let mut rngs = Vec::with_capacity(n_rng);
    for _ in 0..n_rng {
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        rngs.push(RngState { seed, stream: r.u64()?, word_pos: r.u128()? });
    }
    let n_sections = r.len_prefix(10)?;
    let mut sections = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let tag_len = usize::from(r.u16()?);
        let tag = String::from_utf8(r.take(tag_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("section tag is not UTF-8".into()))?;
        let len = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("section too large".into()))?;
        sections.push((tag, r.take(len)?.to_vec()));
    }
    if !r.is_done() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { net, optimizer, rngs, sections })
}
