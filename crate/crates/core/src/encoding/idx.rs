//! IDX container (the MNIST distribution format).

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::FrameImage;
use crate::error::{Error, Result};

/// Unsigned-byte, 3-dimensional tensor (image stack).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, 1-dimensional tensor (label vector).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated { expected: at + 4, found: bytes.len() })
}

/// Decodes an uncompressed IDX stream. Only the image (`0x803`) and label
/// (`0x801`) layouts are accepted, and the payload length must match the
/// header exactly.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = be_u32(bytes, 0)?;
    let ndim = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        found => return Err(Error::BadIdxMagic { found }),
    };
    let raw_dims = (0..ndim).map(|i| be_u32(bytes, 4 + 4 * i)).collect::<Result<Vec<u32>>>()?;
    let overflow = || Error::DimensionOverflow { dims: raw_dims.clone() };
    let len = raw_dims.iter().try_fold(1usize, |acc, &d| usize::try_from(d).ok().and_then(|d| acc.checked_mul(d)));
    let header = 4 + 4 * ndim;
    let expected = len.and_then(|l| l.checked_add(header)).ok_or_else(overflow)?;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes { extra: bytes.len() - expected });
    }
    Ok(IdxTensor { dims: raw_dims.iter().map(|&d| d as usize).collect(), data: bytes[header..].to_vec() })
}

/// Reads and decodes an IDX file, transparently inflating gzip input.
pub fn load_idx_file(path: &Path) -> Result<IdxTensor> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        parse_idx(&out)
    } else {
        parse_idx(&raw)
    }
}

fn find_file(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(candidate);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("no {stem}[.gz] in {}", dir.display()))))
}

/// Loads `{split}-images-idx3-ubyte` / `{split}-labels-idx1-ubyte` (optionally
/// gzipped) from `dir` as frames scaled into `[0, 1]`.
pub fn load_mnist_split(dir: &Path, split: &str, num_classes: usize) -> Result<Vec<FrameImage>> {
    let images = load_idx_file(&find_file(dir, &format!("{split}-images-idx3-ubyte"))?)?;
    let labels = load_idx_file(&find_file(dir, &format!("{split}-labels-idx1-ubyte"))?)?;
    if images.dims.len() != 3 || labels.dims.len() != 1 || images.dims[0] != labels.dims[0] {
        return Err(Error::Shape(format!("images {:?} do not pair with labels {:?}", images.dims, labels.dims)));
    }
    let (h, w) = (images.dims[1], images.dims[2]);
    images
        .data
        .chunks_exact(h * w)
        .zip(&labels.data)
        .map(|(px, &label)| {
            let label = usize::from(label);
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
            FrameImage::from_bytes(px, h, w, label)
        })
        .collect()
}
