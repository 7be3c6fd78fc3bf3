//! Big-endian IDX tensors as used by MNIST and Fashion-MNIST.
//!
//! Images use magic `0x00000803` (u8, three dimensions), labels use
//! `0x00000801` (u8, one dimension). Gzipped files are detected by their
//! two-byte magic and inflated first.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::LabeledDataset;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw image tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn parse_err(field: &'static str, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        field,
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(field, offset, "truncated header"))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != expected {
        return Err(parse_err(
            "magic",
            0,
            format!("unsupported magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start
        .checked_add(len)
        .ok_or_else(|| parse_err("payload", start, "declared size overflows"))?;
    if bytes.len() < end {
        return Err(parse_err(
            "payload",
            bytes.len(),
            format!("truncated: expected {len} bytes from offset {start}"),
        ));
    }
    if bytes.len() > end {
        return Err(parse_err("payload", end, "trailing bytes after declared payload"));
    }
    Ok(&bytes[start..end])
}

fn inflate(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

/// Parses an image tensor (raw or gzipped).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let bytes = inflate(bytes)?;
    check_magic(&bytes, IMAGE_MAGIC)?;
    let count = read_u32(&bytes, 4, "image count")? as usize;
    let rows = read_u32(&bytes, 8, "row count")? as usize;
    let cols = read_u32(&bytes, 12, "column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| parse_err("image count", 4, "declared size overflows"))?;
    let pixels = payload(&bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Parses a label vector (raw or gzipped).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bytes = inflate(bytes)?;
    check_magic(&bytes, LABEL_MAGIC)?;
    let count = read_u32(&bytes, 4, "label count")? as usize;
    Ok(payload(&bytes, 8, count)?.to_vec())
}

/// Builds a dataset from an image file and a label file. Pixels are scaled
/// into `[0, 1]`; the class count is one more than the largest label, and at
/// least 2.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let img = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if img.count != lab.len() {
        return Err(parse_err(
            "label count",
            4,
            format!("{} labels for {} images", lab.len(), img.count),
        ));
    }
    let dim = img.rows * img.cols;
    let features = img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = lab.iter().map(|&y| usize::from(y)).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    LabeledDataset::new(features, labels, dim, classes)
}

/// Reads and parses an image/label file pair from disk.
pub fn read_idx_pair(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}

/// Serializes an image tensor to raw IDX bytes.
pub fn write_idx_images(img: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [img.count, img.rows, img.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&img.pixels);
    out
}

/// Serializes a label vector to raw IDX bytes.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
