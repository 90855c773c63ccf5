//! IDX format reader (big-endian, magic-tagged), the container used by the
//! MNIST family.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated IDX file while reading {what}: {e}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Raw decoded IDX pair: pixel bytes plus labels.
pub struct IdxPair {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

pub fn read_idx_pair(images_path: &Path, labels_path: &Path) -> Result<IdxPair> {
    let mut img = File::open(images_path)?;
    let magic = read_u32_be(&mut img, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&mut img, "image count")? as usize;
    let rows = read_u32_be(&mut img, "rows")? as usize;
    let cols = read_u32_be(&mut img, "cols")? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|e| Error::Format(format!("truncated IDX image payload: {e}")))?;
    let mut extra = [0u8; 1];
    if img.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes in IDX image file".into()));
    }

    let mut lab = File::open(labels_path)?;
    let magic = read_u32_be(&mut lab, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = read_u32_be(&mut lab, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "IDX count mismatch: {count} images vs {label_count} labels"
        )));
    }
    let mut labels = vec![0u8; label_count];
    lab.read_exact(&mut labels)
        .map_err(|e| Error::Format(format!("truncated IDX label payload: {e}")))?;

    Ok(IdxPair {
        count,
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Encode images/labels back into IDX byte streams (fixtures, generated sets).
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
