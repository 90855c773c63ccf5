//! CIFAR binary row format: CIFAR-10 rows are 1 label byte + 3072 pixel
//! bytes, CIFAR-100 rows are 2 label bytes (coarse, fine) + 3072 pixels.
//! The variant is inferred from the file length.

use std::path::Path;

use crate::error::{Error, Result};

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
const ROW10: usize = 1 + CIFAR_PIXELS;
const ROW100: usize = 2 + CIFAR_PIXELS;

pub struct CifarRaw {
    pub count: usize,
    /// 3072 bytes per image, CHW planes.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub is_cifar100: bool,
}

pub fn read_cifar_bin(path: &Path, coarse: bool) -> Result<CifarRaw> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::Format("empty CIFAR file".into()));
    }
    let fits10 = bytes.len() % ROW10 == 0;
    let fits100 = bytes.len() % ROW100 == 0;
    let is_cifar100 = match (fits10, fits100) {
        (true, true) => {
            return Err(Error::Format(format!(
                "ambiguous CIFAR file length {}: divisible by both row strides",
                bytes.len()
            )))
        }
        (true, false) => false,
        (false, true) => true,
        (false, false) => {
            return Err(Error::Format(format!(
                "CIFAR file length {} is not a multiple of {} (CIFAR-10) or {} (CIFAR-100)",
                bytes.len(),
                ROW10,
                ROW100
            )))
        }
    };
    if coarse && !is_cifar100 {
        return Err(Error::Format(
            "coarse labels requested but file has CIFAR-10 row stride".into(),
        ));
    }
    let row = if is_cifar100 { ROW100 } else { ROW10 };
    let count = bytes.len() / row;
    let mut pixels = Vec::with_capacity(count * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(count);
    for chunk in bytes.chunks_exact(row) {
        let label = if is_cifar100 {
            if coarse {
                chunk[0]
            } else {
                chunk[1]
            }
        } else {
            chunk[0]
        };
        labels.push(label);
        pixels.extend_from_slice(&chunk[if is_cifar100 { 2 } else { 1 }..]);
    }
    Ok(CifarRaw {
        count,
        pixels,
        labels,
        is_cifar100,
    })
}

/// Encode rows in CIFAR-10 (1 label byte) or CIFAR-100 (coarse+fine) layout.
pub fn encode_cifar_rows(labels: &[(u8, Option<u8>)], pixels: &[u8]) -> Vec<u8> {
    let n = labels.len();
    debug_assert_eq!(pixels.len(), n * CIFAR_PIXELS);
    let mut out = Vec::new();
    for (i, &(a, b)) in labels.iter().enumerate() {
        out.push(a);
        if let Some(fine) = b {
            out.push(fine);
        }
        out.extend_from_slice(&pixels[i * CIFAR_PIXELS..(i + 1) * CIFAR_PIXELS]);
    }
    out
}
