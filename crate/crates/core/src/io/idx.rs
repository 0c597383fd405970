//! IDX (MNIST-family) image and label files.
//!
//! Images: big-endian `u32` magic `0x00000803`, then `u32` count, rows and
//! columns, then `count·rows·cols` unsigned bytes in row-major order.
//! Labels: magic `0x00000801`, `u32` count, then `count` bytes.

use std::fs;
use std::path::Path;

use crate::error::IdxError;
use crate::model::Dataset;
use crate::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw decoded image tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated { needed: at + 4, available: bytes.len() })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

fn check_body(bytes: &[u8], header: usize, body: Option<usize>) -> Result<(), IdxError> {
    let needed = body.and_then(|b| b.checked_add(header)).unwrap_or(usize::MAX);
    match bytes.len() {
        n if n < needed => Err(IdxError::Truncated { needed, available: n }),
        n if n > needed => Err(IdxError::TrailingBytes { extra: n - needed }),
        _ => Ok(()),
    }
}

pub fn decode_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    check_body(bytes, 16, count.checked_mul(rows).and_then(|v| v.checked_mul(cols)))?;
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..].to_vec() })
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    check_body(bytes, 8, Some(count))?;
    Ok(bytes[8..].to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Combine decoded images and labels into a dataset with pixels scaled to
/// `[0, 1]`.
pub fn to_dataset(images: &IdxImages, labels: &[u8], num_classes: usize) -> Result<Dataset, IdxError> {
    if images.count != labels.len() {
        return Err(IdxError::CountMismatch { images: images.count, labels: labels.len() });
    }
    if images.count == 0 || images.rows * images.cols == 0 {
        return Err(IdxError::Empty);
    }
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(IdxError::LabelOutOfRange { label, num_classes });
    }
    let features = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels = labels.iter().map(|&l| l as usize).collect();
    Ok(Dataset::new(features, labels, images.rows * images.cols, num_classes).expect("validated IDX contents form a dataset"))
}

fn at(path: &Path) -> impl Fn(IdxError) -> Error + '_ {
    move |source| Error::Idx { path: path.to_path_buf(), source }
}

/// Read an image/label file pair.
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path, num_classes: usize) -> Result<Dataset> {
    let images = decode_images(&fs::read(images_path)?).map_err(at(images_path))?;
    let labels = decode_labels(&fs::read(labels_path)?).map_err(at(labels_path))?;
    to_dataset(&images, &labels, num_classes).map_err(at(images_path))
}
