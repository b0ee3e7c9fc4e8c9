//! Reader and writer for the IDX files the MNIST database ships in.
//!
//! Images: magic `0x00000803`, count, rows, cols (big-endian `u32`), then
//! `count · rows · cols` unsigned bytes. Labels: magic `0x00000801`, count,
//! then `count` bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for v in [self.count(), self.rows, self.cols] {
            out.extend_from_slice(&(v as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub fn labels_to_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.offset + 4;
        let chunk = self.bytes.get(self.offset..end).ok_or_else(|| {
            self.error(self.bytes.len(), format!("truncated header reading {what}"))
        })?;
        self.offset = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic number")?;
        if found != expected {
            return Err(self.error(
                0,
                format!("bad magic number {found:#010x}, expected {expected:#010x}"),
            ));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.offset;
        if available < len {
            return Err(self.error(
                self.bytes.len(),
                format!("truncated payload: expected {len} bytes, found {available}"),
            ));
        }
        if available > len {
            return Err(self.error(
                self.offset + len,
                format!("{} trailing bytes after payload", available - len),
            ));
        }
        let out = &self.bytes[self.offset..];
        self.offset = self.bytes.len();
        Ok(out)
    }
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let mut c = Cursor {
        path,
        bytes,
        offset: 0,
    };
    c.magic(IMAGES_MAGIC)?;
    let count = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let pixels = c.payload(count * rows * cols)?.to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut c = Cursor {
        path,
        bytes,
        offset: 0,
    };
    c.magic(LABELS_MAGIC)?;
    let count = c.u32("label count")? as usize;
    let labels = c.payload(count)?;
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(c.error(8 + pos, format!("label {} outside 0-9", labels[pos])));
    }
    Ok(labels.to_vec())
}

/// Loads an image/label file pair, scaling pixels to `byte / 255`.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let raw = parse_images(&read(images)?, images)?;
    let labels_vec = parse_labels(&read(labels)?, labels)?;
    if raw.count() != labels_vec.len() {
        return Err(Error::Idx {
            path: labels.to_path_buf(),
            offset: 4,
            message: format!(
                "label count {} does not match image count {} in {}",
                labels_vec.len(),
                raw.count(),
                images.display()
            ),
        });
    }
    let inputs = raw.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(raw.rows * raw.cols, inputs, labels_vec)
}

/// Loads the standard file names for `split` from `dir`.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (images, labels) = split_paths(dir.as_ref(), split);
    Ok(load_mnist(images, labels)?.with_split(split))
}

pub fn split_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    match split {
        Split::Train => (dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS)),
        Split::Test => (dir.join(TEST_IMAGES), dir.join(TEST_LABELS)),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Idx {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })
}
