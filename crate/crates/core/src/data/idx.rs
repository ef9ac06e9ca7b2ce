//! IDX files: a big-endian magic (`0x00000803` for u8 images,
//! `0x00000801` for u8 labels), big-endian u32 extents, then raw bytes.
//! Files ending in `.gz` are transparently gzip-decoded and encoded.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        offset: 0,
        reason: e.to_string(),
    })?;
    if !is_gz(path) {
        return Ok(raw);
    }
    let mut out = Vec::new();
    GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        offset: 0,
        reason: format!("gzip: {e}"),
    })?;
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if is_gz(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Load {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        self.bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| self.err(offset, "truncated header"))
    }

    fn header(&self, magic: u32, rank: usize) -> Result<Vec<usize>> {
        let found = self.u32_at(0)?;
        if found != magic {
            return Err(self.err(0, format!("magic 0x{found:08x}, expected 0x{magic:08x}")));
        }
        (0..rank).map(|i| self.u32_at(4 + 4 * i).map(|d| d as usize)).collect()
    }

    fn payload(&self, start: usize, len: usize) -> Result<&[u8]> {
        let end = start + len;
        if self.bytes.len() < end {
            return Err(self.err(self.bytes.len(), format!("truncated data, expected {end} bytes")));
        }
        if self.bytes.len() > end {
            return Err(self.err(end, "trailing bytes after data"));
        }
        Ok(&self.bytes[start..end])
    }
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn read_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let r = Reader { bytes, path };
    let dims = r.header(IMAGES_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let pixels = r.payload(16, n * h * w)?;
    Ok((n, h, w, pixels.to_vec()))
}

/// Parses an IDX label file.
pub fn read_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let r = Reader { bytes, path };
    let n = r.header(LABELS_MAGIC, 1)?[0];
    Ok(r.payload(8, n)?.to_vec())
}

/// Loads a single-channel image set and its labels, scaling pixel bytes by
/// `1/255`.
pub fn load_idx<T: Real>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>> {
    let (n, h, w, pixels) = read_idx_images(&read_bytes(images_path)?, images_path)?;
    let labels = read_idx_labels(&read_bytes(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::Load {
            path: labels_path.to_path_buf(),
            offset: 4,
            reason: format!("{} labels for {n} images", labels.len()),
        });
    }
    let data = pixels.iter().map(|&p| T::of(p as f64 / 255.0)).collect();
    let images = Tensor::from_vec([n, 1, h, w], data)?;
    Dataset::new(images, labels.into_iter().map(usize::from).collect())
}

/// Writes a single-channel dataset as IDX, quantising pixels with
/// `round(255·v)` after clamping to `[0, 1]`.
pub fn write_idx<T: Real>(dataset: &Dataset<T>, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [c, h, w] = dataset.image_dims();
    if c != 1 {
        return Err(Error::InvalidArgument(format!("IDX images are single-channel, got {c} channels")));
    }
    let n = dataset.len();
    let mut img = Vec::with_capacity(16 + n * h * w);
    for v in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(dataset.images.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + n);
    for v in [LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    for &l in &dataset.labels {
        let byte = u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte")))?;
        lab.push(byte);
    }
    write_bytes(images_path, &img)?;
    write_bytes(labels_path, &lab)
}
