//! IDX container reading and writing (the MNIST distribution format).
//!
//! Layout: big-endian `u32` magic (`0x0000_0803` for 3-d unsigned-byte
//! images, `0x0000_0801` for 1-d unsigned-byte labels), one big-endian `u32`
//! per dimension, then the unsigned-byte payload in row-major order. Files
//! ending in `.gz` are decompressed transparently.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if is_gz(path) {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        file.read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parsed IDX unsigned-byte tensor.
struct IdxTensor {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn parse(path: &Path, bytes: Vec<u8>, expected_magic: u32) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(format_err(path, "file shorter than the 4-byte magic"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != expected_magic {
        return Err(format_err(
            path,
            format!("magic 0x{magic:08x}, expected 0x{expected_magic:08x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(format_err(path, "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let have = bytes.len() - header;
    if have != expected {
        return Err(format_err(
            path,
            format!("payload has {have} bytes, dimensions {dims:?} require {expected}"),
        ));
    }
    let mut payload = bytes;
    payload.drain(..header);
    Ok(IdxTensor { dims, payload })
}

/// Loads an image/label IDX pair. Pixels are scaled by `1/255` into `[0, 1]`
/// and each image is flattened row-major.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse(images_path, read_all(images_path)?, IMAGES_MAGIC)?;
    let labels = parse(labels_path, read_all(labels_path)?, LABELS_MAGIC)?;
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::Consistency(format!(
            "{} images in {} but {} labels in {}",
            n,
            images_path.display(),
            labels.dims[0],
            labels_path.display()
        )));
    }
    let d = images.dims[1] * images.dims[2];
    let features: Vec<f64> = images.payload.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
    if let Some(bad) = labels.iter().find(|&&l| l >= MNIST_CLASSES) {
        return Err(format_err(
            labels_path,
            format!("label {bad} outside 0..10"),
        ));
    }
    Dataset::new(Matrix::new(n, d, features)?, labels, MNIST_CLASSES)
}

/// Writes `dataset` as an image/label IDX pair with square `side × side`
/// images. Features are mapped back to bytes by `round(255·x)`, so data that
/// came from [`load_mnist_idx`] reloads bit for bit.
pub fn write_mnist_idx(
    dataset: &Dataset,
    side: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let n = dataset.len();
    if dataset.features.cols() != side * side {
        return Err(Error::Consistency(format!(
            "feature width {} is not {side}×{side}",
            dataset.features.cols()
        )));
    }
    let mut img = Vec::with_capacity(16 + n * side * side);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, side, side] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in dataset.features.as_slice() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("pixel {v} outside [0, 1]")));
        }
        img.push((v * 255.0).round() as u8);
    }
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &dataset.labels {
        lab.push(u8::try_from(l).map_err(|_| Error::domain(format!("label {l} exceeds a byte")))?);
    }
    write_bytes(images_path, &img)?;
    write_bytes(labels_path, &lab)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish().map(drop))
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

/// Locates the four MNIST files in `dir`, accepting both the `-idx3-ubyte`
/// and the dotted `.idx3-ubyte` spellings, optionally gzipped.
pub fn find_mnist_files(
    dir: &Path,
    split: MnistSplit,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let find = |kind: &str, rank: u8| -> Result<std::path::PathBuf> {
        for sep in ["-", "."] {
            for ext in ["", ".gz"] {
                let p = dir.join(format!("{prefix}-{kind}{sep}idx{rank}-ubyte{ext}"));
                if p.is_file() {
                    return Ok(p);
                }
            }
        }
        let p = dir.join(format!("{prefix}-{kind}-idx{rank}-ubyte"));
        Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
        ))
    };
    Ok((find("images", 3)?, find("labels", 1)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

pub fn load_mnist_dir(dir: &Path, split: MnistSplit) -> Result<Dataset> {
    let (images, labels) = find_mnist_files(dir, split)?;
    load_mnist_idx(&images, &labels)
}
