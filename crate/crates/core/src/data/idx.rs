use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};
use crate::math::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

fn read_u32(cur: &mut Cursor<&[u8]>, file: &'static str, field: &'static str) -> Result<u32> {
    cur.read_u32::<BigEndian>()
        .map_err(|_| Error::Truncated { file, field })
}

fn read_body<'a>(cur: &mut Cursor<&'a [u8]>, len: usize, file: &'static str, field: &'static str) -> Result<&'a [u8]> {
    let start = cur.position() as usize;
    let bytes = *cur.get_ref();
    let end = start.checked_add(len).ok_or(Error::Truncated { file, field })?;
    if end > bytes.len() {
        return Err(Error::Truncated { file, field });
    }
    cur.set_position(end as u64);
    Ok(&bytes[start..end])
}

/// Parses an IDX3 unsigned-byte image file into `N × (rows·cols)` pixels in `[0, 1]`.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Array2<T>> {
    const FILE: &str = "images";
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, FILE, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::WrongMagic {
            file: FILE,
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut cur, FILE, "count")? as usize;
    let rows = read_u32(&mut cur, FILE, "rows")? as usize;
    let cols = read_u32(&mut cur, FILE, "cols")? as usize;
    let dim = rows * cols;
    let body = read_body(&mut cur, count * dim, FILE, "pixels")?;
    let scale = T::lit(255.0);
    Array2::from_shape_vec(
        (count, dim),
        body.iter().map(|&b| T::from_u8(b).unwrap() / scale).collect(),
    )
    .map_err(|_| Error::Truncated {
        file: FILE,
        field: "pixels",
    })
}

/// Parses an IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    const FILE: &str = "labels";
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, FILE, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::WrongMagic {
            file: FILE,
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut cur, FILE, "count")? as usize;
    let body = read_body(&mut cur, count, FILE, "labels")?;
    Ok(body.iter().map(|&b| b as usize).collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Loads an MNIST image/label file pair. Pixels are divided by 255.
pub fn load_mnist_idx<T: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let images_path = images_path.as_ref();
    let features = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path.as_ref())?)?;
    if features.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            images: features.nrows(),
            labels: labels.len(),
        });
    }
    Dataset::new(features, labels, MNIST_CLASSES, images_path.display().to_string())
}
