//! IDX files: big-endian, magic-prefixed arrays as used by MNIST.

use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("truncated header at offset {offset}"),
        })
}

fn format_err(path: &Path, message: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message,
    }
}

/// Parses an image file into a row-major `count × (rows·cols)` matrix scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(
            path,
            format!("bad magic 0x{magic:08x} at offset 0, expected 0x{IMAGES_MAGIC:08x}"),
        ));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let width = rows * cols;
    let expected = 16 + count * width;
    if bytes.len() < expected {
        return Err(format_err(
            path,
            format!(
                "truncated pixel data: file ends at offset {}, expected {expected}",
                bytes.len()
            ),
        ));
    }
    let pixels = &bytes[16..expected];
    Ok(Array2::from_shape_fn((count, width), |(i, j)| {
        pixels[i * width + j] as f64 / 255.0
    }))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(
            path,
            format!("bad magic 0x{magic:08x} at offset 0, expected 0x{LABELS_MAGIC:08x}"),
        ));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(format_err(
            path,
            format!(
                "truncated label data: file ends at offset {}, expected {expected}",
                bytes.len()
            ),
        ));
    }
    Ok(bytes[8..expected].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label pair. The class count is one more than the largest label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img_bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl_bytes = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let x = parse_idx_images(&img_bytes, images)?;
    let y = parse_idx_labels(&lbl_bytes, labels)?;
    if x.nrows() != y.len() {
        return Err(format_err(
            labels,
            format!(
                "label count {} (offset 4) does not match image count {}",
                y.len(),
                x.nrows()
            ),
        ));
    }
    let classes = y.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(x, y, classes)
}

/// Writes 8-bit images (`pixels` in `0..=255`) and labels in IDX format.
pub fn write_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    pixels: &[Vec<u8>],
    rows: usize,
    cols: usize,
    classes: &[u8],
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + pixels.len() * rows * cols);
    for v in [IMAGES_MAGIC, pixels.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for p in pixels {
        if p.len() != rows * cols {
            return Err(Error::shape("image size differs from rows × cols"));
        }
        img.extend_from_slice(p);
    }
    let mut lbl = Vec::with_capacity(8 + classes.len());
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(classes.len() as u32).to_be_bytes());
    lbl.extend_from_slice(classes);
    std::fs::write(images.as_ref(), img).map_err(|e| Error::io(images.as_ref(), e))?;
    std::fs::write(labels.as_ref(), lbl).map_err(|e| Error::io(labels.as_ref(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        let pixels = vec![vec![0, 255, 51, 102, 7, 8], vec![1, 2, 3, 4, 5, 255]];
        write_idx(&ip, &lp, &pixels, 2, 3, &[3, 1]).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.features().dim(), (2, 6));
        assert_eq!(d.labels(), &[3, 1]);
        assert_eq!(d.num_classes(), 4);
        for (i, row) in pixels.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                assert_eq!(d.features()[[i, j]], p as f64 / 255.0);
            }
        }
    }

    #[test]
    fn format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx(&ip, &lp, &[vec![1; 4], vec![2; 4]], 2, 2, &[0]).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("does not match"), "{err}");

        let mut bytes = std::fs::read(&ip).unwrap();
        bytes.truncate(18);
        let err = parse_idx_images(&bytes, &ip).unwrap_err().to_string();
        assert!(err.contains("offset 18"), "{err}");
        bytes[3] = 0x01;
        assert!(parse_idx_images(&bytes, &ip)
            .unwrap_err()
            .to_string()
            .contains("bad magic"));
        assert!(parse_idx_labels(&[0, 0], &lp)
            .unwrap_err()
            .to_string()
            .contains("offset 0"));
    }
}
