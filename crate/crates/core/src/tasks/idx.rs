//! Reader and writer for the IDX binary format used by MNIST-style datasets.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const NUM_CLASSES: u32 = 10;

/// Raw image block: `count` images of `rows × cols` unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what}: header ends at byte {}", bytes.len())))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = read_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, "images")?;
    let count = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Truncated(format!(
            "images: expected {need} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..need].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, "labels")?;
    let count = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Truncated(format!(
            "labels: expected {count} bytes, found {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&fs::read(path)?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}

pub fn encode_idx_images(images: &IdxImages) -> Result<Vec<u8>> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::InvalidParameter(format!(
            "{} pixels do not form {} images of {}x{}",
            images.pixels.len(),
            images.count,
            images.rows,
            images.cols
        )));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    fs::write(path, encode_idx_images(images)?)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::write(path, encode_idx_labels(labels))?;
    Ok(())
}

/// Images and labels joined into a 10-class [`Dataset`]; pixels are scaled to `[0, 1]`.
pub fn ingest_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    dataset_from_idx(&images, &labels)
}

pub fn dataset_from_idx(images: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let labels: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange(bad));
    }
    let features = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        features,
        labels,
        (images.rows * images.cols).max(1),
        NUM_CLASSES,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> IdxImages {
        IdxImages {
            count: 2,
            rows: 3,
            cols: 3,
            pixels: (0..18).map(|i| (i * 14) as u8).collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        write_idx_images(&ip, &tiny()).unwrap();
        write_idx_labels(&lp, &[3, 7]).unwrap();
        assert_eq!(read_idx_images(&ip).unwrap(), tiny());
        assert_eq!(read_idx_labels(&lp).unwrap(), vec![3, 7]);
        assert_eq!(fs::read(&ip).unwrap(), encode_idx_images(&tiny()).unwrap());

        let d = ingest_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.feature_dim(), 9);
        assert_eq!(d.features(1)[8], 17.0 * 14.0 / 255.0);
        assert_eq!(d.labels(), &[3, 7]);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_idx_images(&tiny()).unwrap();
        bytes[3] = 0x02;
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(Error::BadMagic { found: 0x802, .. })
        ));
    }

    #[test]
    fn truncated_files() {
        let bytes = encode_idx_images(&tiny()).unwrap();
        assert!(matches!(
            parse_idx_images(&bytes[..20]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            parse_idx_images(&bytes[..6]),
            Err(Error::Truncated(_))
        ));
        let lab = encode_idx_labels(&[1, 2, 3]);
        assert!(matches!(
            parse_idx_labels(&lab[..9]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn label_range_and_count() {
        assert!(matches!(
            dataset_from_idx(&tiny(), &[1, 12]),
            Err(Error::LabelOutOfRange(12))
        ));
        assert!(matches!(
            dataset_from_idx(&tiny(), &[1]),
            Err(Error::CountMismatch {
                images: 2,
                labels: 1
            })
        ));
    }
}
