//! IDX file ingestion (the MNIST distribution format).
//!
//! Big-endian magic and dimension sizes: 0x00000803 for u8 image cubes,
//! 0x00000801 for u8 label vectors. Digits above 5 are discarded on ingest
//! since the addition task only uses 0..5.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::F;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw digit pool: images scaled to `[0,1]`, indexed by digit 0..5.
#[derive(Clone, Debug)]
pub struct DigitPool {
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<F>>,
    pub labels: Vec<u8>,
    /// Pool indices per digit 0..5.
    pub by_digit: [Vec<usize>; 6],
}

struct Be<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Be<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::format(self.pos, format!("short read: {e}")))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(b))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format(self.pos, format!("truncated payload ({n} bytes expected): {e}")))?;
        self.pos += n as u64;
        Ok(buf)
    }
}

/// Reads an IDX image file: `(n, rows, cols, pixels)` with raw u8 pixels.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Be {
        inner: BufReader::new(File::open(path)?),
        pos: 0,
    };
    let magic = r.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.bytes(n * rows * cols)?;
    Ok((n, rows, cols, pixels))
}

/// Reads an IDX label file: `(n, labels)`.
pub fn read_idx_labels(path: &Path) -> Result<(usize, Vec<u8>)> {
    let mut r = Be {
        inner: BufReader::new(File::open(path)?),
        pos: 0,
    };
    let magic = r.u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let n = r.u32()? as usize;
    let labels = r.bytes(n)?;
    Ok((n, labels))
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[u8]) -> Result<()> {
    let n = images.len() / (rows * cols);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    w.write_all(&(n as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    w.write_all(images)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Loads an image/label pair and keeps only digits 0..5, scaled to `[0,1]`.
pub fn ingest_idx(images_path: &Path, labels_path: &Path) -> Result<DigitPool> {
    let (n_img, rows, cols, pixels) = read_idx_images(images_path)?;
    let (n_lab, labels) = read_idx_labels(labels_path)?;
    if n_img != n_lab {
        return Err(Error::contract(format!(
            "{n_img} images but {n_lab} labels"
        )));
    }
    let mut pool = DigitPool {
        height: rows,
        width: cols,
        images: Vec::new(),
        labels: Vec::new(),
        by_digit: Default::default(),
    };
    for (i, &label) in labels.iter().enumerate() {
        if label > 5 {
            continue;
        }
        let raw = &pixels[i * rows * cols..(i + 1) * rows * cols];
        pool.by_digit[label as usize].push(pool.images.len());
        pool.images
            .push(raw.iter().map(|&b| b as F / 255.0).collect());
        pool.labels.push(label);
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Draw};

    #[test]
    fn roundtrip_and_digit_filter() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("images.idx");
        let labs = dir.path().join("labels.idx");
        let mut rng = stream(1, "idx", 0);
        let n = 40;
        let pixels: Vec<u8> = (0..n * 4 * 4).map(|_| rng.below(256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.below(10) as u8).collect();
        write_idx_images(&imgs, 4, 4, &pixels).unwrap();
        write_idx_labels(&labs, &labels).unwrap();

        let (rn, rr, rc, rp) = read_idx_images(&imgs).unwrap();
        assert_eq!((rn, rr, rc), (n, 4, 4));
        assert_eq!(rp, pixels);

        let pool = ingest_idx(&imgs, &labs).unwrap();
        assert!(pool.labels.iter().all(|&l| l <= 5));
        let expected = labels.iter().filter(|&&l| l <= 5).count();
        assert_eq!(pool.images.len(), expected);
        assert!(pool
            .images
            .iter()
            .flatten()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.idx");
        let mut bytes = 0x0000_0802u32.to_be_bytes().to_vec();
        bytes.extend_from_slice(&1u32.to_be_bytes());
        std::fs::write(&file, bytes).unwrap();
        assert!(matches!(
            read_idx_images(&file),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("short.idx");
        write_idx_images(&file, 4, 4, &vec![7u8; 2 * 16]).unwrap();
        let bytes = std::fs::read(&file).unwrap();
        std::fs::write(&file, &bytes[..bytes.len() - 5]).unwrap();
        match read_idx_images(&file) {
            Err(Error::Format { offset, .. }) => assert!(offset >= 16),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
