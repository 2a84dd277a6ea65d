//! Canonical binary dataset store.
//!
//! Layout: magic `ACEMDATA`, version u16 LE, CRC32 (IEEE) of everything after
//! the checksum field, then split tag, class count, concept names, image
//! dims, f32 LE image payload, u16 LE labels, and an optional u8 concept
//! matrix.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::{ConceptMatrix, DatasetMeta, LabeledDataset, Split};

const MAGIC: &[u8; 8] = b"ACEMDATA";
const VERSION: u16 = 1;

pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::contract("refusing to save an empty dataset"));
    }
    let mut payload = Vec::with_capacity(dataset.images.numel() * 4 + 64);
    payload.push(dataset.split.code());
    payload.extend_from_slice(&(dataset.meta.n_classes as u32).to_le_bytes());
    payload.extend_from_slice(&(dataset.meta.concept_names.len() as u32).to_le_bytes());
    for name in &dataset.meta.concept_names {
        payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
    }
    for &d in dataset.images.shape() {
        payload.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in dataset.images.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &dataset.task_labels {
        payload.extend_from_slice(&l.to_le_bytes());
    }
    match &dataset.concept_truth {
        Some(cm) => {
            payload.push(1);
            payload.extend_from_slice(&cm.bits);
        }
        None => payload.push(0),
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut file = File::open(path)?;
    let mut head = [0u8; 14];
    file.read_exact(&mut head)
        .map_err(|e| Error::format(0, format!("short header: {e}")))?;
    if &head[..8] != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", &head[..8])));
    }
    let version = u16::from_le_bytes([head[8], head[9]]);
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let stored_crc = u32::from_le_bytes([head[10], head[11], head[12], head[13]]);
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let computed = crc32fast::hash(&payload);
    if computed != stored_crc {
        return Err(Error::Checksum {
            stored: stored_crc,
            computed,
        });
    }

    let mut c = Cursor {
        buf: &payload,
        pos: 0,
    };
    let split = Split::from_code(c.u8()?)?;
    let n_classes = c.u32()? as usize;
    let name_count = c.u32()? as usize;
    let mut concept_names = Vec::with_capacity(name_count);
    for _ in 0..name_count {
        let len = c.u32()? as usize;
        let bytes = c.take(len)?;
        concept_names.push(
            String::from_utf8(bytes.to_vec())
                .map_err(|e| Error::format(c.pos as u64 + 14, format!("non-utf8 name: {e}")))?,
        );
    }
    let dims: Vec<usize> = (0..4)
        .map(|_| c.u32().map(|v| v as usize))
        .collect::<Result<_>>()?;
    let numel = dims.iter().product::<usize>();
    let image_bytes = c.take(numel * 4)?;
    let images = image_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let n = dims[0];
    let label_bytes = c.take(n * 2)?;
    let labels = label_bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let concept_truth = match c.u8()? {
        0 => None,
        _ => {
            let k = name_count;
            let bits = c.take(n * k)?.to_vec();
            Some(ConceptMatrix { n, k, bits })
        }
    };

    LabeledDataset::new(
        Tensor::new(dims, images)?,
        labels,
        concept_truth,
        split,
        DatasetMeta {
            n_classes,
            concept_names,
        },
    )
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos as u64 + 14,
                format!("payload truncated ({n} bytes wanted)"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
