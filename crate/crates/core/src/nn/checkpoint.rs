//! Parameter checkpoint file.
//!
//! Layout: magic `ACEMCKPT`, version u16 LE, then per parameter (in path
//! order): path length u32 LE, UTF-8 path, rank u8, dims u32 LE each, f32 LE
//! payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::params::Params;
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ACEMCKPT";
const VERSION: u16 = 1;

/// In-memory serialization; also the basis for content hashes.
pub fn to_bytes(params: &Params<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.total_elements() * 4 + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, tensor) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(params: &Params<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&to_bytes(params))?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Params<f32>> {
    let mut r = Offset {
        inner: BufReader::new(File::open(path)?),
        pos: 0,
    };
    let mut magic = [0u8; 8];
    r.read_exact_at(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}")));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let mut params = Params::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.inner.read(&mut len_buf)? {
            0 => break,
            4 => {}
            n => {
                // A partial length prefix means the file was truncated.
                r.pos += n as u64;
                return Err(Error::format(r.pos, "truncated parameter header"));
            }
        }
        r.pos += 4;
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact_at(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::format(r.pos, format!("non-utf8 path: {e}")))?;
        let rank = r.u8()?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 4];
        r.read_exact_at(&mut payload)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

struct Offset<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Offset<R> {
    fn read_exact_at(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::format(self.pos, format!("short read: {e}")))?;
        self.pos += buf.len() as u64;
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact_at(&mut b)?;
        Ok(b[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact_at(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sample_params() -> Params<f32> {
        let mut rng = stream(3, "ckpt-test", 0);
        let mut p = Params::new();
        p.add_dense("encoder.fc", 5, 3, &mut rng).unwrap();
        p.add_conv("encoder.conv1", 4, 1, 3, 3, &mut rng).unwrap();
        p
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.ckpt");
        let p = sample_params();
        save(&p, &file).unwrap();
        let q = load(&file).unwrap();
        assert_eq!(p.len(), q.len());
        for (name, t) in p.iter() {
            assert_eq!(q.get(name).unwrap(), t, "{name}");
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.ckpt");
        std::fs::write(&file, b"NOTACKPT\x01\x00").unwrap();
        assert!(matches!(load(&file), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.ckpt");
        save(&sample_params(), &file).unwrap();
        let bytes = std::fs::read(&file).unwrap();
        std::fs::write(&file, &bytes[..bytes.len() - 7]).unwrap();
        match load(&file) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
