//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "NGFW"
//! version  u32      currently 1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32
//!   extents  rank x u64
//!   values   product(extents) x f64 (little-endian)
//! ```
//!
//! The layout is normative: checkpoints written by one run must reload
//! bit-exactly in another.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{NgfError, Result};

pub const MAGIC: &[u8; 4] = b"NGFW";
pub const VERSION: u32 = 1;

/// Serialize named tensors in declaration order.
pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(tensors.len())
        .map_err(|_| NgfError::Checkpoint("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| NgfError::Checkpoint(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(NgfError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NgfError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)
            .map_err(|e| NgfError::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| NgfError::Checkpoint(format!("invalid UTF-8 name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|e| NgfError::Checkpoint(format!("truncated extents: {e}")))?;
            let e = u64::from_le_bytes(b);
            shape.push(usize::try_from(e).map_err(|_| {
                NgfError::Checkpoint(format!("extent {e} too large for this platform"))
            })?);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b)
                .map_err(|e| NgfError::Checkpoint(format!("truncated values for {name}: {e}")))?;
            values.push(f64::from_le_bytes(b));
        }
        let t = Tensor::new(shape, values)
            .map_err(|e| NgfError::Checkpoint(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    // Trailing garbage means the file is not what it claims to be.
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(out),
        _ => Err(NgfError::Checkpoint("trailing bytes after last tensor".into())),
    }
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let f = File::create(path)?;
    write_checkpoint(BufWriter::new(f), tensors)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let f = File::open(path)?;
    read_checkpoint(BufReader::new(f))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| NgfError::Checkpoint(format!("truncated field: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_byte_layout() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("w".to_string(), t)]).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"NGFW");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(b"w");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&2.0f64.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let tensors = vec![
            (
                "layer0.h.w1".to_string(),
                Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1e-30, 4.0, 5.5]).unwrap(),
            ),
            ("bias".to_string(), Tensor::new(vec![1], vec![-0.75]).unwrap()),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &tensors).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in tensors.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert_eq!(t0.values(), t1.values());
        }
    }

    #[test]
    fn rejects_bad_magic_version_truncation() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("x".to_string(), t)]).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(NgfError::Checkpoint(_))
        ));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(NgfError::Checkpoint(_))
        ));

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            read_checkpoint(truncated),
            Err(NgfError::Checkpoint(_))
        ));

        let mut padded = buf.clone();
        padded.push(0);
        assert!(matches!(
            read_checkpoint(padded.as_slice()),
            Err(NgfError::Checkpoint(_))
        ));
    }
}
