//! Binary parameter checkpoints.
//!
//! Layout (all little-endian): a u32 byte length, the UTF-8 layout tag, a
//! u64 value count, then the flat f64 parameter array. Documented in
//! `docs/checkpoint-format.md`.

use super::params::ParamVector;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn save_checkpoint(path: &Path, params: &ParamVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let tag = params.layout_tag.as_bytes();
    w.write_all(&(tag.len() as u32).to_le_bytes())?;
    w.write_all(tag)?;
    w.write_all(&(params.values.len() as u64).to_le_bytes())?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector> {
    let mut r = BufReader::new(File::open(path)?);
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let tag_len = u32::from_le_bytes(u32buf) as usize;
    if tag_len > 4096 {
        return Err(Error::Checkpoint(format!("implausible tag length {tag_len}")));
    }
    let mut tag_bytes = vec![0u8; tag_len];
    r.read_exact(&mut tag_bytes)?;
    let tag = String::from_utf8(tag_bytes)
        .map_err(|e| Error::Checkpoint(format!("layout tag is not UTF-8: {e}")))?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut values = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut f64buf)?;
        values.push(f64::from_le_bytes(f64buf));
    }
    // Trailing bytes mean a corrupt or truncated-then-padded file.
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameter array".into()));
    }
    Ok(ParamVector::new(tag, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let pv = ParamVector::new("toy,vocab=4", vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE]);
        save_checkpoint(&path, &pv).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.layout_tag, pv.layout_tag);
        assert_eq!(back.values, pv.values);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let pv = ParamVector::new("toy", vec![1.0, 2.0, 3.0]);
        save_checkpoint(&path, &pv).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
