//! Flat checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "SHBCKPT\0"
//! version u32
//! count   u32
//! count × record:
//!   name_len u32, name (UTF-8), rank u32, rank × extent u64, f32 values
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SHBCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed record: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_checkpoint<W: Write>(mut out: W, records: &[CheckpointRecord]) -> Result<(), CheckpointError> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        let n: usize = r.shape.iter().product();
        if n != r.values.len() {
            return Err(CheckpointError::Malformed(format!(
                "{}: shape {:?} vs {} values",
                r.name,
                r.shape,
                r.values.len()
            )));
        }
        out.write_all(&(r.name.len() as u32).to_le_bytes())?;
        out.write_all(r.name.as_bytes())?;
        out.write_all(&(r.shape.len() as u32).to_le_bytes())?;
        for &e in &r.shape {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * n);
        for v in &r.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<CheckpointRecord>, CheckpointError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut input)?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let rank = read_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; 4 * n];
        input.read_exact(&mut raw)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        records.push(CheckpointRecord { name, shape, values });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            specs in proptest::collection::vec(
                ("[a-z.]{1,12}", proptest::collection::vec(1usize..4, 0..4)), 0..5),
            seed in any::<u32>(),
        ) {
            let mut bits = seed;
            let records: Vec<CheckpointRecord> = specs.into_iter().map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let values = (0..n).map(|_| {
                    bits = bits.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                    f32::from_bits(bits & 0xBF7F_FFFF)
                }).collect();
                CheckpointRecord { name, shape, values }
            }).collect();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &records).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in back.iter().zip(&records) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                let ab: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(matches!(read_checkpoint(&b"NOTACKPT\x01\0\0\0\0\0\0\0"[..]), Err(CheckpointError::BadMagic)));
        let mut buf = CHECKPOINT_MAGIC.to_vec();
        buf.extend_from_slice(&9u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(CheckpointError::Version(9))));
    }
}
