//! Raw tensor dumps: `"TNSR"`, `u32` rank, `rank × u32` extents, then the
//! `f32` payload. Everything little-endian.

use std::path::Path;

use super::Tensor;
use crate::{Error, Result};

pub const DUMP_MAGIC: [u8; 4] = *b"TNSR";

pub fn encode_dump(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(&DUMP_MAGIC);
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &e in tensor.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or(Error::TruncatedHeader {
            needed: at + 4,
            available: bytes.len(),
        })
}

pub fn decode_dump(bytes: &[u8]) -> Result<Tensor> {
    let magic = bytes.get(..4).ok_or(Error::TruncatedHeader {
        needed: 4,
        available: bytes.len(),
    })?;
    if magic != DUMP_MAGIC {
        return Err(Error::BadMagic {
            expected: DUMP_MAGIC,
            found: magic.to_vec(),
        });
    }
    let rank = read_u32(bytes, 4)? as usize;
    if !(1..=4).contains(&rank) {
        return Err(Error::invalid(format!("tensor dump rank {rank} not in 1..=4")));
    }
    let shape = (0..rank)
        .map(|i| read_u32(bytes, 8 + 4 * i).map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 8 + 4 * rank;
    let payload = &bytes[header..];
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::invalid(format!("tensor dump shape {shape:?} overflows")))?;
    if payload.len() < count * 4 {
        return Err(Error::TruncatedData {
            needed: header + count * 4,
            available: bytes.len(),
        });
    }
    if payload.len() > count * 4 {
        return Err(Error::TrailingBytes(payload.len() - count * 4));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_dump(tensor: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dump(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dump(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian() {
        let t = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        let bytes = encode_dump(&t);
        assert_eq!(&bytes[..4], b"TNSR");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(decode_dump(b"TNS"), Err(Error::TruncatedHeader { .. })));
        assert!(matches!(decode_dump(b"XXXX\x01\0\0\0"), Err(Error::BadMagic { .. })));
        assert!(decode_dump(b"TNSR\x05\0\0\0").is_err());
        let mut bytes = encode_dump(&Tensor::zeros(&[3]));
        bytes.pop();
        assert!(matches!(decode_dump(&bytes), Err(Error::TruncatedData { .. })));
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(decode_dump(&bytes), Err(Error::TrailingBytes(1))));
        // 2^32-1 squared elements must not overflow into a small allocation.
        assert!(decode_dump(b"TNSR\x02\0\0\0\xff\xff\xff\xff\xff\xff\xff\xff").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in proptest::collection::vec(1usize..5, 1..=4), seed: u64) {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|i| crate::rng::normal_at(seed, i as u64) as f32).collect();
            let t = Tensor::new(&shape, data).unwrap();
            prop_assert!(decode_dump(&encode_dump(&t)).unwrap().bit_eq(&t));
        }
    }
}
