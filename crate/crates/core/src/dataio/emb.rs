//! EMB1: a fixed 16-byte header followed by a row-major float32 payload.
//!
//! ```text
//! 0..4   magic "EMB1"
//! 4      version (0x01)
//! 5      dtype   (0x01 = f32 little-endian)
//! 6..8   reserved, zero
//! 8..12  rows (T), u32 LE
//! 12..16 cols (D), u32 LE
//! 16..   T*D f32 LE values
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::DataError;

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x01;
pub const HEADER_LEN: usize = 16;

/// A row-major `rows x cols` float32 matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if rows == 0 || cols == 0 {
            return Err(DataError::EmptyTensor);
        }
        if data.len() != rows * cols {
            return Err(DataError::ShapeMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f32> = rows.iter().flatten().copied().collect();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DataError::ShapeMismatch {
                expected: rows.len() * cols,
                actual: data.len(),
            });
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn check_finite(&self) -> Result<(), DataError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(DataError::NonFiniteValue { index }),
            None => Ok(()),
        }
    }
}

/// Parsed header of an EMB1 file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbHeader {
    pub rows: u32,
    pub cols: u32,
}

fn parse_header(bytes: &[u8]) -> Result<EmbHeader, DataError> {
    if bytes.len() < HEADER_LEN {
        return Err(DataError::TruncatedPayload {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(DataError::BadMagic(bytes[0..4].try_into().unwrap()));
    }
    if bytes[4] != VERSION {
        return Err(DataError::UnsupportedVersion(bytes[4]));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(DataError::UnsupportedDtype(bytes[5]));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    Ok(EmbHeader { rows, cols })
}

/// Serializes a tensor into EMB1 bytes.
pub fn encode(tensor: &Tensor) -> Result<Vec<u8>, DataError> {
    tensor.check_finite()?;
    let rows = u32::try_from(tensor.rows).map_err(|_| DataError::TooLarge)?;
    let cols = u32::try_from(tensor.cols).map_err(|_| DataError::TooLarge)?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * tensor.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, 0, 0]);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses EMB1 bytes.
pub fn decode(bytes: &[u8]) -> Result<Tensor, DataError> {
    let header = parse_header(bytes)?;
    let (rows, cols) = (header.rows as usize, header.cols as usize);
    if rows == 0 || cols == 0 {
        return Err(DataError::EmptyTensor);
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or(DataError::TooLarge)?;
    if bytes.len() != expected {
        return Err(DataError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tensor = Tensor { rows, cols, data };
    tensor.check_finite()?;
    Ok(tensor)
}

pub fn write_embedding(tensor: &Tensor, path: &Path) -> Result<(), DataError> {
    let bytes = encode(tensor)?;
    let mut file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_embedding(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode(&bytes)
}

/// Reads only the 16-byte header and checks the file size against it.
pub fn read_header(path: &Path) -> Result<EmbHeader, DataError> {
    let mut file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut buf = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match file.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(DataError::io(path, e)),
        }
    }
    let header = parse_header(&buf[..filled])?;
    let len = file.metadata().map_err(|e| DataError::io(path, e))?.len() as usize;
    let expected = HEADER_LEN + 4 * header.rows as usize * header.cols as usize;
    if len != expected {
        return Err(DataError::TruncatedPayload {
            expected,
            actual: len,
        });
    }
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t).unwrap();
        // 16-byte header + 4 float32 values: 32 bytes on disk.
        assert_eq!(bytes.len(), 32);
        assert_eq!(bytes.len() - HEADER_LEN, 16);
        assert_eq!(&bytes[0..8], b"EMB1\x01\x01\x00\x00");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());

        let t = Tensor::new(2, 3, vec![0.0; 6]).unwrap();
        let bytes = encode(&t).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
    }

    #[test]
    fn rejects_bad_magic() {
        let t = Tensor::new(1, 2, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(&t).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(DataError::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn rejects_version_and_truncation() {
        let t = Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t).unwrap();

        let mut wrong = bytes.clone();
        wrong[4] = 2;
        assert!(matches!(decode(&wrong), Err(DataError::UnsupportedVersion(2))));

        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(
            decode(short),
            Err(DataError::TruncatedPayload { expected: 32, actual: 31 })
        ));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(DataError::TruncatedPayload { .. })));
    }

    #[test]
    fn rejects_non_finite() {
        let t = Tensor::new(1, 2, vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(encode(&t), Err(DataError::NonFiniteValue { index: 1 })));

        let ok = Tensor::new(1, 2, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(&ok).unwrap();
        bytes[20..24].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(DataError::NonFiniteValue { index: 1 })));
    }

    #[test]
    fn file_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        let t = Tensor::new(1, 192, (0..192).map(|i| i as f32 * 0.5).collect()).unwrap();
        write_embedding(&t, &path).unwrap();
        assert_eq!(read_embedding(&path).unwrap(), t);
        assert_eq!(read_header(&path).unwrap(), EmbHeader { rows: 1, cols: 192 });
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            rows in 1usize..8,
            cols in 1usize..8,
            seed in proptest::collection::vec(any::<u32>(), 64),
        ) {
            // Arbitrary finite bit patterns, including subnormals and -0.0.
            let data: Vec<f32> = (0..rows * cols)
                .map(|i| {
                    let v = f32::from_bits(seed[i % seed.len()].rotate_left(i as u32));
                    if v.is_finite() { v } else { i as f32 }
                })
                .collect();
            let t = Tensor::new(rows, cols, data).unwrap();
            let bytes = encode(&t).unwrap();
            let back = decode(&bytes).unwrap();
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
