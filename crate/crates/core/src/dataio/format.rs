//! Snippet feature files.
//!
//! Layout (little-endian): magic `CPLF`, `u32` version = 1, `u32` n_raw,
//! `u32` d, then `n_raw * d` `f32` values in row-major order.

use std::path::Path;

use crate::diffcore::Matrix;
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"CPLF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
/// Largest element count accepted from a header (`n_raw * d`).
pub const MAX_ELEMENTS: u64 = i32::MAX as u64;

pub fn encode_features(features: &Matrix<f32>) -> Result<Vec<u8>> {
    if !features.is_finite() {
        return Err(Error::Validation(
            "feature matrix has non-finite entries".into(),
        ));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + features.data().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Matrix<f32>, FormatError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic {
                expected: MAGIC,
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = word(4);
    if version != VERSION {
        return Err(FormatError::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let (n, d) = (word(8) as u64, word(12) as u64);
    let count = n * d;
    if count > MAX_ELEMENTS {
        return Err(FormatError::DimensionOverflow(format!(
            "{n} x {d} exceeds {MAX_ELEMENTS} elements"
        )));
    }
    if count == 0 {
        return Err(FormatError::Malformed(format!(
            "empty feature matrix {n} x {d}"
        )));
    }
    let expected = (count * 4) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::Malformed(format!(
            "{} trailing bytes",
            payload.len() - expected
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::Malformed("non-finite feature value".into()));
    }
    Ok(Matrix::from_vec(n as usize, d as usize, data))
}

pub fn write_features(path: &Path, features: &Matrix<f32>) -> Result<()> {
    let bytes = encode_features(features)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Matrix<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|e| Error::format(path, e))
}

/// One integer category id per line.
pub fn write_gt(path: &Path, gt: &[u32]) -> Result<()> {
    let mut s = String::with_capacity(gt.len() * 2);
    for g in gt {
        s.push_str(&g.to_string());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_gt(path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<u32>().map_err(|e| {
                Error::format(path, FormatError::Malformed(format!("line {}: {e}", i + 1)))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: &[u8; 4], version: u32, n: u32, d: u32) -> Vec<u8> {
        let mut b = magic.to_vec();
        b.extend_from_slice(&version.to_le_bytes());
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&d.to_le_bytes());
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Matrix::from_vec(
            2,
            3,
            vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0e-38, 1e30, -7.0],
        );
        let bytes = encode_features(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        let back = decode_features(&bytes).unwrap();
        let bits = |m: &Matrix<f32>| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back.shape(), (2, 3));
    }

    #[test]
    fn distinct_errors() {
        let mut bad = header(b"XXXX", 1, 1, 1);
        bad.extend_from_slice(&[0; 4]);
        assert!(matches!(
            decode_features(&bad),
            Err(FormatError::BadMagic { .. })
        ));

        let mut v2 = header(b"CPLF", 2, 1, 1);
        v2.extend_from_slice(&[0; 4]);
        assert_eq!(
            decode_features(&v2),
            Err(FormatError::VersionMismatch {
                expected: 1,
                found: 2
            })
        );

        let mut short = header(b"CPLF", 1, 3, 2);
        short.extend_from_slice(&[0; 20]);
        assert_eq!(
            decode_features(&short),
            Err(FormatError::Truncated {
                expected: 24,
                found: 20
            })
        );

        let huge = header(b"CPLF", 1, 1 << 20, 1 << 12);
        assert!(matches!(
            decode_features(&huge),
            Err(FormatError::DimensionOverflow(_))
        ));
    }

    #[test]
    fn rejects_non_finite_writes() {
        let m = Matrix::from_vec(1, 2, vec![1.0, f32::NAN]);
        assert!(encode_features(&m).is_err());
    }
}
