use std::fs;
use std::path::Path;

use crate::error::{LabError, Result};
use crate::linalg::Matrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"CLX1";
const HEADER_LEN: usize = 12;

/// Encodes `m` as magic, little-endian `u32` rows and cols, then row-major
/// little-endian `f64` entries.
pub fn encode_matrix(m: &Matrix) -> std::result::Result<Vec<u8>, String> {
    let rows = u32::try_from(m.rows()).map_err(|_| format!("{} rows exceed u32", m.rows()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| format!("{} cols exceed u32", m.cols()))?;
    if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
        let c = m.cols().max(1);
        return Err(format!("non-finite entry at ({}, {})", pos / c, pos % c));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Inverse of [`encode_matrix`]; the payload must match the header exactly.
pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != MATRIX_MAGIC {
        return Err(format!("bad magic {:?}", &bytes[..4]));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| format!("{rows}x{cols} payload overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(format!(
            "truncated payload: header says {rows}x{cols} ({expected} bytes), found {}",
            payload.len()
        ));
    }
    if payload.len() > expected {
        return Err(format!("{} trailing bytes after payload", payload.len() - expected));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data).map_err(|e| e.to_string())
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(m).map_err(|reason| LabError::MatrixFile {
        path: path.to_path_buf(),
        reason,
    })?;
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode_matrix(&bytes).map_err(|reason| LabError::MatrixFile {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // 2x2 [[1, -2], [0.5, 3]] written byte by byte.
    const GOLDEN: [u8; 44] = [
        b'C', b'L', b'X', b'1', //
        2, 0, 0, 0, 2, 0, 0, 0, //
        0, 0, 0, 0, 0, 0, 0xf0, 0x3f, //
        0, 0, 0, 0, 0, 0, 0x00, 0xc0, //
        0, 0, 0, 0, 0, 0, 0xe0, 0x3f, //
        0, 0, 0, 0, 0, 0, 0x08, 0x40,
    ];

    fn golden_matrix() -> Matrix {
        Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap()
    }

    #[test]
    fn golden_bytes() {
        assert_eq!(encode_matrix(&golden_matrix()).unwrap(), GOLDEN);
        assert_eq!(decode_matrix(&GOLDEN).unwrap(), golden_matrix());
    }

    #[test]
    fn identity_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eye.clx");
        write_matrix(&p, &Matrix::identity(2)).unwrap();
        let first = fs::read(&p).unwrap();
        let m = read_matrix(&p).unwrap();
        assert_eq!(m, Matrix::identity(2));
        write_matrix(&p, &m).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_matrix(&Matrix::identity(3)).unwrap();
        bytes.truncate(HEADER_LEN + 8 * 8);
        let err = decode_matrix(&bytes).unwrap_err();
        assert!(err.contains("truncated payload"), "{err}");
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut bytes = GOLDEN.to_vec();
        bytes[3] = b'2';
        assert!(decode_matrix(&bytes).unwrap_err().contains("magic"));
        let mut bytes = GOLDEN.to_vec();
        bytes.push(0);
        assert!(decode_matrix(&bytes).unwrap_err().contains("trailing"));
        assert!(decode_matrix(&bytes[..7]).is_err());
    }

    #[test]
    fn non_finite_entries_rejected() {
        let mut bytes = GOLDEN.to_vec();
        bytes[12..20].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_matrix(&bytes).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.clx");
        let nan = Matrix::from_raw(1, 1, vec![f64::NAN]);
        assert!(matches!(write_matrix(&p, &nan), Err(LabError::MatrixFile { .. })));
        assert!(!p.exists());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_matrix("/nonexistent/x.clx").unwrap_err().to_string();
        assert!(err.contains("/nonexistent/x.clx"), "{err}");
    }
}
