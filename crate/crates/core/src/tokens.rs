//! `.tok` token files: `TOK1` | u32 LE n, d | n*d f32 LE, row-major.
//!
//! Optional string ids live next to the file in a `.ids` sidecar, one per line.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, TokenMatrix};

const MAGIC: &[u8; 4] = b"TOK1";

pub fn serialize_tokens(tokens: &TokenMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + tokens.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tokens.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(tokens.cols() as u32).to_le_bytes());
    for &v in tokens.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn deserialize_tokens(bytes: &[u8]) -> Result<TokenMatrix> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::format("missing TOK1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (n, d) = (word(4), word(8));
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(12))
        .ok_or_else(|| Error::format("token header overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "token file is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(n, d, data)
}

pub fn ids_path(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

pub fn write_tokens(path: impl AsRef<Path>, tokens: &TokenMatrix, ids: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serialize_tokens(tokens)).map_err(|e| Error::from(e).at_path(path))?;
    if let Some(ids) = ids {
        if ids.len() != tokens.rows() {
            return Err(Error::mismatch(format!("{} ids for {} rows", ids.len(), tokens.rows())));
        }
        let sidecar = ids_path(path);
        let mut text = ids.join("\n");
        text.push('\n');
        fs::write(&sidecar, text).map_err(|e| Error::from(e).at_path(&sidecar))?;
    }
    Ok(())
}

/// Read a token file and its sidecar ids when present.
pub fn read_tokens(path: impl AsRef<Path>) -> Result<(TokenMatrix, Option<Vec<String>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    let tokens = deserialize_tokens(&bytes).map_err(|e| e.at_path(path))?;
    let sidecar = ids_path(path);
    let ids = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::from(e).at_path(&sidecar))?;
        let ids: Vec<String> = text.lines().map(str::to_owned).collect();
        if ids.len() != tokens.rows() {
            return Err(Error::format(format!("{} ids for {} rows", ids.len(), tokens.rows())).at_path(&sidecar));
        }
        Some(ids)
    } else {
        None
    };
    Ok((tokens, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bytes() {
        let m = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 * 0.25 - 0.5);
        let back = deserialize_tokens(&serialize_tokens(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_truncated() {
        let m = Matrix::from_fn(2, 2, |_, _| 1.0);
        let bytes = serialize_tokens(&m);
        assert!(matches!(deserialize_tokens(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(deserialize_tokens(b"TOK2xxxxxxxx"), Err(Error::Format(_))));
    }
}
