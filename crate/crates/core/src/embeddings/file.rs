//! The `AENE` token-embedding file.
//!
//! ```text
//! magic        4 bytes  "AENE"
//! version      u16 LE   1
//! dim          u32 LE
//! token_count  u32 LE
//! values       token_count × dim f32 LE, row-major
//! mask         token_count bytes, 0 or 1
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::TokenEmbeddings;
use crate::error::{AenError, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"AENE";
const VERSION: u16 = 1;

pub fn write_embeddings_to<W: Write>(mut w: W, tokens: &TokenEmbeddings) -> Result<()> {
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tokens.dim() as u32).to_le_bytes())?;
    w.write_all(&(tokens.len() as u32).to_le_bytes())?;
    for &v in tokens.matrix().iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    let mask: Vec<u8> = tokens.mask().iter().map(|&m| m as u8).collect();
    w.write_all(&mask)?;
    Ok(())
}

pub fn write_embeddings(path: impl AsRef<Path>, tokens: &TokenEmbeddings) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings_to(&mut w, tokens)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => AenError::format(format!("truncated embedding file while reading {what}")),
        _ => AenError::Io(e),
    })
}

pub fn read_embeddings_from<R: Read>(mut r: R) -> Result<TokenEmbeddings> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic, "magic")?;
    if &magic != EMBEDDING_MAGIC {
        return Err(AenError::format(format!("bad embedding magic {magic:?}")));
    }
    let mut b2 = [0u8; 2];
    read_exact_or_truncated(&mut r, &mut b2, "version")?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(AenError::format(format!("unsupported embedding file version {version}")));
    }
    let mut b4 = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut b4, "dim")?;
    let dim = u32::from_le_bytes(b4) as usize;
    read_exact_or_truncated(&mut r, &mut b4, "token count")?;
    let count = u32::from_le_bytes(b4) as usize;
    if count == 0 {
        return Err(AenError::format("embedding file holds zero tokens"));
    }
    if dim == 0 {
        return Err(AenError::format("embedding file has zero dimension"));
    }
    let n_values = count
        .checked_mul(dim)
        .ok_or_else(|| AenError::format("embedding shape overflows"))?;
    let mut raw = vec![0u8; n_values * 4];
    read_exact_or_truncated(&mut r, &mut raw, "values")?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut mask_raw = vec![0u8; count];
    read_exact_or_truncated(&mut r, &mut mask_raw, "mask")?;
    let mask = mask_raw
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(AenError::format(format!("mask byte must be 0 or 1, got {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = Array2::from_shape_vec((count, dim), values).map_err(|e| AenError::format(e.to_string()))?;
    TokenEmbeddings::new(matrix, mask)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<TokenEmbeddings> {
    read_embeddings_from(BufReader::new(File::open(path)?))
}
