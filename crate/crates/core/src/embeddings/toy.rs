use ndarray::Array2;

use super::{EncodedText, TextEncoder, TokenEmbeddings};
use crate::error::{AenError, Result};
use crate::rng::{fnv1a64, SplitMix64};

pub const DEFAULT_VOCAB_SIZE: usize = 4096;
pub const TOY_INIT_STD: f64 = 1e-3;

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// A hashed bag-of-words embedding table.
///
/// Each lowercased whitespace token is mapped to row `fnv1a64(token) % vocab_size`
/// of a `vocab_size × dim` table. The table starts as `N(0, TOY_INIT_STD²)` draws from
/// [`SplitMix64`] seeded with `seed`, filled row-major, and is trained in place.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    seed: u64,
    table: Array2<f64>,
}

impl ToyEncoder {
    pub fn new(seed: u64, vocab_size: usize, dim: usize) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(AenError::domain("toy encoder needs positive vocab_size and dim"));
        }
        let mut rng = SplitMix64::new(seed);
        let table = Array2::from_shape_simple_fn((vocab_size, dim), || TOY_INIT_STD * rng.next_normal());
        Ok(ToyEncoder { seed, table })
    }

    /// Rebuilds an encoder around trained parameters.
    pub fn from_table(seed: u64, table: Array2<f64>) -> Result<Self> {
        if table.nrows() == 0 || table.ncols() == 0 {
            return Err(AenError::domain("toy encoder table must be non-empty"));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(AenError::domain("toy encoder table must be finite"));
        }
        Ok(ToyEncoder { seed, table })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut Array2<f64> {
        &mut self.table
    }

    pub fn row_of(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.vocab_size() as u64) as usize
    }
}

impl TextEncoder for ToyEncoder {
    fn encode(&self, text: &str) -> Result<EncodedText> {
        let words = tokenize(text);
        if words.is_empty() {
            return Err(AenError::domain("cannot encode empty or whitespace-only text"));
        }
        let rows: Vec<usize> = words.iter().map(|w| self.row_of(w)).collect();
        let matrix = self.table.select(ndarray::Axis(0), &rows);
        let mask = vec![true; rows.len()];
        Ok(EncodedText {
            tokens: TokenEmbeddings::new(matrix, mask)?,
            table_rows: Some(rows),
        })
    }

    fn dim(&self) -> usize {
        self.table.ncols()
    }
}
