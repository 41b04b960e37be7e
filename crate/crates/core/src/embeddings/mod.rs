//! Token embeddings: the matrices that feed pooling and density estimation,
//! plus the ways of producing them.

mod file;
mod remote;
mod toy;

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::{Array1, Array2, Axis};

use crate::error::{AenError, Result};

pub use file::{read_embeddings, read_embeddings_from, write_embeddings, write_embeddings_to, EMBEDDING_MAGIC};
pub use remote::{fetch_remote_embeddings, RemoteEncoder};
pub use toy::{tokenize, ToyEncoder, DEFAULT_VOCAB_SIZE, TOY_INIT_STD};

/// An `M × N` matrix of token vectors with an attention mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    matrix: Array2<f64>,
    mask: Vec<bool>,
}

impl TokenEmbeddings {
    pub fn new(matrix: Array2<f64>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != matrix.nrows() {
            return Err(AenError::DimensionMismatch {
                expected: matrix.nrows(),
                found: mask.len(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(AenError::domain("token embeddings must be finite"));
        }
        Ok(TokenEmbeddings { matrix, mask })
    }

    /// Every row attended. Panics on non-finite input.
    pub fn all_attended(matrix: Array2<f64>) -> Self {
        let mask = vec![true; matrix.nrows()];
        TokenEmbeddings::new(matrix, mask).expect("finite token matrix")
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Embedding dimension `N`.
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Token count `M`, attended or not.
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn attended_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Indices of attended rows, in order.
    pub fn attended_indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    /// The attended rows as a new matrix.
    pub fn attended_rows(&self) -> Array2<f64> {
        self.matrix.select(Axis(0), &self.attended_indices())
    }
}

/// A sentence-level vector produced by mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector(pub Array1<f64>);

impl PooledVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("pooled vectors are contiguous")
    }
}

/// Per-dimension mean over the attended rows.
pub fn mean_pool(tokens: &TokenEmbeddings) -> Result<PooledVector> {
    let mut sum = Array1::<f64>::zeros(tokens.dim());
    let mut count = 0usize;
    for (row, _) in tokens.matrix.rows().into_iter().zip(&tokens.mask).filter(|(_, &m)| m) {
        sum += &row;
        count += 1;
    }
    if count == 0 {
        return Err(AenError::domain("mean pooling needs at least one attended token"));
    }
    Ok(PooledVector(sum / count as f64))
}

/// Token embeddings plus, for trainable encoders, the parameter row each token reads.
#[derive(Debug, Clone)]
pub struct EncodedText {
    pub tokens: TokenEmbeddings,
    pub table_rows: Option<Vec<usize>>,
}

/// Anything that can turn text into token embeddings.
pub trait TextEncoder {
    fn encode(&self, text: &str) -> Result<EncodedText>;
    fn dim(&self) -> usize;
}

/// Embeddings computed elsewhere and looked up by exact text.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    table: HashMap<String, TokenEmbeddings>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize) -> Self {
        PrecomputedEmbeddings { dim, table: HashMap::new() }
    }

    pub fn insert(&mut self, text: impl Into<String>, tokens: TokenEmbeddings) -> Result<()> {
        if tokens.dim() != self.dim {
            return Err(AenError::DimensionMismatch {
                expected: self.dim,
                found: tokens.dim(),
            });
        }
        self.table.insert(text.into(), tokens);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Fetches every distinct text from a remote service in one request.
    pub fn fetch_all<'a>(
        remote: &RemoteEncoder,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut unique: Vec<&str> = texts.into_iter().collect();
        unique.sort_unstable();
        unique.dedup();
        let fetched = remote.fetch(&unique)?;
        let dim = fetched.first().map(|t| t.dim()).unwrap_or(0);
        let mut out = PrecomputedEmbeddings::new(dim);
        for (text, tokens) in unique.into_iter().zip(fetched) {
            out.insert(text, tokens)?;
        }
        Ok(out)
    }
}

impl TextEncoder for PrecomputedEmbeddings {
    fn encode(&self, text: &str) -> Result<EncodedText> {
        let tokens = self
            .table
            .get(text)
            .cloned()
            .ok_or_else(|| AenError::domain(format!("no precomputed embeddings for {text:?}")))?;
        Ok(EncodedText { tokens, table_rows: None })
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// File name under which [`EmbeddingDirectory`] stores a text's embeddings:
/// the FNV-1a 64 hash of its UTF-8 bytes as 16 lowercase hex digits, `.aene`.
pub fn embedding_file_name(text: &str) -> String {
    format!("{:016x}.aene", crate::rng::fnv1a64(text.as_bytes()))
}

/// A directory of embedding files, one per text, named by [`embedding_file_name`].
#[derive(Debug, Clone)]
pub struct EmbeddingDirectory {
    root: PathBuf,
    dim: usize,
}

impl EmbeddingDirectory {
    pub fn new(root: impl Into<PathBuf>, dim: usize) -> Self {
        EmbeddingDirectory { root: root.into(), dim }
    }

    /// Opens a directory, taking the dimension from the first file found.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for entry in std::fs::read_dir(&root)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "aene") {
                let dim = read_embeddings(&path)?.dim();
                return Ok(EmbeddingDirectory { root, dim });
            }
        }
        Err(AenError::format(format!("no .aene files in {}", root.display())))
    }

    pub fn path_for(&self, text: &str) -> PathBuf {
        self.root.join(embedding_file_name(text))
    }

    pub fn store(&self, text: &str, tokens: &TokenEmbeddings) -> Result<()> {
        write_embeddings(self.path_for(text), tokens)
    }
}

impl TextEncoder for EmbeddingDirectory {
    fn encode(&self, text: &str) -> Result<EncodedText> {
        let tokens = read_embeddings(self.path_for(text))?;
        if tokens.dim() != self.dim {
            return Err(AenError::DimensionMismatch {
                expected: self.dim,
                found: tokens.dim(),
            });
        }
        Ok(EncodedText { tokens, table_rows: None })
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn pooling_examples() {
        let t = TokenEmbeddings::all_attended(array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(mean_pool(&t).unwrap().0, array![2.0, 3.0]);

        let t = TokenEmbeddings::new(array![[1.0, 2.0], [9.0, 9.0]], vec![true, false]).unwrap();
        assert_eq!(mean_pool(&t).unwrap().0, array![1.0, 2.0]);

        let t = TokenEmbeddings::new(array![[0.5, -2.0], [0.5, -2.0], [0.5, -2.0]], vec![false, true, true]).unwrap();
        assert_eq!(mean_pool(&t).unwrap().0, array![0.5, -2.0]);
    }

    #[test]
    fn all_masked_pooling_fails() {
        let t = TokenEmbeddings::new(array![[1.0, 2.0]], vec![false]).unwrap();
        assert!(matches!(mean_pool(&t), Err(AenError::Domain(_))));
    }

    #[test]
    fn constructor_checks() {
        assert!(TokenEmbeddings::new(array![[1.0]], vec![true, true]).is_err());
        assert!(TokenEmbeddings::new(array![[f64::NAN]], vec![true]).is_err());
    }

    #[test]
    fn precomputed_lookup() {
        let mut store = PrecomputedEmbeddings::new(2);
        store.insert("hi", TokenEmbeddings::all_attended(array![[1.0, 2.0]])).unwrap();
        assert!(store.insert("bad", TokenEmbeddings::all_attended(array![[1.0]])).is_err());
        assert_eq!(store.encode("hi").unwrap().tokens.len(), 1);
        assert!(store.encode("missing").is_err());
    }

    #[test]
    fn directory_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = EmbeddingDirectory::new(dir.path(), 3);
        let t = TokenEmbeddings::all_attended(array![[1.0, 2.0, 3.0], [0.5, 0.25, -1.0]]);
        store.store("some text", &t).unwrap();
        let opened = EmbeddingDirectory::open(dir.path()).unwrap();
        assert_eq!(opened.dim(), 3);
        assert_eq!(opened.encode("some text").unwrap().tokens, t);
        assert!(opened.encode("other text").is_err());
    }

    proptest! {
        #[test]
        fn pooling_is_permutation_invariant_and_linear(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 1..10),
            c in -3.0f64..3.0,
        ) {
            let m = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let a = Array2::from_shape_vec((m, 4), flat).unwrap();
            let pooled = mean_pool(&TokenEmbeddings::all_attended(a.clone())).unwrap();

            let reversed = a.slice(ndarray::s![..;-1, ..]).to_owned();
            let pr = mean_pool(&TokenEmbeddings::all_attended(reversed)).unwrap();
            for (x, y) in pooled.0.iter().zip(pr.0.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }

            let scaled = mean_pool(&TokenEmbeddings::all_attended(&a * c)).unwrap();
            for (x, y) in pooled.0.iter().zip(scaled.0.iter()) {
                prop_assert!((x * c - y).abs() < 1e-12);
            }
        }
    }
}
