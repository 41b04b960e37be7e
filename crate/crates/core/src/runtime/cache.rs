//! Condition caches and the `AENC` file.
//!
//! ```text
//! magic        4 bytes  "AENC"
//! version      u16 LE   1
//! fingerprint  u64 LE
//! threshold    f64 LE
//! count        u32 LE
//! entries      count × { id_len u16 LE, id UTF-8,
//!                        text_len u32 LE, text UTF-8,
//!                        dim u32 LE, dim × f32 LE }
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array1;

use crate::data::preprocess_condition;
use crate::embeddings::{mean_pool, PooledVector, TextEncoder};
use crate::error::{AenError, Result};
use crate::model::{FeatureMode, KdeSide, ModelBundle};
use crate::rng::fnv1a64;

pub const CACHE_MAGIC: &[u8; 4] = b"AENC";
const VERSION: u16 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CachedCondition {
    /// FNV-1a of the original text, 16 hex digits.
    pub id: String,
    pub original_text: String,
    pub pooled: PooledVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCache {
    pub entries: Vec<CachedCondition>,
    pub model_fingerprint: u64,
    /// Decision threshold on the positive-class probability.
    pub threshold: f64,
}

pub fn condition_id(text: &str) -> String {
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

impl ConditionCache {
    pub fn empty(model_fingerprint: u64) -> Self {
        ConditionCache {
            entries: Vec::new(),
            model_fingerprint,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        self.threshold = threshold;
        Ok(self)
    }

    /// Refuses a bundle other than the one the cache was built with.
    pub fn check_model(&self, bundle: &ModelBundle) -> Result<()> {
        let found = bundle.fingerprint();
        if found != self.model_fingerprint {
            return Err(AenError::FingerprintMismatch {
                expected: self.model_fingerprint,
                found,
            });
        }
        if let Some(e) = self.entries.first() {
            if e.pooled.dim() != bundle.arch.embedding_dim {
                return Err(AenError::DimensionMismatch {
                    expected: bundle.arch.embedding_dim,
                    found: e.pooled.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        if self.model_fingerprint == 0 {
            return Err(AenError::format("cache has no model fingerprint"));
        }
        let mut ids = HashSet::new();
        let dim = self.entries.first().map(|e| e.pooled.dim());
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(AenError::format(format!("duplicate cache id {}", e.id)));
            }
            if Some(e.pooled.dim()) != dim {
                return Err(AenError::format("cache entries have mixed dimensions"));
            }
        }
        Ok(())
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(AenError::domain(format!("threshold must lie in (0, 1), got {t}")));
    }
    Ok(())
}

/// Preprocesses, encodes and mean-pools each condition once.
///
/// Only models whose KDE sits on the statement (or that use concatenated
/// pooled features) reduce the condition branch to a pooled vector, so a
/// condition-side KDE is refused. Repeated texts collapse to one entry.
pub fn build_condition_cache(
    bundle: &ModelBundle,
    conditions: &[String],
    external: Option<&dyn TextEncoder>,
) -> Result<ConditionCache> {
    if bundle.arch.features == FeatureMode::Kde && bundle.arch.kde_side == KdeSide::Condition {
        return Err(AenError::Unsupported(
            "condition caching needs the KDE on the statement side; this model builds it on the condition".into(),
        ));
    }
    if conditions.is_empty() {
        return Err(AenError::domain("no conditions to cache"));
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, text) in conditions.iter().enumerate() {
        if text.trim().is_empty() {
            return Err(AenError::domain(format!("condition {i} is empty")));
        }
        let id = condition_id(text);
        if !seen.insert(id.clone()) {
            continue;
        }
        let prepared =
            preprocess_condition(text).map_err(|e| AenError::domain(format!("condition {i}: {e}")))?;
        let encoded = bundle.condition_encoder.encode(&prepared, external)?;
        entries.push(CachedCondition {
            id,
            original_text: text.clone(),
            pooled: mean_pool(&encoded.tokens)?,
        });
    }
    Ok(ConditionCache {
        entries,
        model_fingerprint: bundle.fingerprint(),
        threshold: DEFAULT_THRESHOLD,
    })
}

pub fn write_cache_to<W: Write>(mut w: W, cache: &ConditionCache) -> Result<()> {
    cache.validate()?;
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&cache.model_fingerprint.to_le_bytes())?;
    w.write_all(&cache.threshold.to_le_bytes())?;
    w.write_all(&(cache.entries.len() as u32).to_le_bytes())?;
    for e in &cache.entries {
        let id = e.id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| AenError::format("cache id longer than 65535 bytes"))?;
        w.write_all(&id_len.to_le_bytes())?;
        w.write_all(id)?;
        let text = e.original_text.as_bytes();
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text)?;
        w.write_all(&(e.pooled.dim() as u32).to_le_bytes())?;
        for &v in e.pooled.0.iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_cache(path: impl AsRef<Path>, cache: &ConditionCache) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cache_to(&mut w, cache)?;
    w.flush()?;
    Ok(())
}

fn take<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => AenError::format(format!("truncated cache file while reading {what}")),
        _ => AenError::Io(e),
    })?;
    Ok(buf)
}

fn take_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let b = take(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn utf8(bytes: Vec<u8>, what: &str) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| AenError::format(format!("{what} is not valid UTF-8")))
}

pub fn read_cache_from<R: Read>(mut r: R) -> Result<ConditionCache> {
    if take(&mut r, 4, "magic")? != CACHE_MAGIC {
        return Err(AenError::format("bad cache magic"));
    }
    let v = take(&mut r, 2, "version")?;
    let version = u16::from_le_bytes([v[0], v[1]]);
    if version != VERSION {
        return Err(AenError::format(format!("unsupported cache file version {version}")));
    }
    let fp = u64::from_le_bytes(take(&mut r, 8, "fingerprint")?.try_into().expect("8 bytes"));
    let threshold = f64::from_le_bytes(take(&mut r, 8, "threshold")?.try_into().expect("8 bytes"));
    let count = take_u32(&mut r, "entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let what = format!("entry {i}");
        let l = take(&mut r, 2, &what)?;
        let id = utf8(take(&mut r, u16::from_le_bytes([l[0], l[1]]) as usize, &what)?, "cache id")?;
        let text_len = take_u32(&mut r, &what)? as usize;
        let original_text = utf8(take(&mut r, text_len, &what)?, "cache text")?;
        let dim = take_u32(&mut r, &what)? as usize;
        let raw = take(&mut r, dim * 4, &what)?;
        let pooled: Array1<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(AenError::format(format!("{what} holds non-finite values")));
        }
        entries.push(CachedCondition {
            id,
            original_text,
            pooled: PooledVector(pooled),
        });
    }
    let cache = ConditionCache {
        entries,
        model_fingerprint: fp,
        threshold,
    };
    cache.validate()?;
    Ok(cache)
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<ConditionCache> {
    read_cache_from(BufReader::new(File::open(path)?))
}

/// Reads a cache and refuses it unless it was built for `bundle`.
pub fn read_cache_for(path: impl AsRef<Path>, bundle: &ModelBundle) -> Result<ConditionCache> {
    let cache = read_cache(path)?;
    cache.check_model(bundle)?;
    Ok(cache)
}
